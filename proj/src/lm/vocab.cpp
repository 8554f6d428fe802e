#include "lm/vocab.hpp"

#include <algorithm>
#include <set>

namespace lm {

Vocab::Vocab(VocabMode mode, std::vector<unsigned char> chars)
    : mode_(mode), chars_(std::move(chars)) {
  byte_to_id_.fill(kUnk);
  for (size_t i = 0; i < chars_.size(); ++i)
    byte_to_id_[chars_[i]] = kNumSpecials + static_cast<int>(i);
}

Vocab Vocab::bytes() {
  std::vector<unsigned char> chars(256);
  for (int i = 0; i < 256; ++i) chars[i] = static_cast<unsigned char>(i);
  return Vocab(VocabMode::Byte, std::move(chars));
}

Vocab Vocab::printable_ascii() {
  std::vector<unsigned char> chars;
  chars.push_back('\n');
  for (int c = 0x20; c <= 0x7e; ++c) chars.push_back(static_cast<unsigned char>(c));
  return Vocab(VocabMode::CharAscii, std::move(chars));
}

Vocab Vocab::from_corpus(const std::string& text) {
  std::set<unsigned char> distinct(text.begin(), text.end());
  return Vocab(VocabMode::CharCorpus, std::vector<unsigned char>(distinct.begin(), distinct.end()));
}

Vocab Vocab::from_parts(VocabMode mode, std::vector<unsigned char> chars) {
  return Vocab(mode, std::move(chars));
}

std::vector<int> Vocab::encode(const std::string& text) const {
  if (text.empty()) throw TokenizeError("tokenize: empty text");
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(byte_to_id_[c]);
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kBos) continue;
    if (id == kUnk || id < 0 || id >= size()) {
      out.push_back('?');
      continue;
    }
    out.push_back(static_cast<char>(chars_[static_cast<size_t>(id - kNumSpecials)]));
  }
  return out;
}

}  // namespace lm
