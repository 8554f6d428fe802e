#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace lm {

struct TokenizeError : std::runtime_error {
  explicit TokenizeError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class VocabMode { Byte, CharAscii, CharCorpus };

// Reversible byte/char tokenizer. Two ids are reserved: UNK for characters
// outside the table (char modes only; byte mode covers everything) and BOS
// as the generation start token.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kNumSpecials = 2;

  static Vocab bytes();            // 256 + specials
  static Vocab printable_ascii();  // 95 printable + newline + specials
  static Vocab from_corpus(const std::string& text);  // distinct chars + specials

  VocabMode mode() const { return mode_; }
  int size() const { return kNumSpecials + static_cast<int>(chars_.size()); }

  // Throws TokenizeError on empty input.
  std::vector<int> encode(const std::string& text) const;
  // Specials decode to nothing (BOS) or '?' (UNK).
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<unsigned char>& chars() const { return chars_; }
  static Vocab from_parts(VocabMode mode, std::vector<unsigned char> chars);

 private:
  Vocab(VocabMode mode, std::vector<unsigned char> chars);

  VocabMode mode_;
  std::vector<unsigned char> chars_;    // id - kNumSpecials -> byte value
  std::array<int, 256> byte_to_id_{};   // byte value -> id, or kUnk
};

}  // namespace lm
