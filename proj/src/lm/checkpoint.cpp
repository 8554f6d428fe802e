#include "lm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace lm {

using numkit::Tensor;

namespace {

constexpr char kMagic[6] = {'L', 'L', 'L', 'B', '1', '\0'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_bundle(const std::string& path, const nlohmann::json& meta,
                 const std::vector<NamedMatrix>& matrices) {
  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& m : matrices) {
    manifest.push_back({{"name", m.name},
                        {"shape", m.tensor.shape()},
                        {"offset", offset}});
    offset += static_cast<uint64_t>(m.tensor.size()) * sizeof(float);
  }
  nlohmann::json header = {{"meta", meta}, {"matrices", manifest}};
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& m : matrices) {
    std::vector<float> buf(m.tensor.data().begin(), m.tensor.data().end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

Bundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open: " + path);
  char magic[6];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad magic in " + path);
  const uint32_t hlen = read_u32(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw CheckpointError("truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  Bundle b;
  b.meta = header.at("meta");
  for (const auto& entry : header.at("matrices")) {
    numkit::Shape shape = entry.at("shape").get<numkit::Shape>();
    const int64_t n = numkit::shape_numel(shape);
    std::vector<float> buf(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw CheckpointError("truncated payload in " + path);
    std::vector<double> vals(buf.begin(), buf.end());
    b.matrices.push_back({entry.at("name").get<std::string>(),
                          Tensor::from_vector(shape, std::move(vals))});
  }
  return b;
}

nlohmann::json vocab_to_json(const Vocab& vocab) {
  const char* mode = vocab.mode() == VocabMode::Byte         ? "byte"
                     : vocab.mode() == VocabMode::CharAscii  ? "char_ascii"
                                                             : "char_corpus";
  return {{"mode", mode}, {"chars", std::vector<int>(vocab.chars().begin(), vocab.chars().end())}};
}

Vocab vocab_from_json(const nlohmann::json& j) {
  const std::string mode = j.at("mode").get<std::string>();
  std::vector<int> ints = j.at("chars").get<std::vector<int>>();
  std::vector<unsigned char> chars(ints.begin(), ints.end());
  VocabMode m = mode == "byte"        ? VocabMode::Byte
                : mode == "char_ascii" ? VocabMode::CharAscii
                                       : VocabMode::CharCorpus;
  return Vocab::from_parts(m, std::move(chars));
}

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab) {
  const auto& c = params.cfg;
  nlohmann::json meta = {
      {"kind", "model"},
      {"config",
       {{"vocab_size", c.vocab_size},
        {"hidden_dim", c.hidden_dim},
        {"num_layers", c.num_layers},
        {"num_heads", c.num_heads},
        {"context_len", c.context_len},
        {"ff_mult", c.ff_mult},
        {"tie_embedding", c.tie_embedding},
        {"embedding_scale", c.embedding_scale}}},
      {"vocab", vocab_to_json(vocab)},
      {"frozen", std::vector<std::string>(params.frozen_groups.begin(), params.frozen_groups.end())}};
  std::vector<NamedMatrix> mats;
  params.visit([&](const std::string& name, const std::string&, const Tensor& t) {
    mats.push_back({name, t.detach()});
  });
  save_bundle(path, meta, mats);
}

Checkpoint load_checkpoint(const std::string& path) {
  Bundle b = load_bundle(path);
  if (b.meta.value("kind", "") != "model")
    throw CheckpointError("not a model checkpoint: " + path);
  const auto& jc = b.meta.at("config");
  ModelConfig cfg;
  cfg.vocab_size = jc.at("vocab_size");
  cfg.hidden_dim = jc.at("hidden_dim");
  cfg.num_layers = jc.at("num_layers");
  cfg.num_heads = jc.at("num_heads");
  cfg.context_len = jc.at("context_len");
  cfg.ff_mult = jc.at("ff_mult");
  cfg.tie_embedding = jc.at("tie_embedding");
  cfg.embedding_scale = jc.value("embedding_scale", 1.0);

  ModelParams params = ModelParams::init(cfg, 0);
  std::vector<std::pair<std::string, Tensor>> loaded;
  for (auto& m : b.matrices) loaded.emplace_back(m.name, m.tensor);
  params.visit([&](const std::string& name, const std::string&, Tensor& t) {
    for (auto& [n, src] : loaded) {
      if (n == name) {
        if (src.shape() != t.shape())
          throw CheckpointError("shape mismatch for " + name + " in " + path);
        t.data() = src.data();
        return;
      }
    }
    throw CheckpointError("missing matrix " + name + " in " + path);
  });
  for (const auto& g : b.meta.at("frozen")) params.set_group_frozen(g.get<std::string>(), true);
  return Checkpoint{std::move(params), vocab_from_json(b.meta.at("vocab"))};
}

}  // namespace lm
