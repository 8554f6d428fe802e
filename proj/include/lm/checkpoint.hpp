#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lm/model.hpp"
#include "lm/vocab.hpp"

namespace lm {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Container format: magic "LLLB1\0", u32 little-endian header length, UTF-8
// JSON header (meta + matrix manifest with shapes and byte offsets), then
// raw little-endian float32 payloads in manifest order.
struct NamedMatrix {
  std::string name;
  numkit::Tensor tensor;
};

void save_bundle(const std::string& path, const nlohmann::json& meta,
                 const std::vector<NamedMatrix>& matrices);

struct Bundle {
  nlohmann::json meta;
  std::vector<NamedMatrix> matrices;
};
Bundle load_bundle(const std::string& path);

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
};

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const nlohmann::json& j);

}  // namespace lm
