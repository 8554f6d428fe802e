#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "numkit/ops.hpp"
#include "numkit/tensor.hpp"

namespace lm {

using numkit::Tensor;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct LengthError : std::runtime_error {
  explicit LengthError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 0;
  int num_layers = 0;
  int num_heads = 1;
  int context_len = 0;
  int ff_mult = 4;
  bool tie_embedding = false;
  // Multiplies token-embedding rows on lookup. Students built around a
  // frozen stolen projection use this to bring the residual stream back to
  // unit scale without touching the frozen bytes.
  double embedding_scale = 1.0;

  void validate() const;
  int head_dim() const { return hidden_dim / num_heads; }
};

// Pre-norm decoder block: x += attn(ln1(x)); x += ff(ln2(x)).
// No biases on the projections; layer norms carry gain/bias.
struct BlockParams {
  Tensor wq, wk, wv, wo;   // hidden x hidden
  Tensor ff1;              // hidden x ff
  Tensor ff2;              // ff x hidden
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct ModelParams {
  ModelConfig cfg;
  Tensor token_embedding;  // vocab x hidden; aliases projection when tied
  Tensor positional;       // context x hidden
  std::vector<BlockParams> blocks;
  Tensor final_g, final_b;
  Tensor projection;       // vocab x hidden (the W of logits = h W^T)
  std::set<std::string> frozen_groups;

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  // Enumerates every stored parameter tensor exactly once (tied embedding
  // visits only "projection"). Group is the freeze-mask unit.
  void visit(const std::function<void(const std::string& name, const std::string& group,
                                      Tensor&)>& fn);
  void visit(const std::function<void(const std::string& name, const std::string& group,
                                      const Tensor&)>& fn) const;

  int64_t param_count() const;
  void set_group_frozen(const std::string& group, bool frozen);
  bool group_frozen(const std::string& group) const { return frozen_groups.count(group) > 0; }
};

// Final-block, post-final-norm activations, one row per position.
Tensor hidden_state(const ModelParams& p, const std::vector<int>& ids);
// Row i = W * hidden(i). Shares the hidden computation.
Tensor forward_logits(const ModelParams& p, const std::vector<int>& ids);
// Both at once (hidden first, logits = hidden W^T).
std::pair<Tensor, Tensor> forward_hidden_and_logits(const ModelParams& p,
                                                    const std::vector<int>& ids);

struct DecodeConfig {
  enum class Mode { Greedy, Temperature };
  Mode mode = Mode::Greedy;
  double temperature = 1.0;
};

// Appends up to max_new tokens; the context window slides once full.
// Greedy is deterministic; temperature mode is deterministic per seed.
std::vector<int> generate(const ModelParams& p, const std::vector<int>& prompt, int max_new,
                          const DecodeConfig& decode, uint64_t seed);

}  // namespace lm
