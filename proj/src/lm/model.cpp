#include "lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lm {

using namespace numkit;

void ModelConfig::validate() const {
  if (vocab_size <= 0 || hidden_dim <= 0 || num_layers < 0 || num_heads <= 0 ||
      context_len < 2 || ff_mult <= 0)
    throw ConfigError("model config: non-positive dimension");
  if (hidden_dim % num_heads != 0)
    throw ConfigError("model config: hidden_dim " + std::to_string(hidden_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  if (vocab_size <= hidden_dim)
    throw ConfigError("model config: vocab_size must exceed hidden_dim (V > d), got V=" +
                      std::to_string(vocab_size) + " d=" + std::to_string(hidden_dim));
}

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double std0 = 0.02;
  const int d = cfg.hidden_dim, v = cfg.vocab_size, ff = cfg.ff_mult * cfg.hidden_dim;

  ModelParams p;
  p.cfg = cfg;
  p.projection = Tensor::randn({v, d}, rng, std0, true);
  p.token_embedding = cfg.tie_embedding ? p.projection : Tensor::randn({v, d}, rng, std0, true);
  p.positional = Tensor::randn({cfg.context_len, d}, rng, std0, true);
  // residual-path outputs scaled down with depth, GPT-2 style
  const double resid_std = std0 / std::sqrt(std::max(1, 2 * cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    BlockParams b;
    b.wq = Tensor::randn({d, d}, rng, std0, true);
    b.wk = Tensor::randn({d, d}, rng, std0, true);
    b.wv = Tensor::randn({d, d}, rng, std0, true);
    b.wo = Tensor::randn({d, d}, rng, resid_std, true);
    b.ff1 = Tensor::randn({d, ff}, rng, std0, true);
    b.ff2 = Tensor::randn({ff, d}, rng, resid_std, true);
    b.ln1_g = Tensor::full({d}, 1.0, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0, true);
    b.ln2_b = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.final_g = Tensor::full({d}, 1.0, true);
  p.final_b = Tensor::zeros({d}, true);
  return p;
}

void ModelParams::visit(const std::function<void(const std::string&, const std::string&,
                                                 Tensor&)>& fn) {
  if (!cfg.tie_embedding) fn("token_embedding", "token_embedding", token_embedding);
  fn("positional_embedding", "positional_embedding", positional);
  for (size_t l = 0; l < blocks.size(); ++l) {
    const std::string g = "block" + std::to_string(l);
    auto& b = blocks[l];
    fn(g + ".wq", g, b.wq);
    fn(g + ".wk", g, b.wk);
    fn(g + ".wv", g, b.wv);
    fn(g + ".wo", g, b.wo);
    fn(g + ".ff1", g, b.ff1);
    fn(g + ".ff2", g, b.ff2);
    fn(g + ".ln1_g", g, b.ln1_g);
    fn(g + ".ln1_b", g, b.ln1_b);
    fn(g + ".ln2_g", g, b.ln2_g);
    fn(g + ".ln2_b", g, b.ln2_b);
  }
  fn("final_norm.gain", "final_norm", final_g);
  fn("final_norm.bias", "final_norm", final_b);
  fn("projection", "projection", projection);
}

void ModelParams::visit(const std::function<void(const std::string&, const std::string&,
                                                 const Tensor&)>& fn) const {
  const_cast<ModelParams*>(this)->visit(
      [&](const std::string& n, const std::string& g, Tensor& t) { fn(n, g, t); });
}

int64_t ModelParams::param_count() const {
  int64_t total = 0;
  visit([&](const std::string&, const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

void ModelParams::set_group_frozen(const std::string& group, bool frozen) {
  if (frozen)
    frozen_groups.insert(group);
  else
    frozen_groups.erase(group);
  visit([&](const std::string&, const std::string& g, Tensor& t) {
    if (g == group) t.set_requires_grad(!frozen);
  });
}

namespace {

void check_prompt(const ModelParams& p, const std::vector<int>& ids) {
  if (ids.empty()) throw LengthError("forward: empty token sequence");
  if (static_cast<int>(ids.size()) > p.cfg.context_len)
    throw LengthError("forward: sequence length " + std::to_string(ids.size()) +
                      " exceeds context_len " + std::to_string(p.cfg.context_len));
  for (int t : ids)
    if (t < 0 || t >= p.cfg.vocab_size)
      throw LengthError("forward: token id " + std::to_string(t) + " outside vocab");
}

Tensor attention(const ModelParams& p, const BlockParams& b, const Tensor& x) {
  const int heads = p.cfg.num_heads, hd = p.cfg.head_dim();
  Tensor q = matmul(x, b.wq);
  Tensor k = matmul(x, b.wk);
  Tensor v = matmul(x, b.wv);
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    Tensor probs = causal_masked_softmax(scores);
    ctx.push_back(matmul(probs, vh));
  }
  return matmul(heads == 1 ? ctx[0] : concat_cols(ctx), b.wo);
}

}  // namespace

Tensor hidden_state(const ModelParams& p, const std::vector<int>& ids) {
  check_prompt(p, ids);
  const int n = static_cast<int>(ids.size());
  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);

  Tensor tok = gather_rows(p.token_embedding, ids);
  if (p.cfg.embedding_scale != 1.0) tok = scale(tok, p.cfg.embedding_scale);
  Tensor x = add(tok, gather_rows(p.positional, positions));
  for (const auto& b : p.blocks) {
    x = add(x, attention(p, b, layer_norm(x, b.ln1_g, b.ln1_b)));
    x = add(x, matmul(gelu(matmul(layer_norm(x, b.ln2_g, b.ln2_b), b.ff1)), b.ff2));
  }
  return layer_norm(x, p.final_g, p.final_b);
}

Tensor forward_logits(const ModelParams& p, const std::vector<int>& ids) {
  return matmul_nt(hidden_state(p, ids), p.projection);
}

std::pair<Tensor, Tensor> forward_hidden_and_logits(const ModelParams& p,
                                                    const std::vector<int>& ids) {
  Tensor h = hidden_state(p, ids);
  return {h, matmul_nt(h, p.projection)};
}

std::vector<int> generate(const ModelParams& p, const std::vector<int>& prompt, int max_new,
                          const DecodeConfig& decode, uint64_t seed) {
  check_prompt(p, prompt);
  numkit::NoGradGuard ng;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<int> out = prompt;
  for (int step = 0; step < max_new; ++step) {
    const int start = std::max(0, static_cast<int>(out.size()) - p.cfg.context_len);
    std::vector<int> window(out.begin() + start, out.end());
    Tensor logits = forward_logits(p, window);
    const int n = logits.dim(0), v = logits.dim(1);
    const double* row = logits.data().data() + static_cast<size_t>(n - 1) * v;

    int next = 0;
    if (decode.mode == DecodeConfig::Mode::Greedy) {
      for (int j = 1; j < v; ++j)
        if (row[j] > row[next]) next = j;
    } else {
      const double t = std::max(decode.temperature, 1e-8);
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      std::vector<double> probs(v);
      double s = 0.0;
      for (int j = 0; j < v; ++j) {
        probs[j] = std::exp((row[j] - mx) / t);
        s += probs[j];
      }
      const double u = uni(rng) * s;
      double acc = 0.0;
      next = v - 1;
      for (int j = 0; j < v; ++j) {
        acc += probs[j];
        if (u < acc) {
          next = j;
          break;
        }
      }
    }
    out.push_back(next);
  }
  return out;
}

}  // namespace lm
