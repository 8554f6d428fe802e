#include "oracle/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "common/hash.hpp"

namespace oracle {

std::vector<TopKEntry> topk_entries(const std::vector<double>& logits, int k) {
  std::vector<TopKEntry> all(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    all[i] = {static_cast<int>(i), logits[i]};
  std::sort(all.begin(), all.end(), [](const TopKEntry& a, const TopKEntry& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.token_id < b.token_id;
  });
  const size_t keep = (k == kFullLogits) ? all.size()
                                         : std::min<size_t>(static_cast<size_t>(k), all.size());
  all.resize(keep);
  return all;
}

LocalOracle::LocalOracle(lm::ModelParams teacher, OracleConfig cfg)
    : teacher_(std::move(teacher)), cfg_(cfg) {
  if (cfg_.k != kFullLogits && (cfg_.k < 1 || cfg_.k > teacher_.cfg.vocab_size))
    throw ProtocolError("oracle config: k out of range");
  now_ = [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
  bucket_tokens_ = cfg_.rate_limit;  // bucket starts full
  bucket_last_ = 0.0;                // lazily initialized on first call
}

void LocalOracle::set_stage(Stage s) {
  std::lock_guard<std::mutex> lock(mu_);
  stage_ = s;
}

LedgerSnapshot LocalOracle::ledger() const {
  std::lock_guard<std::mutex> lock(mu_);
  return ledger_;
}

void LocalOracle::set_clock(std::function<double()> now_sec) {
  std::lock_guard<std::mutex> lock(mu_);
  now_ = std::move(now_sec);
  bucket_last_ = 0.0;
}

std::vector<double> LocalOracle::shadow_full_logits(const std::vector<int>& prompt) const {
  numkit::NoGradGuard ng;
  numkit::Tensor logits = lm::forward_logits(teacher_, prompt);
  const int n = logits.dim(0), v = logits.dim(1);
  const double* row = logits.data().data() + static_cast<size_t>(n - 1) * v;
  return std::vector<double>(row, row + v);
}

std::vector<double> LocalOracle::degraded_last_logits(const std::vector<int>& prompt) const {
  std::vector<double> row = shadow_full_logits(prompt);
  switch (cfg_.degradation.kind) {
    case Degradation::Kind::None:
      break;
    case Degradation::Kind::Round: {
      const double p = std::pow(10.0, cfg_.degradation.decimals);
      for (auto& x : row) x = std::round(x * p) / p;
      break;
    }
    case Degradation::Kind::GaussianNoise: {
      if (cfg_.degradation.sigma == 0.0) break;  // bit-identical to the clean path
      // Noise depends on (seed, prompt) only, so responses are stable
      // under any interleaving of concurrent callers.
      uint64_t h = common::fnv1a(prompt, cfg_.degradation.noise_seed ^ 0x9e3779b97f4a7c15ull);
      std::mt19937_64 rng(h);
      std::normal_distribution<double> noise(0.0, cfg_.degradation.sigma);
      for (auto& x : row) x += noise(rng);
      break;
    }
  }
  return row;
}

TopKResponse LocalOracle::query_topk(const std::vector<int>& prompt) {
  std::lock_guard<std::mutex> lock(mu_);

  if (prompt.empty()) throw ProtocolError("empty prompt");
  if (static_cast<int>(prompt.size()) > teacher_.cfg.context_len)
    throw ProtocolError("prompt exceeds context length");
  for (int t : prompt)
    if (t < 0 || t >= teacher_.cfg.vocab_size) throw ProtocolError("token id out of range");

  if (ledger_.total >= cfg_.max_queries) throw BudgetExceeded(ledger_.total);

  if (cfg_.rate_limit > 0.0) {
    const double now = now_();
    if (bucket_last_ == 0.0) bucket_last_ = now;
    bucket_tokens_ = std::min(cfg_.rate_limit,
                              bucket_tokens_ + (now - bucket_last_) * cfg_.rate_limit);
    bucket_last_ = now;
    if (bucket_tokens_ < 1.0) throw RateLimited();
    bucket_tokens_ -= 1.0;
  }

  TopKResponse resp;
  resp.entries = topk_entries(degraded_last_logits(prompt), cfg_.k);
  ledger_.total += 1;
  (stage_ == Stage::Steal ? ledger_.steal : ledger_.distill) += 1;
  resp.queries_remaining = cfg_.max_queries - ledger_.total;
  return resp;
}

}  // namespace oracle
