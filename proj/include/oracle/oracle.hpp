#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "lm/model.hpp"

namespace oracle {

struct BudgetExceeded : std::runtime_error {
  explicit BudgetExceeded(uint64_t total)
      : std::runtime_error("query budget exhausted after " + std::to_string(total) + " queries"),
        total(total) {}
  uint64_t total;
};
// Retriable: the token bucket will refill.
struct RateLimited : std::runtime_error {
  RateLimited() : std::runtime_error("rate limited") {}
};
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TransportError : std::runtime_error {
  explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Degradation {
  enum class Kind { None, Round, GaussianNoise };
  Kind kind = Kind::None;
  int decimals = 0;      // Round
  double sigma = 0.0;    // GaussianNoise
  uint64_t noise_seed = 0;
};

constexpr int kFullLogits = 0;

struct OracleConfig {
  int k = kFullLogits;        // 0 serves the full vector
  uint64_t max_queries = 10000;
  double rate_limit = 0.0;    // tokens per second; 0 = unlimited
  Degradation degradation;
};

struct TopKEntry {
  int token_id;
  double logit;
};

// Entries sorted by logit descending, ties by ascending token id.
struct TopKResponse {
  std::vector<TopKEntry> entries;
  uint64_t queries_remaining = 0;
};

enum class Stage { Steal, Distill };

struct LedgerSnapshot {
  uint64_t total = 0;
  uint64_t steal = 0;
  uint64_t distill = 0;
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  // Last-position logits of the wrapped model, degraded and truncated per
  // config. Exactly one ledger increment per successful response; failed
  // calls consume nothing.
  virtual TopKResponse query_topk(const std::vector<int>& prompt) = 0;
  virtual int vocab_size() const = 0;
  virtual int top_k() const = 0;  // kFullLogits for the full vector
};

class LocalOracle : public Oracle {
 public:
  LocalOracle(lm::ModelParams teacher, OracleConfig cfg);

  TopKResponse query_topk(const std::vector<int>& prompt) override;
  int vocab_size() const override { return teacher_.cfg.vocab_size; }
  int top_k() const override { return cfg_.k; }

  void set_stage(Stage s);
  LedgerSnapshot ledger() const;
  const OracleConfig& config() const { return cfg_; }

  // Test-mode shadow path: clean full logits, no budget, no degradation.
  std::vector<double> shadow_full_logits(const std::vector<int>& prompt) const;

  // Injectable clock (seconds) for rate-limit tests.
  void set_clock(std::function<double()> now_sec);

 private:
  std::vector<double> degraded_last_logits(const std::vector<int>& prompt) const;

  lm::ModelParams teacher_;  // shares weight storage with the caller's copy
  OracleConfig cfg_;
  mutable std::mutex mu_;
  LedgerSnapshot ledger_;
  Stage stage_ = Stage::Steal;
  std::function<double()> now_;
  double bucket_tokens_ = 0.0;
  double bucket_last_ = 0.0;
};

// Truncation shared by local and remote paths: the k largest entries,
// ordered by logit descending with id ascending on ties.
std::vector<TopKEntry> topk_entries(const std::vector<double>& logits, int k);

}  // namespace oracle
