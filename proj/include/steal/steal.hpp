#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "numkit/linalg.hpp"
#include "numkit/tensor.hpp"
#include "oracle/oracle.hpp"

namespace steal {

struct StealError : std::runtime_error {
  explicit StealError(const std::string& msg) : std::runtime_error(msg) {}
};
struct SamplingError : StealError {
  explicit SamplingError(const std::string& msg) : StealError(msg) {}
};
struct EstimationError : StealError {
  explicit EstimationError(const std::string& msg) : StealError(msg) {}
};
struct InsufficientQueriesError : StealError {
  explicit InsufficientQueriesError(const std::string& msg) : StealError(msg) {}
};

// Column-stacked oracle responses. mask marks observed entries; with a
// full-logit oracle every entry is observed.
struct LogitMatrix {
  numkit::Tensor values;            // vocab x n
  std::vector<unsigned char> mask;  // vocab x n, 1 = observed
  int n = 0;
  std::vector<std::vector<int>> prompts;

  bool fully_observed() const;
  int observed_in_column(int j) const;
};

struct PartialCollectionError : StealError {
  PartialCollectionError(std::string msg, LogitMatrix partial)
      : StealError(std::move(msg)), partial(std::move(partial)) {}
  LogitMatrix partial;
};

struct StolenProjection {
  numkit::Tensor w_hat;             // vocab x d_hat, columns scaled by sigma
  int d_hat = 0;
  std::vector<double> spectrum;     // full singular values of Q
  std::vector<double> gap_scores;   // log-gap per boundary, see estimate_hidden_dim
};

enum class PromptSource { UniformRandom, CorpusSnippets };

// n distinct prompts, deterministic per seed. prompt_len 0 picks
// min(12, context_len). Corpus snippets slice random windows.
std::vector<std::vector<int>> sample_prompts(int n, int context_len, int vocab_size,
                                             uint64_t seed, PromptSource source,
                                             const std::vector<int>* corpus = nullptr,
                                             int prompt_len = 0);

// One oracle query per prompt, columns in prompt order. Budget exhaustion
// mid-run raises PartialCollectionError carrying the columns gathered.
LogitMatrix collect_logit_matrix(oracle::Oracle& oracle,
                                 const std::vector<std::vector<int>>& prompts);

struct DimEstimate {
  int d_hat = 0;                    // 1-based component count
  std::vector<double> gap_scores;   // score[j] = log(sigma_j / sigma_j+1), 0-based boundary
};

// argmax of consecutive log gaps, smallest index on ties. Boundaries whose
// upper value sits below noise_floor_rel * sigma_0 are zeroed out so the
// trailing numerical-zero plateau cannot win; values are clamped to 1e-300
// before the ratio.
DimEstimate estimate_hidden_dim(const std::vector<double>& spectrum,
                                double noise_floor_rel = 1e-10);

// W_hat = U[:, :d_hat] * diag(S[:d_hat]). Requires a fully observed matrix
// (run complete_masked first) and n > d_hat.
StolenProjection recover_projection(const LogitMatrix& q, int d_hat);
// Same, estimating d_hat from the spectrum.
StolenProjection recover_projection_auto(const LogitMatrix& q,
                                         double noise_floor_rel = 1e-10);

struct ResidualReport {
  double residual = 0.0;    // min_G ||w_hat G - w_true||_F / ||w_true||_F
  bool rank_deficit = false;
};

// Simulation-mode check of W_hat ~ W G.
ResidualReport subspace_residual(const numkit::Tensor& w_hat, const numkit::Tensor& w_true);

}  // namespace steal
