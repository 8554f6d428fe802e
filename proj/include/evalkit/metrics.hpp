#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lm/model.hpp"

namespace evalkit {

struct EvalError : std::runtime_error {
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};
struct BenchmarkError : EvalError {
  explicit BenchmarkError(const std::string& msg) : EvalError(msg) {}
};

// Corpus metrics walk non-overlapping windows of the model context.
// max_positions 0 means the whole corpus.

struct NllPpl {
  double nll = 0.0;        // mean nats per position
  double ppl = 0.0;        // exp(nll)
  double nll_total = 0.0;  // summed nats, feeds AIC
  int64_t positions = 0;
};
NllPpl nll_ppl(const lm::ModelParams& model, const std::vector<int>& corpus,
               int64_t max_positions = 0);

// Mean over positions of sum_v p_T (log p_T - log p_S), at temperature 1.
double kl_divergence(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const std::vector<int>& corpus, int64_t max_positions = 0);

struct HiddenCosine {
  double mean_cosine = 0.0;
  double fit_residual = 0.0;  // relative lstsq residual of the alignment map
  std::optional<double> identity_cosine;  // only when dimensions already agree
  int64_t calib_positions = 0;
  int64_t eval_positions = 0;
};

// Fits a least-squares map from student hidden space to teacher hidden
// space on a leading calibration split, then scores mean cosine on the
// rest. The map absorbs the invertible-factor ambiguity of a stolen
// projection.
HiddenCosine hidden_cosine(const lm::ModelParams& teacher, const lm::ModelParams& student,
                           const std::vector<int>& corpus, double calib_fraction = 0.5,
                           int64_t max_positions = 0);
// Metric core on raw position-by-dimension matrices.
HiddenCosine hidden_cosine_from_states(const numkit::Tensor& teacher_h,
                                       const numkit::Tensor& student_h, double calib_fraction);

struct ProbAlignment {
  std::vector<std::pair<double, double>> pairs;  // (p_teacher, p_student) at realized tokens
  double sigma = 0.0;     // stddev of (p_S - p_T)
  double sigma_sq = 0.0;  // its square, the variance
  bool clamped = false;   // sample_n exceeded available positions
};
ProbAlignment prob_alignment(const lm::ModelParams& teacher, const lm::ModelParams& student,
                             const std::vector<int>& corpus, int64_t sample_n,
                             int64_t max_positions = 0);

struct GenConfig {
  int total_tokens = 0;
  double temperature = 1.0;
  uint64_t seed = 0;
  int prompt_token = -1;  // -1 uses BOS (id 1)
};

// One seeded sampled stream of total_tokens tokens (prompt excluded).
std::vector<int> generate_stream(const lm::ModelParams& model, const GenConfig& cfg);

int64_t unique_ngrams(const std::vector<int>& stream, int n);
int64_t unique_ngrams(const lm::ModelParams& model, const GenConfig& cfg, int n);

double memorization_rate(const std::vector<int>& stream, const std::vector<int>& corpus, int n);
double memorization_rate(const lm::ModelParams& model, const GenConfig& cfg,
                         const std::vector<int>& corpus, int n);

// Fraction of prompt positions where the greedy next token differs.
double mem_match_err(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const std::vector<std::vector<int>>& prompts);

struct AicResult {
  double aic = 0.0;
  std::optional<double> aicc;  // defined only when n > k + 1
};
// nll_total is summed (not mean) nats; k is the parameter count; n the
// number of evaluated positions.
AicResult aic_aicc(double nll_total, int64_t k, int64_t n);

struct BenchConfig {
  std::vector<int> prompt;
  int gen_len = 32;
  int repetitions = 5;
};

struct SpeedSize {
  double speedup_pct = 0.0;         // (student tps / teacher tps - 1) * 100
  double size_reduction_pct = 0.0;  // (1 - student params / teacher params) * 100
  double teacher_tps = 0.0;
  double student_tps = 0.0;
  double spread_pct = 0.0;          // (max - min) / median over repetitions, student side
};
SpeedSize speed_size(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const BenchConfig& cfg);

double size_reduction_pct(int64_t teacher_params, int64_t student_params);

// delta_ppl = student ppl - teacher ppl; delta_params_millions = parameters
// saved relative to the teacher, in millions. Returns NaN when the divisor
// is exactly zero (undefined-ratio marker); near-zero divisors are served
// as-is, sensitivity included.
double ppl_per_param(double delta_ppl, double delta_params_millions);

}  // namespace evalkit
