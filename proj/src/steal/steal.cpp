#include "steal/steal.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace steal {

using numkit::Tensor;

bool LogitMatrix::fully_observed() const {
  for (unsigned char m : mask)
    if (!m) return false;
  return true;
}

int LogitMatrix::observed_in_column(int j) const {
  const int v = values.dim(0);
  int count = 0;
  for (int i = 0; i < v; ++i) count += mask[static_cast<size_t>(i) * n + j] ? 1 : 0;
  return count;
}

std::vector<std::vector<int>> sample_prompts(int n, int context_len, int vocab_size,
                                             uint64_t seed, PromptSource source,
                                             const std::vector<int>* corpus, int prompt_len) {
  if (n < 1) throw SamplingError("sample_prompts: n must be >= 1");
  if (prompt_len <= 0) prompt_len = std::min(12, context_len);
  if (prompt_len > context_len) throw SamplingError("sample_prompts: prompt_len > context_len");

  std::mt19937_64 rng(seed);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<size_t>(n));

  if (source == PromptSource::CorpusSnippets) {
    if (!corpus || static_cast<int>(corpus->size()) < prompt_len)
      throw SamplingError("sample_prompts: corpus too small for snippets");
    const size_t windows = corpus->size() - static_cast<size_t>(prompt_len) + 1;
    std::uniform_int_distribution<size_t> start(0, windows - 1);
    int64_t attempts = 0;
    const int64_t attempt_cap = 50ll * n + 1000;
    while (static_cast<int>(out.size()) < n) {
      if (++attempts > attempt_cap)
        throw SamplingError("sample_prompts: corpus cannot supply " + std::to_string(n) +
                            " distinct snippets");
      const size_t s0 = start(rng);
      std::vector<int> p(corpus->begin() + static_cast<int64_t>(s0),
                         corpus->begin() + static_cast<int64_t>(s0) + prompt_len);
      if (seen.insert(p).second) out.push_back(std::move(p));
    }
    return out;
  }

  std::uniform_int_distribution<int> tok(0, vocab_size - 1);
  int64_t attempts = 0;
  const int64_t attempt_cap = 50ll * n + 1000;
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > attempt_cap)
      throw SamplingError("sample_prompts: exhausted distinct-prompt capacity");
    std::vector<int> p(static_cast<size_t>(prompt_len));
    for (auto& t : p) t = tok(rng);
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

LogitMatrix collect_logit_matrix(oracle::Oracle& oracle,
                                 const std::vector<std::vector<int>>& prompts) {
  const int v = oracle.vocab_size();
  const int n = static_cast<int>(prompts.size());
  LogitMatrix q;
  q.values = Tensor::zeros({v, n});
  q.mask.assign(static_cast<size_t>(v) * n, 0);
  q.n = n;

  for (int j = 0; j < n; ++j) {
    oracle::TopKResponse resp;
    try {
      resp = oracle.query_topk(prompts[j]);
    } catch (const oracle::BudgetExceeded& e) {
      LogitMatrix partial;
      partial.n = j;
      partial.values = Tensor::zeros({v, std::max(j, 1)});
      partial.mask.assign(static_cast<size_t>(v) * std::max(j, 1), 0);
      for (int jj = 0; jj < j; ++jj) {
        for (int i = 0; i < v; ++i) {
          partial.values.at(i, jj) = q.values.at(i, jj);
          partial.mask[static_cast<size_t>(i) * std::max(j, 1) + jj] =
              q.mask[static_cast<size_t>(i) * n + jj];
        }
        partial.prompts.push_back(prompts[static_cast<size_t>(jj)]);
      }
      throw PartialCollectionError(
          "collect_logit_matrix: budget exhausted after " + std::to_string(j) + " of " +
              std::to_string(n) + " columns",
          std::move(partial));
    }
    for (const auto& e : resp.entries) {
      q.values.at(e.token_id, j) = e.logit;
      q.mask[static_cast<size_t>(e.token_id) * n + j] = 1;
    }
    q.prompts.push_back(prompts[static_cast<size_t>(j)]);
  }
  return q;
}

DimEstimate estimate_hidden_dim(const std::vector<double>& spectrum, double noise_floor_rel) {
  if (spectrum.size() < 2)
    throw EstimationError("estimate_hidden_dim: spectrum must have at least 2 values");
  constexpr double kClamp = 1e-300;
  const double floor = noise_floor_rel * spectrum[0];

  DimEstimate est;
  est.gap_scores.resize(spectrum.size() - 1);
  for (size_t j = 0; j + 1 < spectrum.size(); ++j) {
    if (spectrum[j] < floor) {
      est.gap_scores[j] = 0.0;  // junk-over-junk boundary, never wins
      continue;
    }
    const double hi = std::max(spectrum[j], kClamp);
    const double lo = std::max(spectrum[j + 1], kClamp);
    est.gap_scores[j] = std::log(hi / lo);
  }
  size_t best = 0;
  for (size_t j = 1; j < est.gap_scores.size(); ++j)
    if (est.gap_scores[j] > est.gap_scores[best]) best = j;
  est.d_hat = static_cast<int>(best) + 1;
  return est;
}

StolenProjection recover_projection(const LogitMatrix& q, int d_hat) {
  if (!q.fully_observed())
    throw StealError("recover_projection: masked input, run complete_masked first");
  if (d_hat < 1) throw StealError("recover_projection: d_hat must be >= 1");
  if (q.n <= d_hat)
    throw InsufficientQueriesError("recover_projection: need n > d_hat, got n=" +
                                   std::to_string(q.n) + " d_hat=" + std::to_string(d_hat));

  numkit::SvdFactors f = numkit::svd_thin(q.values);
  const int v = q.values.dim(0);
  const int r = f.s.dim(0);
  if (d_hat > r) throw StealError("recover_projection: d_hat exceeds spectrum length");

  StolenProjection sp;
  sp.d_hat = d_hat;
  sp.spectrum.assign(f.s.data().begin(), f.s.data().end());
  if (r >= 2) sp.gap_scores = estimate_hidden_dim(sp.spectrum).gap_scores;

  sp.w_hat = Tensor::zeros({v, d_hat});
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < d_hat; ++j) sp.w_hat.at(i, j) = f.u.at(i, j) * f.s.at(j);
  return sp;
}

StolenProjection recover_projection_auto(const LogitMatrix& q, double noise_floor_rel) {
  if (!q.fully_observed())
    throw StealError("recover_projection: masked input, run complete_masked first");
  numkit::SvdFactors f = numkit::svd_thin(q.values);
  std::vector<double> spectrum(f.s.data().begin(), f.s.data().end());
  DimEstimate est = estimate_hidden_dim(spectrum, noise_floor_rel);
  StolenProjection sp = recover_projection(q, est.d_hat);
  sp.gap_scores = est.gap_scores;
  return sp;
}

ResidualReport subspace_residual(const Tensor& w_hat, const Tensor& w_true) {
  if (w_hat.dim(0) != w_true.dim(0))
    throw StealError("subspace_residual: row counts differ");
  numkit::LstsqResult ls = numkit::lstsq(w_hat, w_true);
  Tensor fit = numkit::matmul(w_hat, ls.x);
  double num = 0.0;
  for (int64_t i = 0; i < fit.size(); ++i) {
    const double d = fit.data()[i] - w_true.data()[i];
    num += d * d;
  }
  const double denom = std::max(numkit::frobenius_norm(w_true), 1e-300);
  ResidualReport rep;
  rep.residual = std::sqrt(num) / denom;
  rep.rank_deficit = w_hat.dim(1) < w_true.dim(1) || ls.degenerate;
  return rep;
}

}  // namespace steal
