#include "steal/completion.hpp"

#include <cmath>
#include <random>

#include "numkit/linalg.hpp"

namespace steal {

using numkit::Tensor;

CompletionResult complete_masked(const LogitMatrix& q, int d_hat, const AlsConfig& cfg) {
  if (d_hat < 1) throw StealError("complete_masked: d_hat must be >= 1");
  const int v = q.values.dim(0), n = q.n;

  if (q.fully_observed()) {
    CompletionResult res;
    res.completed = q;
    res.diag.converged = true;
    return res;
  }

  for (int j = 0; j < n; ++j)
    if (q.observed_in_column(j) < d_hat + 1)
      throw StealError("complete_masked: column " + std::to_string(j) + " has fewer than " +
                       std::to_string(d_hat + 1) + " observed entries");

  const int r = d_hat;
  std::mt19937_64 rng(cfg.seed);
  Tensor a = Tensor::randn({v, r}, rng, 1.0 / std::sqrt(static_cast<double>(r)));
  Tensor b = Tensor::randn({n, r}, rng, 1.0 / std::sqrt(static_cast<double>(r)));

  auto observed = [&](int i, int j) { return q.mask[static_cast<size_t>(i) * n + j] != 0; };

  auto rmse = [&]() {
    double se = 0.0;
    int64_t count = 0;
    for (int i = 0; i < v; ++i)
      for (int j = 0; j < n; ++j) {
        if (!observed(i, j)) continue;
        double fit = 0.0;
        for (int t = 0; t < r; ++t) fit += a.at(i, t) * b.at(j, t);
        const double d = fit - q.values.at(i, j);
        se += d * d;
        ++count;
      }
    return std::sqrt(se / static_cast<double>(count));
  };

  AlsDiagnostics diag;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // columns: b_j from rows observed in column j
    for (int j = 0; j < n; ++j) {
      std::vector<double> gram(static_cast<size_t>(r) * r, 0.0);
      std::vector<double> rhs(static_cast<size_t>(r), 0.0);
      for (int i = 0; i < v; ++i) {
        if (!observed(i, j)) continue;
        for (int s = 0; s < r; ++s) {
          rhs[s] += a.at(i, s) * q.values.at(i, j);
          for (int t = 0; t <= s; ++t) gram[static_cast<size_t>(s) * r + t] += a.at(i, s) * a.at(i, t);
        }
      }
      for (int s = 0; s < r; ++s)
        for (int t = s + 1; t < r; ++t)
          gram[static_cast<size_t>(s) * r + t] = gram[static_cast<size_t>(t) * r + s];
      auto sol = numkit::solve_spd(gram, rhs, r, cfg.reg);
      for (int t = 0; t < r; ++t) b.at(j, t) = sol[static_cast<size_t>(t)];
    }
    // rows: a_i from columns observed in row i (rows may be empty under
    // top-k masks; those keep their previous factors)
    for (int i = 0; i < v; ++i) {
      std::vector<double> gram(static_cast<size_t>(r) * r, 0.0);
      std::vector<double> rhs(static_cast<size_t>(r), 0.0);
      int count = 0;
      for (int j = 0; j < n; ++j) {
        if (!observed(i, j)) continue;
        ++count;
        for (int s = 0; s < r; ++s) {
          rhs[s] += b.at(j, s) * q.values.at(i, j);
          for (int t = 0; t <= s; ++t) gram[static_cast<size_t>(s) * r + t] += b.at(j, s) * b.at(j, t);
        }
      }
      if (count == 0) continue;
      for (int s = 0; s < r; ++s)
        for (int t = s + 1; t < r; ++t)
          gram[static_cast<size_t>(s) * r + t] = gram[static_cast<size_t>(t) * r + s];
      auto sol = numkit::solve_spd(gram, rhs, r, cfg.reg);
      for (int t = 0; t < r; ++t) a.at(i, t) = sol[static_cast<size_t>(t)];
    }

    diag.iterations = iter + 1;
    diag.final_rmse = rmse();
    diag.rmse_trace.push_back(diag.final_rmse);
    if (diag.final_rmse <= cfg.tol) {
      diag.converged = true;
      break;
    }
  }

  if (!diag.converged && cfg.strict)
    throw CompletionError("complete_masked: no convergence after " +
                              std::to_string(diag.iterations) + " iterations, rmse " +
                              std::to_string(diag.final_rmse),
                          diag);

  CompletionResult res;
  res.completed.n = n;
  res.completed.prompts = q.prompts;
  res.completed.values = Tensor::zeros({v, n});
  res.completed.mask.assign(static_cast<size_t>(v) * n, 1);
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < n; ++j) {
      if (observed(i, j)) {
        res.completed.values.at(i, j) = q.values.at(i, j);
      } else {
        double fit = 0.0;
        for (int t = 0; t < r; ++t) fit += a.at(i, t) * b.at(j, t);
        res.completed.values.at(i, j) = fit;
      }
    }
  res.diag = std::move(diag);
  return res;
}

}  // namespace steal
