#pragma once

#include "steal/steal.hpp"

namespace steal {

struct AlsConfig {
  double reg = 1e-8;
  int max_iters = 500;
  double tol = 1e-9;      // observed-entry RMSE
  uint64_t seed = 0;
  // With strict set, non-convergence raises CompletionError. Structured
  // top-k masks run exploratory (strict off) and just report diagnostics.
  bool strict = true;
};

struct AlsDiagnostics {
  int iterations = 0;
  double final_rmse = 0.0;
  bool converged = false;
  std::vector<double> rmse_trace;
};

struct CompletionError : StealError {
  CompletionError(std::string msg, AlsDiagnostics diag)
      : StealError(std::move(msg)), diag(std::move(diag)) {}
  AlsDiagnostics diag;
};

struct CompletionResult {
  LogitMatrix completed;  // observed entries kept verbatim, holes filled rank-d_hat
  AlsDiagnostics diag;
};

// Alternating least squares at rank d_hat. Every column needs at least
// d_hat + 1 observed entries. A fully observed input is returned as-is.
CompletionResult complete_masked(const LogitMatrix& q, int d_hat, const AlsConfig& cfg = {});

}  // namespace steal
