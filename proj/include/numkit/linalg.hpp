#pragma once

#include "numkit/tensor.hpp"

namespace numkit {

// Thin SVD m = U * diag(S) * Vt with r = min(rows, cols) components.
// U: rows x r with orthonormal columns, S: r non-increasing and >= 0,
// Vt: r x cols with orthonormal rows.
struct SvdFactors {
  Tensor u;
  Tensor s;
  Tensor vt;
};

struct SvdOptions {
  double tol = 1e-12;  // relative off-diagonal threshold
  int max_sweeps = 60;
};

// One-sided Jacobi applied on the smaller dimension.
SvdFactors svd_thin(const Tensor& m, const SvdOptions& opts = {});

struct LstsqResult {
  Tensor x;        // p x q
  int rank = 0;    // effective numerical rank of a
  bool degenerate = false;  // rank < p; x is the minimum-norm solution
};

// argmin_X ||a X - b||_F via SVD pseudo-inverse.
LstsqResult lstsq(const Tensor& a, const Tensor& b);

// Frobenius norm of a raw tensor.
double frobenius_norm(const Tensor& m);

// Solves (A + jitter*I) x = b for symmetric positive definite A (n x n),
// in-place Cholesky. Used by the ALS completion inner loops.
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n,
                              double jitter = 0.0);

}  // namespace numkit
