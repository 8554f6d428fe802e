#include "numkit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "numkit/ops.hpp"

namespace numkit {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// One-sided Jacobi on column vectors. cols[j] has length `rows`; pairs are
// rotated until every normalized inner product |a_i.a_j|/(|a_i||a_j|) falls
// below opts.tol or opts.max_sweeps is hit. v accumulates the right-hand
// rotations, stored as cols x cols columns (v[j] is right singular vector j).
void one_sided_jacobi(std::vector<std::vector<double>>& cols,
                      std::vector<std::vector<double>>& v, int rows,
                      const SvdOptions& opts) {
  const int c = static_cast<int>(cols.size());
  v.assign(c, std::vector<double>(c, 0.0));
  for (int j = 0; j < c; ++j) v[j][j] = 1.0;

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    int rotations = 0;
    for (int i = 0; i < c - 1; ++i) {
      for (int j = i + 1; j < c; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        const double* ai = cols[i].data();
        const double* aj = cols[j].data();
        for (int k = 0; k < rows; ++k) {
          alpha += ai[k] * ai[k];
          beta += aj[k] * aj[k];
          gamma += ai[k] * aj[k];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= opts.tol * std::sqrt(alpha * beta)) continue;
        ++rotations;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;

        double* wi = cols[i].data();
        double* wj = cols[j].data();
        for (int k = 0; k < rows; ++k) {
          const double x = wi[k], y = wj[k];
          wi[k] = cs * x - sn * y;
          wj[k] = sn * x + cs * y;
        }
        double* vi = v[i].data();
        double* vj = v[j].data();
        for (int k = 0; k < c; ++k) {
          const double x = vi[k], y = vj[k];
          vi[k] = cs * x - sn * y;
          vj[k] = sn * x + cs * y;
        }
      }
    }
    if (rotations == 0) break;
  }
}

// Fills column `target` of u (rows x nc, row-major) with a unit vector
// orthogonal to all columns in `done`, drawn from coordinate candidates.
void complete_basis_column(std::vector<double>& u, int rows, int nc,
                           const std::vector<int>& done, int target) {
  for (int cand = 0; cand < rows; ++cand) {
    std::vector<double> w(rows, 0.0);
    w[cand] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (int c : done) {
        double dot = 0.0;
        for (int k = 0; k < rows; ++k) dot += w[k] * u[static_cast<size_t>(k) * nc + c];
        for (int k = 0; k < rows; ++k) w[k] -= dot * u[static_cast<size_t>(k) * nc + c];
      }
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.5) {  // candidate is far enough from span(done)
      for (int k = 0; k < rows; ++k) u[static_cast<size_t>(k) * nc + target] = w[k] / norm;
      return;
    }
  }
  throw NumericError("svd: failed to complete orthonormal basis");
}

}  // namespace

SvdFactors svd_thin(const Tensor& m, const SvdOptions& opts) {
  if (m.ndim() != 2) throw ShapeError("svd_thin: 2-D input required");
  const int r0 = m.dim(0), c0 = m.dim(1);
  if (r0 < 1 || c0 < 1) throw ShapeError("svd_thin: empty matrix");
  if (!m.all_finite()) throw NumericError("svd_thin: non-finite input");

  const bool transposed = r0 < c0;
  const int rows = transposed ? c0 : r0;  // working matrix is rows x nc, rows >= nc
  const int nc = transposed ? r0 : c0;

  std::vector<std::vector<double>> cols(nc, std::vector<double>(rows));
  const auto& md = m.data();
  for (int j = 0; j < nc; ++j)
    for (int k = 0; k < rows; ++k)
      cols[j][k] = transposed ? md[static_cast<size_t>(j) * c0 + k]
                              : md[static_cast<size_t>(k) * c0 + j];

  std::vector<std::vector<double>> v;
  one_sided_jacobi(cols, v, rows, opts);

  std::vector<double> sigma(nc);
  for (int j = 0; j < nc; ++j) {
    double s = 0.0;
    for (double x : cols[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }

  std::vector<int> order(nc);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sigma[a] > sigma[b]; });

  const double smax = sigma[order[0]];
  const double cutoff = std::max(rows, nc) * kEps * smax;

  // uw: rows x nc, orthonormal columns; vw: nc x nc with rows = right vectors.
  std::vector<double> uw(static_cast<size_t>(rows) * nc, 0.0);
  std::vector<double> vw(static_cast<size_t>(nc) * nc, 0.0);
  std::vector<double> svals(nc);
  std::vector<int> filled;
  std::vector<int> pending;
  for (int k = 0; k < nc; ++k) {
    const int src = order[k];
    svals[k] = sigma[src];
    for (int t = 0; t < nc; ++t) vw[static_cast<size_t>(k) * nc + t] = v[src][t];
    if (sigma[src] > cutoff && sigma[src] > 0.0) {
      for (int t = 0; t < rows; ++t)
        uw[static_cast<size_t>(t) * nc + k] = cols[src][t] / sigma[src];
      filled.push_back(k);
    } else {
      pending.push_back(k);
    }
  }
  for (int k : pending) {
    complete_basis_column(uw, rows, nc, filled, k);
    filled.push_back(k);
  }

  SvdFactors f;
  f.s = Tensor::from_vector({nc}, std::move(svals));
  if (!transposed) {
    f.u = Tensor::from_vector({rows, nc}, std::move(uw));
    f.vt = Tensor::from_vector({nc, nc}, std::move(vw));
  } else {
    // m = (m^T)^T = (Ub S Vb^T)^T = Vb S Ub^T
    std::vector<double> u2(static_cast<size_t>(nc) * nc);
    for (int i = 0; i < nc; ++i)
      for (int j = 0; j < nc; ++j) u2[static_cast<size_t>(i) * nc + j] = vw[static_cast<size_t>(j) * nc + i];
    std::vector<double> vt2(static_cast<size_t>(nc) * rows);
    for (int i = 0; i < nc; ++i)
      for (int j = 0; j < rows; ++j) vt2[static_cast<size_t>(i) * rows + j] = uw[static_cast<size_t>(j) * nc + i];
    f.u = Tensor::from_vector({nc, nc}, std::move(u2));
    f.vt = Tensor::from_vector({nc, rows}, std::move(vt2));
  }
  return f;
}

LstsqResult lstsq(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("lstsq: 2-D inputs required");
  const int m = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != m)
    throw ShapeError("lstsq: row mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));

  SvdFactors f = svd_thin(a);
  const int r = f.s.dim(0);
  const double smax = f.s.at(0);
  const double cutoff = std::max(m, p) * kEps * smax;

  LstsqResult res;
  res.rank = 0;
  for (int i = 0; i < r; ++i)
    if (f.s.at(i) > cutoff && f.s.at(i) > 0.0) ++res.rank;
  res.degenerate = res.rank < p;

  // t = U^T b  (r x q)
  std::vector<double> t(static_cast<size_t>(r) * q, 0.0);
  detail::mm_tn(f.u.data().data(), b.data().data(), t.data(), r, m, q, false);
  for (int i = 0; i < r; ++i) {
    const double s = f.s.at(i);
    const double inv = (i < res.rank && s > 0.0) ? 1.0 / s : 0.0;
    for (int j = 0; j < q; ++j) t[static_cast<size_t>(i) * q + j] *= inv;
  }
  // x = V t = Vt^T t  (p x q)
  res.x = Tensor::zeros({p, q});
  detail::mm_tn(f.vt.data().data(), t.data(), res.x.data().data(), p, r, q, false);
  return res;
}

double frobenius_norm(const Tensor& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n, double jitter) {
  for (int i = 0; i < n; ++i) a[static_cast<size_t>(i) * n + i] += jitter;
  // in-place Cholesky a = L L^T
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      if (i == j) {
        if (s <= 0.0) throw NumericError("solve_spd: matrix not positive definite");
        a[static_cast<size_t>(i) * n + i] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
      }
    }
  }
  // forward: L y = b
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * n + i];
  }
  // back: L^T x = y
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * n + i];
  }
  return b;
}

}  // namespace numkit
