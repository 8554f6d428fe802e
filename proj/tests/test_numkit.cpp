#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "numkit/linalg.hpp"
#include "numkit/ops.hpp"
#include "numkit/tensor.hpp"

using namespace numkit;

namespace {

// Naive triple-loop reference, kept independent of detail::mm.
Tensor matmul_reference(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

double reconstruction_residual(const Tensor& m, const SvdFactors& f) {
  const int r = f.s.dim(0);
  Tensor us = f.u.detach();
  for (int i = 0; i < us.dim(0); ++i)
    for (int j = 0; j < r; ++j) us.at(i, j) *= f.s.at(j);
  Tensor rec = matmul(us, f.vt);
  double num = 0.0;
  for (int64_t i = 0; i < m.size(); ++i) {
    const double d = rec.data()[i] - m.data()[i];
    num += d * d;
  }
  return std::sqrt(num) / std::max(frobenius_norm(m), 1.0);
}

double max_orthonormality_defect(const Tensor& q, bool columns) {
  // columns: check Q^T Q = I, else Q Q^T = I
  const int rows = q.dim(0), cols = q.dim(1);
  const int n = columns ? cols : rows;
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      if (columns)
        for (int k = 0; k < rows; ++k) dot += q.at(k, i) * q.at(k, j);
      else
        for (int k = 0; k < cols; ++k) dot += q.at(i, k) * q.at(j, k);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity, reference oracle, zeros") {
  Tensor i2 = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_vector({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(i2, b);
  CHECK(c.data() == b.data());

  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor prod = matmul(a, b);
  CHECK(prod.at(0, 0) == doctest::Approx(19).epsilon(1e-15));
  CHECK(prod.at(0, 1) == doctest::Approx(22).epsilon(1e-15));
  CHECK(prod.at(1, 0) == doctest::Approx(43).epsilon(1e-15));
  CHECK(prod.at(1, 1) == doctest::Approx(50).epsilon(1e-15));

  std::mt19937_64 rng(7);
  Tensor z = Tensor::zeros({3, 4});
  Tensor any = Tensor::randn({4, 2}, rng, 1.0);
  Tensor zz = matmul(z, any);
  for (double v : zz.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul agrees with triple-loop oracle on random shapes") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> dim(1, 9);
    const int m = dim(rng), k = dim(rng), n = dim(rng);
    Tensor a = Tensor::randn({m, k}, rng, 1.0);
    Tensor b = Tensor::randn({k, n}, rng, 1.0);
    Tensor ref = matmul_reference(a, b);
    CHECK(testutil::max_abs_diff(matmul(a, b).data(), ref.data()) < 1e-12);

    // matmul_nt against the same oracle through an explicit transpose
    Tensor bt = Tensor::zeros({n, k});
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) bt.at(j, i) = b.at(i, j);
    CHECK(testutil::max_abs_diff(matmul_nt(a, bt).data(), ref.data()) < 1e-12);
  }
}

TEST_CASE("softmax values and stability") {
  Tensor z = Tensor::from_vector({2}, {0, 0});
  Tensor y = softmax(z);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-14));

  Tensor big = softmax(Tensor::from_vector({2}, {1000, 0}));
  CHECK(big.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.at(1) < 1e-300);
  CHECK(big.all_finite());

  Tensor logs = softmax(Tensor::from_vector({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(logs.at(0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(logs.at(1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(logs.at(2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = Tensor::randn({4, 7}, rng, 3.0);
    Tensor y = softmax(z);
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j) {
        CHECK(y.at(i, j) >= 0.0);
        s += y.at(i, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    const double c = shift(rng);
    Tensor zs = z.detach();
    for (auto& v : zs.data()) v += c;
    CHECK(testutil::max_abs_diff(softmax(zs).data(), y.data()) <= 1e-12);
  }
}

TEST_CASE("svd identity and analytic rank-1 oracle") {
  Tensor i3 = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  SvdFactors f = svd_thin(i3);
  for (int i = 0; i < 3; ++i) CHECK(f.s.at(i) == doctest::Approx(1.0).epsilon(1e-12));

  // outer(u, v) with |u| = 2, |v| = 3 -> sigma = [6, 0, ...]
  std::vector<double> u = {2.0, 0.0, 0.0, 0.0};       // norm 2
  std::vector<double> v = {0.0, 3.0, 0.0};            // norm 3
  Tensor outer = Tensor::zeros({4, 3});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) outer.at(i, j) = u[i] * v[j];
  SvdFactors g = svd_thin(outer);
  CHECK(g.s.at(0) == doctest::Approx(6.0).epsilon(1e-12));
  for (int i = 1; i < g.s.dim(0); ++i) CHECK(std::abs(g.s.at(i)) <= 1e-12);
  CHECK(reconstruction_residual(outer, g) <= 1e-8);
  CHECK(max_orthonormality_defect(g.u, true) <= 1e-8);
  CHECK(max_orthonormality_defect(g.vt, false) <= 1e-8);
}

TEST_CASE("svd reconstruction and orthonormality on random matrices") {
  std::mt19937_64 rng(5);
  for (auto [r, c] : std::vector<std::pair<int, int>>{{50, 20}, {20, 50}, {17, 17}, {1, 6}, {6, 1}}) {
    Tensor m = Tensor::randn({r, c}, rng, 2.0);
    SvdFactors f = svd_thin(m);
    const int k = std::min(r, c);
    CHECK(f.s.dim(0) == k);
    for (int i = 0; i + 1 < k; ++i) CHECK(f.s.at(i) >= f.s.at(i + 1));
    CHECK(f.s.at(k - 1) >= 0.0);
    CHECK(reconstruction_residual(m, f) <= 1e-8);
    CHECK(max_orthonormality_defect(f.u, true) <= 1e-8);
    CHECK(max_orthonormality_defect(f.vt, false) <= 1e-8);
  }
}

TEST_CASE("svd singular values invariant under row permutation") {
  std::mt19937_64 rng(17);
  Tensor m = Tensor::randn({12, 5}, rng, 1.0);
  SvdFactors f = svd_thin(m);

  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor mp = Tensor::zeros({12, 5});
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 5; ++j) mp.at(i, j) = m.at(perm[i], j);
  SvdFactors fp = svd_thin(mp);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(f.s.at(i) - fp.s.at(i)) <= 1e-8);
}

TEST_CASE("svd rejects non-finite input and degenerate shapes") {
  Tensor bad = Tensor::from_vector({2, 2}, {1, 2, std::nan(""), 4});
  CHECK_THROWS_AS(svd_thin(bad), NumericError);
  Tensor zeros = Tensor::zeros({4, 3});
  SvdFactors f = svd_thin(zeros);
  for (int i = 0; i < 3; ++i) CHECK(f.s.at(i) == 0.0);
  CHECK(max_orthonormality_defect(f.u, true) <= 1e-8);
}

TEST_CASE("lstsq identity, construct-then-solve oracle, zero matrix") {
  std::mt19937_64 rng(23);
  Tensor i4 = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) i4.at(i, i) = 1.0;
  Tensor b = Tensor::randn({4, 3}, rng, 1.0);
  LstsqResult r = lstsq(i4, b);
  CHECK(!r.degenerate);
  CHECK(testutil::max_abs_diff(r.x.data(), b.data()) <= 1e-12);

  // a = W*G known, b = W-like target: solving a X = b recovers X with tiny residual
  Tensor a = Tensor::randn({30, 6}, rng, 1.0);
  Tensor x0 = Tensor::randn({6, 4}, rng, 1.0);
  Tensor rhs = matmul(a, x0);
  LstsqResult sol = lstsq(a, rhs);
  CHECK(!sol.degenerate);
  CHECK(testutil::max_abs_diff(sol.x.data(), x0.data()) <= 1e-8);

  Tensor z = Tensor::zeros({5, 2});
  Tensor bz = Tensor::randn({5, 3}, rng, 1.0);
  LstsqResult rz = lstsq(z, bz);
  CHECK(rz.degenerate);
  CHECK(rz.rank == 0);
  for (double v : rz.x.data()) CHECK(v == 0.0);
}

TEST_CASE("lstsq residual never exceeds the zero-solution residual") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> md(2, 12), pd(1, 6), qd(1, 4);
    const int m = md(rng);
    const int p = std::min(pd(rng), m);
    Tensor a = Tensor::randn({m, p}, rng, 1.0);
    if (trial % 3 == 0) {
      // make a rank-deficient: copy column 0 into the last column
      for (int i = 0; i < m; ++i) a.at(i, p - 1) = a.at(i, 0);
    }
    Tensor b = Tensor::randn({m, qd(rng)}, rng, 1.0);
    LstsqResult r = lstsq(a, b);
    Tensor fit = matmul(a, r.x);
    double res = 0.0, zero_res = 0.0;
    for (int64_t i = 0; i < b.size(); ++i) {
      res += (fit.data()[i] - b.data()[i]) * (fit.data()[i] - b.data()[i]);
      zero_res += b.data()[i] * b.data()[i];
    }
    CHECK(res <= zero_res + 1e-12);
  }
}

TEST_CASE("backward on linear and quadratic forms") {
  Tensor x = Tensor::from_vector({3}, {1, 2, 3}, true);
  Tensor loss = sum(x);
  loss.backward();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);

  Tensor x2 = Tensor::from_vector({3}, {1, 2, 3}, true);
  Tensor loss2 = sum(mul(x2, x2));
  loss2.backward();
  CHECK(x2.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x2.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(x2.grad()[2] == doctest::Approx(6.0).epsilon(1e-14));

  CHECK_THROWS_AS(x2.backward(), UsageError);  // non-scalar root
}

TEST_CASE("finite differences validate every op backward") {
  std::mt19937_64 rng(101);

  auto check = [&](const char* name,
                   std::function<Tensor(std::vector<Tensor>&)> fn,
                   std::vector<Tensor> leaves) {
    INFO(name);
    CHECK(testutil::fd_gradient_error(fn, leaves) <= 1e-4);
  };

  check("matmul", [](std::vector<Tensor>& v) { return sum(matmul(v[0], v[1])); },
        {Tensor::randn({3, 4}, rng, 1.0), Tensor::randn({4, 2}, rng, 1.0)});
  check("matmul_nt", [](std::vector<Tensor>& v) { return sum(matmul_nt(v[0], v[1])); },
        {Tensor::randn({3, 4}, rng, 1.0), Tensor::randn({5, 4}, rng, 1.0)});
  check("mul+add+sub+scale",
        [](std::vector<Tensor>& v) { return sum(scale(sub(mul(v[0], v[1]), add(v[0], v[1])), 0.7)); },
        {Tensor::randn({2, 5}, rng, 1.0), Tensor::randn({2, 5}, rng, 1.0)});
  check("softmax", [](std::vector<Tensor>& v) { return sum(mul(softmax(v[0]), v[1])); },
        {Tensor::randn({3, 6}, rng, 1.0), Tensor::randn({3, 6}, rng, 1.0).detach()});
  check("log_softmax", [](std::vector<Tensor>& v) { return sum(mul(log_softmax(v[0]), v[1])); },
        {Tensor::randn({3, 6}, rng, 1.0), Tensor::randn({3, 6}, rng, 1.0).detach()});
  check("causal_masked_softmax",
        [](std::vector<Tensor>& v) { return sum(mul(causal_masked_softmax(v[0]), v[1])); },
        {Tensor::randn({5, 5}, rng, 1.0), Tensor::randn({5, 5}, rng, 1.0).detach()});
  check("gelu", [](std::vector<Tensor>& v) { return sum(gelu(v[0])); },
        {Tensor::randn({4, 4}, rng, 1.5)});
  check("layer_norm",
        [](std::vector<Tensor>& v) { return sum(mul(layer_norm(v[0], v[1], v[2]), v[3])); },
        {Tensor::randn({4, 6}, rng, 1.0), Tensor::randn({6}, rng, 1.0),
         Tensor::randn({6}, rng, 1.0), Tensor::randn({4, 6}, rng, 1.0).detach()});
  check("gather_rows",
        [](std::vector<Tensor>& v) { return sum(gather_rows(v[0], {0, 2, 2, 1})); },
        {Tensor::randn({3, 4}, rng, 1.0)});
  check("slice+concat",
        [](std::vector<Tensor>& v) {
          Tensor left = slice_cols(v[0], 0, 2);
          Tensor right = slice_cols(v[0], 2, 5);
          return sum(mul(concat_cols({right, left}), v[1]));
        },
        {Tensor::randn({3, 5}, rng, 1.0), Tensor::randn({3, 5}, rng, 1.0).detach()});
  check("cross_entropy_mean",
        [](std::vector<Tensor>& v) { return cross_entropy_mean(v[0], {1, 0, 3}); },
        {Tensor::randn({3, 4}, rng, 1.0)});
  check("mean", [](std::vector<Tensor>& v) { return mean(mul(v[0], v[0])); },
        {Tensor::randn({2, 7}, rng, 1.0)});
}

TEST_CASE("finite differences on composed random graphs") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(900 + seed);
    std::vector<Tensor> leaves = {Tensor::randn({4, 4}, rng, 0.8), Tensor::randn({4, 4}, rng, 0.8),
                                  Tensor::randn({4}, rng, 0.5), Tensor::randn({4}, rng, 0.5)};
    auto fn = [](std::vector<Tensor>& v) {
      Tensor h = gelu(matmul(v[0], v[1]));
      Tensor n = layer_norm(h, v[2], v[3]);
      Tensor p = softmax(n);
      return mean(mul(p, h));
    };
    CHECK(testutil::fd_gradient_error(fn, leaves) <= 1e-4);
  }
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  Tensor x = Tensor::from_vector({2}, {3, 5}, true);
  Tensor y = add(x, x);  // dy/dx = 2
  Tensor loss = sum(mul(y, y));  // d/dx sum((2x)^2) = 8x
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(24.0).epsilon(1e-13));
  CHECK(x.grad()[1] == doctest::Approx(40.0).epsilon(1e-13));
}

TEST_CASE("solve_spd solves small systems") {
  std::mt19937_64 rng(41);
  const int n = 6;
  Tensor g = Tensor::randn({n, n}, rng, 1.0);
  // a = g g^T + I is SPD
  std::vector<double> a(n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = (i == j) ? 1.0 : 0.0;
      for (int k = 0; k < n; ++k) s += g.at(i, k) * g.at(j, k);
      a[i * n + j] = s;
    }
  std::vector<double> x0 = {1, -2, 3, 0.5, -0.25, 2};
  std::vector<double> b(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b[i] += a[i * n + j] * x0[j];
  auto x = solve_spd(a, b, n);
  for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(x0[i]).epsilon(1e-9));
}
