#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "lm/model.hpp"
#include "numkit/linalg.hpp"
#include "oracle/oracle.hpp"
#include "steal/completion.hpp"
#include "steal/steal.hpp"

using namespace steal;
using numkit::Tensor;

namespace {

// Noiseless synthetic leak: Q = W * H with W in R^{v x d}, H in R^{d x n}.
LogitMatrix synthetic_leak(int v, int d, int n, uint64_t seed, Tensor* w_out = nullptr) {
  std::mt19937_64 rng(seed);
  Tensor w = Tensor::randn({v, d}, rng, 1.0);
  Tensor h = Tensor::randn({d, n}, rng, 1.0);
  LogitMatrix q;
  q.values = numkit::matmul(w, h);
  q.mask.assign(static_cast<size_t>(v) * n, 1);
  q.n = n;
  if (w_out) *w_out = w;
  return q;
}

lm::ModelParams tiny_teacher(int v = 32, int d = 6, uint64_t seed = 3) {
  lm::ModelConfig cfg;
  cfg.vocab_size = v;
  cfg.hidden_dim = d;
  cfg.num_layers = 1;
  cfg.num_heads = (d % 2 == 0) ? 2 : 1;
  cfg.context_len = 16;
  cfg.ff_mult = 2;
  return lm::ModelParams::init(cfg, seed);
}

}  // namespace

TEST_CASE("sample_prompts: determinism, distinctness, range, errors") {
  CHECK_THROWS_AS(sample_prompts(0, 16, 10, 1, PromptSource::UniformRandom), SamplingError);

  auto a = sample_prompts(50, 16, 10, 77, PromptSource::UniformRandom);
  auto b = sample_prompts(50, 16, 10, 77, PromptSource::UniformRandom);
  CHECK(a == b);

  std::set<std::vector<int>> distinct(a.begin(), a.end());
  CHECK(distinct.size() == a.size());
  for (const auto& p : a) {
    CHECK(p.size() == 12);
    for (int t : p) {
      CHECK(t >= 0);
      CHECK(t < 10);
    }
  }

  auto u = sample_prompts(1000, 16, 50, 5, PromptSource::UniformRandom);
  for (const auto& p : u)
    for (int t : p) CHECK((t >= 0 && t < 50));

  // corpus snippets: windows come from the corpus
  std::mt19937_64 crng(2);
  std::vector<int> corpus(100);
  for (auto& t : corpus) t = static_cast<int>(crng() % 7);
  auto snips = sample_prompts(10, 16, 7, 3, PromptSource::CorpusSnippets, &corpus, 5);
  for (const auto& p : snips) CHECK(p.size() == 5);

  // capacity exceeded: a 2-token corpus cannot give 5 distinct windows
  std::vector<int> tiny = {1, 2};
  CHECK_THROWS_AS(sample_prompts(5, 16, 7, 3, PromptSource::CorpusSnippets, &tiny, 2),
                  SamplingError);
}

TEST_CASE("collect_logit_matrix: single column equals a direct query") {
  lm::ModelParams teacher = tiny_teacher();
  oracle::OracleConfig ocfg;
  ocfg.max_queries = 10;
  oracle::LocalOracle o(teacher, ocfg);
  oracle::LocalOracle o2(teacher, ocfg);

  auto prompts = sample_prompts(1, 8, teacher.cfg.vocab_size, 5, PromptSource::UniformRandom);
  LogitMatrix q = collect_logit_matrix(o, prompts);
  CHECK(q.n == 1);
  CHECK(q.fully_observed());

  auto direct = o2.query_topk(prompts[0]);
  for (const auto& e : direct.entries) CHECK(q.values.at(e.token_id, 0) == e.logit);
}

TEST_CASE("collect_logit_matrix: numeric rank of a full-logit leak is at most d") {
  lm::ModelParams teacher = tiny_teacher(40, 5, 11);
  oracle::OracleConfig ocfg;
  ocfg.max_queries = 100;
  oracle::LocalOracle o(teacher, ocfg);
  auto prompts = sample_prompts(24, 8, 40, 6, PromptSource::UniformRandom);
  LogitMatrix q = collect_logit_matrix(o, prompts);

  numkit::SvdFactors f = numkit::svd_thin(q.values);
  int numeric_rank = 0;
  for (int i = 0; i < f.s.dim(0); ++i)
    if (f.s.at(i) > 1e-10 * f.s.at(0)) ++numeric_rank;
  CHECK(numeric_rank <= 5);
  CHECK(o.ledger().steal == 24);
}

TEST_CASE("collect_logit_matrix: budget exhaustion carries partial columns") {
  lm::ModelParams teacher = tiny_teacher();
  oracle::OracleConfig ocfg;
  ocfg.max_queries = 7;
  oracle::LocalOracle o(teacher, ocfg);
  auto prompts = sample_prompts(8, 8, teacher.cfg.vocab_size, 15, PromptSource::UniformRandom);
  try {
    collect_logit_matrix(o, prompts);
    FAIL("expected PartialCollectionError");
  } catch (const PartialCollectionError& e) {
    CHECK(e.partial.n == 7);
    CHECK(e.partial.prompts.size() == 7);
    CHECK(o.ledger().total == 7);
  }
}

TEST_CASE("estimate_hidden_dim: forced gap, synthetic construct, geometric tie") {
  auto est = estimate_hidden_dim({10, 9, 8, 1e-3, 1e-4});
  CHECK(est.d_hat == 3);
  CHECK(est.gap_scores.size() == 4);

  Tensor w;
  LogitMatrix q = synthetic_leak(200, 16, 48, 21, &w);
  numkit::SvdFactors f = numkit::svd_thin(q.values);
  std::vector<double> spectrum(f.s.data().begin(), f.s.data().end());
  CHECK(estimate_hidden_dim(spectrum).d_hat == 16);

  // exactly geometric: all gaps equal, smallest index wins
  std::vector<double> geo;
  for (int k = 0; k < 12; ++k) geo.push_back(std::pow(2.0, -k));
  CHECK(estimate_hidden_dim(geo).d_hat == 1);

  CHECK_THROWS_AS(estimate_hidden_dim({1.0}), EstimationError);
}

TEST_CASE("recover_projection: residual oracle, rank-1, preconditions") {
  Tensor w;
  LogitMatrix q = synthetic_leak(120, 8, 16, 31, &w);  // n = 2d
  StolenProjection sp = recover_projection(q, 8);
  CHECK(sp.w_hat.dim(1) == 8);
  ResidualReport rep = subspace_residual(sp.w_hat, w);
  CHECK(rep.residual <= 1e-8);
  CHECK_FALSE(rep.rank_deficit);

  // column norms non-increasing
  for (int j = 0; j + 1 < 8; ++j) {
    double n0 = 0.0, n1 = 0.0;
    for (int i = 0; i < 120; ++i) {
      n0 += sp.w_hat.at(i, j) * sp.w_hat.at(i, j);
      n1 += sp.w_hat.at(i, j + 1) * sp.w_hat.at(i, j + 1);
    }
    CHECK(n0 >= n1 - 1e-12);
  }

  // rank-1 leak: one column, Frobenius norm = sigma_1
  LogitMatrix r1 = synthetic_leak(50, 1, 6, 41);
  StolenProjection sp1 = recover_projection(r1, 1);
  CHECK(sp1.w_hat.dim(1) == 1);
  CHECK(numkit::frobenius_norm(sp1.w_hat) == doctest::Approx(sp1.spectrum[0]).epsilon(1e-12));

  // n <= d_hat is insufficient
  LogitMatrix small = synthetic_leak(50, 4, 4, 43);
  CHECK_THROWS_AS(recover_projection(small, 4), InsufficientQueriesError);

  // masked inputs are rejected
  LogitMatrix masked = synthetic_leak(20, 2, 6, 44);
  masked.mask[3] = 0;
  CHECK_THROWS_AS(recover_projection(masked, 2), StealError);
}

TEST_CASE("subspace_residual: identity, construct-and-solve, independent baseline") {
  std::mt19937_64 rng(55);
  Tensor w = Tensor::randn({80, 6}, rng, 1.0);
  CHECK(subspace_residual(w, w).residual <= 1e-12);

  // w_hat = w * G0 for invertible G0 still spans w
  Tensor g0 = Tensor::randn({6, 6}, rng, 1.0);
  for (int i = 0; i < 6; ++i) g0.at(i, i) += 3.0;  // keep it invertible
  Tensor w_hat = numkit::matmul(w, g0);
  CHECK(subspace_residual(w_hat, w).residual <= 1e-10);

  // independent random subspace: residual near 1
  double base = 0.0;
  for (uint64_t s = 0; s < 5; ++s) {
    std::mt19937_64 r2(100 + s);
    Tensor indep = Tensor::randn({80, 6}, r2, 1.0);
    base += subspace_residual(indep, w).residual;
  }
  CHECK(base / 5 > 0.85);

  // fewer columns than the true d flags a rank deficit
  Tensor thin = Tensor::zeros({80, 3});
  for (int i = 0; i < 80; ++i)
    for (int j = 0; j < 3; ++j) thin.at(i, j) = w.at(i, j);
  CHECK(subspace_residual(thin, w).rank_deficit);
}

TEST_CASE("scale equivariance: c*Q keeps d_hat, scales w_hat by c") {
  Tensor w;
  LogitMatrix q = synthetic_leak(60, 5, 14, 61, &w);
  StolenProjection sp = recover_projection_auto(q);
  CHECK(sp.d_hat == 5);

  const double c = 3.75;
  LogitMatrix qs = q;
  qs.values = q.values.detach();
  for (auto& x : qs.values.data()) x *= c;
  StolenProjection sps = recover_projection_auto(qs);
  CHECK(sps.d_hat == sp.d_hat);
  for (int64_t i = 0; i < sp.w_hat.size(); ++i)
    CHECK(std::abs(sps.w_hat.data()[i] - c * sp.w_hat.data()[i]) <=
          1e-9 * std::max(1.0, std::abs(c * sp.w_hat.data()[i])));
}

TEST_CASE("monotone information: residual does not grow with extra noiseless queries") {
  std::mt19937_64 rng(71);
  const int v = 90, d = 7;
  Tensor w = Tensor::randn({v, d}, rng, 1.0);
  Tensor h_all = Tensor::randn({d, 30}, rng, 1.0);
  Tensor q_all = numkit::matmul(w, h_all);

  double prev = 1e9;
  for (int n = d + 1; n <= 30; n += 4) {
    LogitMatrix q;
    q.n = n;
    q.values = Tensor::zeros({v, n});
    for (int i = 0; i < v; ++i)
      for (int j = 0; j < n; ++j) q.values.at(i, j) = q_all.at(i, j);
    q.mask.assign(static_cast<size_t>(v) * n, 1);
    const double res = subspace_residual(recover_projection(q, d).w_hat, w).residual;
    CHECK(res <= prev + 1e-9);
    prev = res;
  }
}

TEST_CASE("complete_masked: no-op on full matrices") {
  LogitMatrix q = synthetic_leak(30, 3, 9, 81);
  CompletionResult res = complete_masked(q, 3);
  CHECK(res.diag.converged);
  CHECK(res.diag.iterations == 0);
  CHECK(res.completed.values.data() == q.values.data());
}

TEST_CASE("complete_masked: rank-4 with 30% holes recovers observed and subspace") {
  std::mt19937_64 rng(91);
  const int v = 100, n = 40, d = 4;
  Tensor w = Tensor::randn({v, d}, rng, 1.0);
  Tensor h = Tensor::randn({d, n}, rng, 1.0);
  LogitMatrix q;
  q.n = n;
  q.values = numkit::matmul(w, h);
  q.mask.assign(static_cast<size_t>(v) * n, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : q.mask)
    if (u(rng) < 0.30) m = 0;
  // keep the per-column precondition satisfied
  for (int j = 0; j < n; ++j) REQUIRE(q.observed_in_column(j) >= d + 1);

  AlsConfig cfg;
  cfg.seed = 7;
  cfg.tol = 1e-7;
  CompletionResult res = complete_masked(q, d, cfg);
  CHECK(res.diag.final_rmse <= 1e-6);
  CHECK(res.completed.fully_observed());

  StolenProjection sp = recover_projection(res.completed, d);
  CHECK(subspace_residual(sp.w_hat, w).residual <= 1e-3);
}

TEST_CASE("complete_masked: structured top-k mask reports diagnostics without promises") {
  lm::ModelParams teacher = tiny_teacher(36, 4, 17);
  oracle::OracleConfig ocfg;
  ocfg.k = 8;  // d_hat + 4
  ocfg.max_queries = 100;
  oracle::LocalOracle o(teacher, ocfg);
  auto prompts = sample_prompts(20, 8, 36, 9, PromptSource::UniformRandom);
  LogitMatrix q = collect_logit_matrix(o, prompts);
  CHECK_FALSE(q.fully_observed());
  for (int j = 0; j < q.n; ++j) CHECK(q.observed_in_column(j) == 8);

  AlsConfig cfg;
  cfg.strict = false;
  cfg.max_iters = 60;
  CompletionResult res = complete_masked(q, 4, cfg);
  CHECK(res.diag.iterations > 0);
  CHECK(res.diag.rmse_trace.size() == static_cast<size_t>(res.diag.iterations));
  CHECK(res.completed.fully_observed());
}

TEST_CASE("complete_masked: strict mode raises with the residual trace") {
  LogitMatrix q = synthetic_leak(40, 6, 12, 101);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : q.mask)
    if (u(rng) < 0.25) m = 0;
  AlsConfig cfg;
  cfg.max_iters = 1;  // cannot converge in one sweep from random init
  cfg.tol = 1e-14;
  try {
    complete_masked(q, 6, cfg);
    FAIL("expected CompletionError");
  } catch (const CompletionError& e) {
    CHECK(e.diag.iterations == 1);
    CHECK_FALSE(e.diag.converged);
    CHECK(e.diag.rmse_trace.size() == 1);
  }

  // sparse columns violate the k >= d+1 assumption
  LogitMatrix sparse = synthetic_leak(40, 6, 12, 103);
  for (int i = 0; i < 36; ++i) sparse.mask[static_cast<size_t>(i) * 12 + 0] = 0;
  CHECK_THROWS_AS(complete_masked(sparse, 6), StealError);
}
