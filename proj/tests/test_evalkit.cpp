#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "evalkit/metrics.hpp"
#include "evalkit/report.hpp"
#include "lm/model.hpp"

using namespace evalkit;
using numkit::Tensor;

namespace {

lm::ModelParams fixture_model(uint64_t seed = 3, int layers = 1) {
  lm::ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.hidden_dim = 4;
  cfg.num_layers = layers;
  cfg.num_heads = 2;
  cfg.context_len = 6;
  cfg.ff_mult = 2;
  return lm::ModelParams::init(cfg, seed);
}

std::vector<int> fixture_corpus(int len, uint64_t seed, int v = 10) {
  std::mt19937_64 rng(seed);
  std::vector<int> out(static_cast<size_t>(len));
  for (auto& t : out) t = static_cast<int>(rng() % v);
  return out;
}

}  // namespace

TEST_CASE("nll_ppl: uniform fixed point and independent-summation oracle") {
  lm::ModelParams uniform = fixture_model(5);
  for (auto& x : uniform.projection.data()) x = 0.0;
  auto corpus = fixture_corpus(300, 7);
  NllPpl r = nll_ppl(uniform, corpus);
  CHECK(std::abs(r.nll - std::log(10.0)) <= 1e-9);
  CHECK(std::abs(r.ppl - 10.0) <= 1e-6);
  CHECK(r.positions == 299);
  CHECK(std::abs(r.nll_total - r.nll * r.positions) <= 1e-6);

  // independent summation over the same windows
  lm::ModelParams m = fixture_model(11);
  NllPpl got = nll_ppl(m, corpus, 50);
  CHECK(got.positions == 50);
  numkit::NoGradGuard ng;
  double total = 0.0;
  int64_t count = 0;
  size_t i0 = 0;
  while (count < 50) {
    const size_t len = std::min<size_t>(7, corpus.size() - i0);
    std::vector<int> input(corpus.begin() + i0, corpus.begin() + i0 + len - 1);
    Tensor logits = lm::forward_logits(m, input);
    for (size_t i = 0; i + 1 < len && count < 50; ++i) {
      const double* z = logits.data().data() + i * 10;
      double mx = z[0], s = 0.0;
      for (int j = 1; j < 10; ++j) mx = std::max(mx, z[j]);
      for (int j = 0; j < 10; ++j) s += std::exp(z[j] - mx);
      total -= z[corpus[i0 + i + 1]] - mx - std::log(s);
      ++count;
    }
    i0 += 6;
  }
  CHECK(std::abs(got.nll - total / 50) <= 1e-12);
  CHECK(got.ppl == doctest::Approx(std::exp(got.nll)).epsilon(1e-12));

  CHECK_THROWS_AS(nll_ppl(m, {1}), EvalError);
}

TEST_CASE("kl_divergence: identity zero, uniform-student analytic value, Gibbs") {
  lm::ModelParams teacher = fixture_model(21);
  auto corpus = fixture_corpus(200, 23);
  CHECK(kl_divergence(teacher, teacher, corpus) == doctest::Approx(0.0).epsilon(1e-12));

  // student with W = 0 is exactly uniform: KL = ln V - mean entropy(teacher)
  lm::ModelParams uniform = fixture_model(21);
  for (auto& x : uniform.projection.data()) x = 0.0;
  const double kl = kl_divergence(teacher, uniform, corpus, 80);

  numkit::NoGradGuard ng;
  double entropy_sum = 0.0;
  int64_t count = 0;
  size_t i0 = 0;
  while (count < 80) {
    const size_t len = std::min<size_t>(7, corpus.size() - i0);
    std::vector<int> input(corpus.begin() + i0, corpus.begin() + i0 + len - 1);
    Tensor logits = lm::forward_logits(teacher, input);
    for (size_t i = 0; i + 1 < len && count < 80; ++i) {
      const double* z = logits.data().data() + i * 10;
      double mx = z[0], s = 0.0;
      for (int j = 1; j < 10; ++j) mx = std::max(mx, z[j]);
      for (int j = 0; j < 10; ++j) s += std::exp(z[j] - mx);
      for (int j = 0; j < 10; ++j) {
        const double p = std::exp(z[j] - mx) / s;
        if (p > 0) entropy_sum -= p * std::log(p);
      }
      ++count;
    }
    i0 += 6;
  }
  CHECK(kl == doctest::Approx(std::log(10.0) - entropy_sum / 80).epsilon(1e-9));

  // Gibbs: non-negative on random pairs
  for (uint64_t s = 0; s < 3; ++s)
    CHECK(kl_divergence(fixture_model(100 + s), fixture_model(200 + s), corpus, 40) >= -1e-12);

  lm::ModelConfig other = teacher.cfg;
  other.vocab_size = 12;
  lm::ModelParams mismatched = lm::ModelParams::init(other, 1);
  CHECK_THROWS_AS(kl_divergence(teacher, mismatched, corpus), EvalError);
}

TEST_CASE("hidden_cosine: identity, linear-transform invariance, data checks") {
  lm::ModelParams teacher = fixture_model(31, 2);
  auto corpus = fixture_corpus(400, 33);
  HiddenCosine self = hidden_cosine(teacher, teacher, corpus, 0.5, 200);
  CHECK(self.mean_cosine == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(self.fit_residual <= 1e-9);
  REQUIRE(self.identity_cosine.has_value());
  CHECK(*self.identity_cosine == doctest::Approx(1.0).epsilon(1e-12));

  // student hidden = R * teacher hidden for a fixed invertible R -> 1.0
  std::mt19937_64 rng(41);
  const int p = 120, d = 6;
  Tensor ht = Tensor::randn({p, d}, rng, 1.0);
  Tensor r = Tensor::randn({d, d}, rng, 0.5);
  for (int i = 0; i < d; ++i) r.at(i, i) += 2.0;
  Tensor hs = numkit::matmul(ht, r);  // rows transformed by R^T
  HiddenCosine mapped = hidden_cosine_from_states(ht, hs, 0.5);
  CHECK(mapped.mean_cosine == doctest::Approx(1.0).epsilon(1e-6));

  // independent states: reported, no sign promise, stays in [-1, 1]
  Tensor indep = Tensor::randn({p, d}, rng, 1.0);
  HiddenCosine base = hidden_cosine_from_states(ht, indep, 0.5);
  CHECK(base.mean_cosine <= 1.0 + 1e-12);
  CHECK(base.mean_cosine >= -1.0 - 1e-12);

  // calibration positions below the student dimension
  Tensor few_t = Tensor::randn({8, 6}, rng, 1.0);
  Tensor few_s = Tensor::randn({8, 6}, rng, 1.0);
  CHECK_THROWS_AS(hidden_cosine_from_states(few_t, few_s, 0.5), EvalError);
}

TEST_CASE("prob_alignment: identity diagonal, count contract, direct sigma") {
  lm::ModelParams teacher = fixture_model(51);
  auto corpus = fixture_corpus(150, 53);
  ProbAlignment self = prob_alignment(teacher, teacher, corpus, 40);
  CHECK(self.pairs.size() == 40);
  CHECK(self.sigma == 0.0);
  for (const auto& [pt, ps] : self.pairs) CHECK(pt == ps);

  lm::ModelParams student = fixture_model(55);
  ProbAlignment pa = prob_alignment(teacher, student, corpus, 60);
  CHECK(pa.pairs.size() == 60);
  double mean = 0.0;
  for (const auto& [pt, ps] : pa.pairs) mean += ps - pt;
  mean /= 60;
  double var = 0.0;
  for (const auto& [pt, ps] : pa.pairs) var += ((ps - pt) - mean) * ((ps - pt) - mean);
  var /= 60;
  CHECK(pa.sigma == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(pa.sigma_sq == doctest::Approx(var).epsilon(1e-12));

  // clamping when asking for more than available
  ProbAlignment clamped = prob_alignment(teacher, student, corpus, 100000);
  CHECK(clamped.clamped);
  CHECK(clamped.pairs.size() == 149);
}

TEST_CASE("unique_ngrams and memorization_rate on streams and models") {
  // stream-level
  std::vector<int> constant(50, 7);
  CHECK(unique_ngrams(constant, 20) == 1);
  std::vector<int> stream = {1, 2, 3, 4, 1, 2, 3, 4, 1, 2};
  CHECK(unique_ngrams(stream, 4) == 4);
  CHECK(unique_ngrams(stream, static_cast<int>(stream.size())) == 1);  // boundary
  CHECK_THROWS_AS(unique_ngrams(stream, 100), EvalError);
  CHECK(unique_ngrams(stream, 2) <= static_cast<int64_t>(stream.size()) - 2 + 1);

  std::vector<int> corpus = {5, 6, 7, 8, 9, 5, 6, 7};
  std::vector<int> verbatim(corpus.begin(), corpus.begin() + 6);
  CHECK(memorization_rate(verbatim, corpus, 4) == 1.0);
  std::vector<int> disjoint = {1, 2, 3, 1, 2, 3};
  CHECK(memorization_rate(disjoint, corpus, 4) == 0.0);

  // constant-output model: W = 0 makes greedy pick token 0 forever
  lm::ModelParams constant_model = fixture_model(61);
  for (auto& x : constant_model.projection.data()) x = 0.0;
  GenConfig gen;
  gen.total_tokens = 40;
  gen.temperature = 0.0;  // greedy
  CHECK(unique_ngrams(constant_model, gen, 20) == 1);

  // deterministic for a fixed seed
  lm::ModelParams m = fixture_model(63);
  GenConfig sampled;
  sampled.total_tokens = 60;
  sampled.temperature = 1.0;
  sampled.seed = 99;
  CHECK(generate_stream(m, sampled) == generate_stream(m, sampled));
}

TEST_CASE("mem_match_err: identity, adversarial complement, range") {
  lm::ModelParams teacher = fixture_model(71);
  std::vector<std::vector<int>> prompts;
  std::mt19937_64 rng(73);
  for (int i = 0; i < 10; ++i) {
    std::vector<int> p(1 + rng() % 5);
    for (auto& t : p) t = static_cast<int>(rng() % 10);
    prompts.push_back(p);
  }
  CHECK(mem_match_err(teacher, teacher, prompts) == 0.0);

  // negated projection flips every argmax on non-constant rows
  lm::ModelParams adversary = fixture_model(71);
  adversary.projection = teacher.projection.detach();
  for (auto& x : adversary.projection.data()) x = -x;
  CHECK(mem_match_err(teacher, adversary, prompts) == 1.0);

  lm::ModelParams other = fixture_model(77);
  const double err = mem_match_err(teacher, other, prompts);
  CHECK(err >= 0.0);
  CHECK(err <= 1.0);
  CHECK_THROWS_AS(mem_match_err(teacher, teacher, {}), EvalError);
}

TEST_CASE("aic_aicc: zero-parameter case, formula identity, penalty ordering") {
  AicResult z = aic_aicc(123.5, 0, 50);
  CHECK(z.aic == 2 * 123.5);
  REQUIRE(z.aicc.has_value());
  CHECK(*z.aicc == z.aic);

  AicResult r = aic_aicc(100.0, 7, 30);
  REQUIRE(r.aicc.has_value());
  CHECK(*r.aicc - r.aic == doctest::Approx(2.0 * 7 * 8 / (30 - 7 - 1)).epsilon(1e-15));
  CHECK(*r.aicc > r.aic);  // k >= 1 and n > k+1

  // equal fit, fewer parameters wins
  AicResult small = aic_aicc(100.0, 3, 50);
  AicResult big = aic_aicc(100.0, 9, 50);
  CHECK(small.aic < big.aic);

  AicResult undef = aic_aicc(100.0, 50, 51);
  CHECK_FALSE(undef.aicc.has_value());
  CHECK(undef.aic == doctest::Approx(2.0 * 50 + 200.0));
}

TEST_CASE("speed_size: identity fixed point and formula cases") {
  lm::ModelParams teacher = fixture_model(81, 2);
  BenchConfig bench;
  bench.prompt = {1, 2};
  bench.gen_len = 6;
  bench.repetitions = 5;
  SpeedSize self = speed_size(teacher, teacher, bench);
  CHECK(self.size_reduction_pct == 0.0);
  CHECK(self.spread_pct >= 0.0);  // measurement noise band reported

  CHECK(size_reduction_pct(100, 200) == doctest::Approx(-100.0));
  // paper-scale accounting: 67.0M vs 81.0M
  CHECK(size_reduction_pct(81000000, 67000000) == doctest::Approx(17.283951).epsilon(1e-6));

  BenchConfig bad = bench;
  bad.repetitions = 3;
  CHECK_THROWS_AS(speed_size(teacher, teacher, bad), BenchmarkError);
}

TEST_CASE("ppl_per_param reproduces the published ratios") {
  CHECK(ppl_per_param(187.47, 14.0) == doctest::Approx(13.39).epsilon(0.005));
  CHECK(ppl_per_param(133.50, -0.2) == doctest::Approx(-667.48).epsilon(0.005));
  CHECK(ppl_per_param(203.67, 14.0) == doctest::Approx(14.55).epsilon(0.005));
  CHECK(ppl_per_param(0.0, 5.0) == 0.0);
  CHECK(std::isnan(ppl_per_param(10.0, 0.0)));  // undefined-ratio marker
}

TEST_CASE("report finalization: teacher fixed points, terciles, deltas") {
  std::vector<EvalReport> reports(4);
  reports[0].model_name = "teacher";
  reports[0].is_teacher = true;
  reports[0].depth = 6;
  reports[0].param_count = 1000000;
  reports[0].ppl = 100.0;
  reports[0].ood_ppl = 110.0;
  reports[0].aic = 500.0;
  reports[0].memorization_rate = 0.5;

  const char* names[] = {"student-4", "student-5", "student-6"};
  const double ppls[] = {120.0, 115.0, 105.0};
  const double rates[] = {0.9, 0.5, 0.1};
  for (int i = 1; i < 4; ++i) {
    reports[i].model_name = names[i - 1];
    reports[i].depth = 3 + i;
    reports[i].param_count = 800000 + i * 100000;
    reports[i].ppl = ppls[i - 1];
    reports[i].ood_ppl = ppls[i - 1] + 10;
    reports[i].aic = 480.0 + i * 30;
    reports[i].aicc = 500.0 + i * 30;
    reports[i].aicc_valid = true;
    reports[i].memorization_rate = rates[i - 1];
  }

  finalize_relative_fields(reports);
  CHECK(reports[0].delta_ppl_pct == 0.0);
  CHECK(reports[0].size_reduction_pct == 0.0);
  CHECK(reports[0].ppl_per_param == 0.0);
  CHECK(reports[3].delta_ppl_pct == doctest::Approx(5.0));
  CHECK(reports[1].size_reduction_pct == doctest::Approx(10.0));
  // delta_aic subtracts the minimum across the set
  double min_aic = 1e300;
  for (auto& r : reports) min_aic = std::min(min_aic, r.aic);
  for (auto& r : reports) CHECK(r.delta_aic == doctest::Approx(r.aic - min_aic));
  CHECK(reports[0].memorization_label == "Baseline");
  CHECK(reports[1].memorization_label == "High");
  CHECK(reports[3].memorization_label == "Low");

  // writers produce the advertised headers
  write_combined_csv("test_eval_combined.csv", reports);
  std::ifstream is("test_eval_combined.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "model,depth,params,nll,ppl,delta_ppl_pct,kl,cos_sim,memorization_rate,"
        "memorization_label,mem_match_err,speedup_pct,size_reduction_pct");
  std::string line;
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  std::remove("test_eval_combined.csv");

  write_fig5_csv("test_eval_fig5.csv", reports);
  std::ifstream f5("test_eval_fig5.csv");
  std::getline(f5, header);
  CHECK(header == "model,delta_aic,delta_aicc,aicc_valid");
  std::remove("test_eval_fig5.csv");
}
