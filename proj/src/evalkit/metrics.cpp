#include "evalkit/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "common/hash.hpp"
#include "lm/vocab.hpp"
#include "numkit/linalg.hpp"
#include "numkit/ops.hpp"

namespace evalkit {

using numkit::Tensor;

namespace {

// Visits (input window, target ids) pairs over non-overlapping windows.
template <typename Fn>
void walk_windows(const lm::ModelParams& model, const std::vector<int>& corpus,
                  int64_t max_positions, Fn&& fn) {
  const int ctx = model.cfg.context_len;
  if (corpus.size() < 2) throw EvalError("corpus too small: need at least 2 tokens");
  int64_t used = 0;
  size_t i0 = 0;
  while (i0 + 1 < corpus.size()) {
    const size_t len = std::min<size_t>(static_cast<size_t>(ctx) + 1, corpus.size() - i0);
    if (len < 2) break;
    std::vector<int> input(corpus.begin() + i0, corpus.begin() + i0 + len - 1);
    std::vector<int> target(corpus.begin() + i0 + 1, corpus.begin() + i0 + len);
    if (max_positions > 0 && used + static_cast<int64_t>(target.size()) > max_positions) {
      const int64_t keep = max_positions - used;
      if (keep <= 0) break;
      input.resize(static_cast<size_t>(keep));
      target.resize(static_cast<size_t>(keep));
    }
    fn(input, target);
    used += static_cast<int64_t>(target.size());
    if (max_positions > 0 && used >= max_positions) break;
    i0 += static_cast<size_t>(ctx);
  }
}

void softmax_row(const double* z, int v, std::vector<double>& out) {
  out.resize(static_cast<size_t>(v));
  double mx = z[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (int j = 0; j < v; ++j) {
    out[static_cast<size_t>(j)] = std::exp(z[j] - mx);
    s += out[static_cast<size_t>(j)];
  }
  for (auto& x : out) x /= s;
}

double log_prob_of(const double* z, int v, int token) {
  double mx = z[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (int j = 0; j < v; ++j) s += std::exp(z[j] - mx);
  return z[token] - mx - std::log(s);
}

}  // namespace

NllPpl nll_ppl(const lm::ModelParams& model, const std::vector<int>& corpus,
               int64_t max_positions) {
  numkit::NoGradGuard ng;
  NllPpl out;
  const int v = model.cfg.vocab_size;
  walk_windows(model, corpus, max_positions, [&](const std::vector<int>& input,
                                                 const std::vector<int>& target) {
    Tensor logits = lm::forward_logits(model, input);
    for (size_t i = 0; i < target.size(); ++i) {
      out.nll_total -= log_prob_of(logits.data().data() + i * v, v, target[i]);
      ++out.positions;
    }
  });
  if (out.positions == 0) throw EvalError("nll_ppl: no evaluable positions");
  out.nll = out.nll_total / static_cast<double>(out.positions);
  out.ppl = std::exp(out.nll);
  return out;
}

double kl_divergence(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const std::vector<int>& corpus, int64_t max_positions) {
  if (teacher.cfg.vocab_size != student.cfg.vocab_size)
    throw EvalError("kl_divergence: vocabulary sizes differ");
  numkit::NoGradGuard ng;
  const int v = teacher.cfg.vocab_size;
  double total = 0.0;
  int64_t positions = 0;
  std::vector<double> pt, ps;
  walk_windows(teacher, corpus, max_positions, [&](const std::vector<int>& input,
                                                   const std::vector<int>& target) {
    Tensor zt = lm::forward_logits(teacher, input);
    Tensor zs = lm::forward_logits(student, input);
    for (size_t i = 0; i < target.size(); ++i) {
      softmax_row(zt.data().data() + i * v, v, pt);
      softmax_row(zs.data().data() + i * v, v, ps);
      for (int j = 0; j < v; ++j)
        if (pt[static_cast<size_t>(j)] > 0.0)
          total += pt[static_cast<size_t>(j)] *
                   (std::log(pt[static_cast<size_t>(j)]) - std::log(ps[static_cast<size_t>(j)]));
      ++positions;
    }
  });
  if (positions == 0) throw EvalError("kl_divergence: no evaluable positions");
  return total / static_cast<double>(positions);
}

HiddenCosine hidden_cosine_from_states(const Tensor& teacher_h, const Tensor& student_h,
                                       double calib_fraction) {
  const int p = teacher_h.dim(0);
  if (student_h.dim(0) != p) throw EvalError("hidden_cosine: position counts differ");
  const int dt = teacher_h.dim(1), ds = student_h.dim(1);
  const int calib = static_cast<int>(std::floor(p * calib_fraction));
  if (calib < ds)
    throw EvalError("hidden_cosine: " + std::to_string(calib) +
                    " calibration positions for dimension " + std::to_string(ds));
  if (calib >= p) throw EvalError("hidden_cosine: no evaluation positions left");

  Tensor hs_c = Tensor::zeros({calib, ds});
  Tensor ht_c = Tensor::zeros({calib, dt});
  for (int i = 0; i < calib; ++i) {
    for (int j = 0; j < ds; ++j) hs_c.at(i, j) = student_h.at(i, j);
    for (int j = 0; j < dt; ++j) ht_c.at(i, j) = teacher_h.at(i, j);
  }
  numkit::LstsqResult fit = numkit::lstsq(hs_c, ht_c);

  // residual on the calibration split
  Tensor pred = numkit::matmul(hs_c, fit.x);
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - ht_c.data()[i];
    num += d * d;
    den += ht_c.data()[i] * ht_c.data()[i];
  }

  HiddenCosine out;
  out.fit_residual = std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
  out.calib_positions = calib;
  out.eval_positions = p - calib;

  double cos_sum = 0.0, ident_sum = 0.0;
  for (int i = calib; i < p; ++i) {
    std::vector<double> mapped(static_cast<size_t>(dt), 0.0);
    for (int a = 0; a < ds; ++a) {
      const double x = student_h.at(i, a);
      if (x == 0.0) continue;
      for (int j = 0; j < dt; ++j) mapped[static_cast<size_t>(j)] += x * fit.x.at(a, j);
    }
    double dot = 0.0, nm = 0.0, nt = 0.0;
    for (int j = 0; j < dt; ++j) {
      dot += mapped[static_cast<size_t>(j)] * teacher_h.at(i, j);
      nm += mapped[static_cast<size_t>(j)] * mapped[static_cast<size_t>(j)];
      nt += teacher_h.at(i, j) * teacher_h.at(i, j);
    }
    cos_sum += dot / std::max(std::sqrt(nm * nt), 1e-300);
    if (ds == dt) {
      double dot_i = 0.0, ns = 0.0;
      for (int j = 0; j < dt; ++j) {
        dot_i += student_h.at(i, j) * teacher_h.at(i, j);
        ns += student_h.at(i, j) * student_h.at(i, j);
      }
      ident_sum += dot_i / std::max(std::sqrt(ns * nt), 1e-300);
    }
  }
  out.mean_cosine = cos_sum / out.eval_positions;
  if (ds == dt) out.identity_cosine = ident_sum / out.eval_positions;
  return out;
}

HiddenCosine hidden_cosine(const lm::ModelParams& teacher, const lm::ModelParams& student,
                           const std::vector<int>& corpus, double calib_fraction,
                           int64_t max_positions) {
  numkit::NoGradGuard ng;
  std::vector<double> ht, hs;
  int64_t rows = 0;
  const int dt = teacher.cfg.hidden_dim, ds = student.cfg.hidden_dim;
  walk_windows(teacher, corpus, max_positions, [&](const std::vector<int>& input,
                                                   const std::vector<int>&) {
    Tensor a = lm::hidden_state(teacher, input);
    Tensor b = lm::hidden_state(student, input);
    const int n = a.dim(0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dt; ++j) ht.push_back(a.at(i, j));
      for (int j = 0; j < ds; ++j) hs.push_back(b.at(i, j));
      ++rows;
    }
  });
  Tensor tmat = Tensor::from_vector({static_cast<int>(rows), dt}, std::move(ht));
  Tensor smat = Tensor::from_vector({static_cast<int>(rows), ds}, std::move(hs));
  return hidden_cosine_from_states(tmat, smat, calib_fraction);
}

ProbAlignment prob_alignment(const lm::ModelParams& teacher, const lm::ModelParams& student,
                             const std::vector<int>& corpus, int64_t sample_n,
                             int64_t max_positions) {
  if (sample_n < 2) throw EvalError("prob_alignment: sample_n must be >= 2");
  numkit::NoGradGuard ng;
  const int v = teacher.cfg.vocab_size;

  std::vector<std::pair<double, double>> all;
  walk_windows(teacher, corpus, max_positions, [&](const std::vector<int>& input,
                                                   const std::vector<int>& target) {
    Tensor zt = lm::forward_logits(teacher, input);
    Tensor zs = lm::forward_logits(student, input);
    for (size_t i = 0; i < target.size(); ++i) {
      all.emplace_back(std::exp(log_prob_of(zt.data().data() + i * v, v, target[i])),
                       std::exp(log_prob_of(zs.data().data() + i * v, v, target[i])));
    }
  });
  if (all.empty()) throw EvalError("prob_alignment: no evaluable positions");

  ProbAlignment out;
  if (sample_n >= static_cast<int64_t>(all.size())) {
    out.pairs = std::move(all);
    out.clamped = sample_n > static_cast<int64_t>(out.pairs.size());
  } else {
    // evenly spaced deterministic subsample
    out.pairs.reserve(static_cast<size_t>(sample_n));
    for (int64_t i = 0; i < sample_n; ++i) {
      const size_t idx = static_cast<size_t>(i * (static_cast<int64_t>(all.size()) - 1) /
                                             (sample_n - 1));
      out.pairs.push_back(all[idx]);
    }
  }

  double mean = 0.0;
  for (const auto& [pt, ps] : out.pairs) mean += ps - pt;
  mean /= static_cast<double>(out.pairs.size());
  double var = 0.0;
  for (const auto& [pt, ps] : out.pairs) {
    const double d = (ps - pt) - mean;
    var += d * d;
  }
  var /= static_cast<double>(out.pairs.size());
  out.sigma_sq = var;
  out.sigma = std::sqrt(var);
  return out;
}

std::vector<int> generate_stream(const lm::ModelParams& model, const GenConfig& cfg) {
  if (cfg.total_tokens < 1) throw EvalError("generate_stream: total_tokens must be >= 1");
  const int start = cfg.prompt_token >= 0 ? cfg.prompt_token : lm::Vocab::kBos;
  lm::DecodeConfig dec;
  dec.mode = cfg.temperature <= 0.0 ? lm::DecodeConfig::Mode::Greedy
                                    : lm::DecodeConfig::Mode::Temperature;
  dec.temperature = cfg.temperature;
  std::vector<int> out = lm::generate(model, {start}, cfg.total_tokens, dec, cfg.seed);
  out.erase(out.begin());  // drop the prompt token
  return out;
}

int64_t unique_ngrams(const std::vector<int>& stream, int n) {
  if (n < 1) throw EvalError("unique_ngrams: n must be >= 1");
  if (static_cast<int>(stream.size()) < n)
    throw EvalError("unique_ngrams: stream shorter than n");
  std::unordered_set<uint64_t> seen;
  for (size_t i = 0; i + static_cast<size_t>(n) <= stream.size(); ++i)
    seen.insert(common::fnv1a(stream.data() + i, static_cast<size_t>(n) * sizeof(int)));
  return static_cast<int64_t>(seen.size());
}

int64_t unique_ngrams(const lm::ModelParams& model, const GenConfig& cfg, int n) {
  if (cfg.total_tokens < n) throw EvalError("unique_ngrams: total_tokens < n");
  return unique_ngrams(generate_stream(model, cfg), n);
}

double memorization_rate(const std::vector<int>& stream, const std::vector<int>& corpus, int n) {
  if (n < 1) throw EvalError("memorization_rate: n must be >= 1");
  if (static_cast<int>(stream.size()) < n)
    throw EvalError("memorization_rate: stream shorter than n");
  std::unordered_set<uint64_t> corpus_grams;
  if (static_cast<int>(corpus.size()) >= n)
    for (size_t i = 0; i + static_cast<size_t>(n) <= corpus.size(); ++i)
      corpus_grams.insert(common::fnv1a(corpus.data() + i, static_cast<size_t>(n) * sizeof(int)));
  int64_t hits = 0, windows = 0;
  for (size_t i = 0; i + static_cast<size_t>(n) <= stream.size(); ++i) {
    hits += corpus_grams.count(
        common::fnv1a(stream.data() + i, static_cast<size_t>(n) * sizeof(int)));
    ++windows;
  }
  return static_cast<double>(hits) / static_cast<double>(windows);
}

double memorization_rate(const lm::ModelParams& model, const GenConfig& cfg,
                         const std::vector<int>& corpus, int n) {
  if (cfg.total_tokens < n) throw EvalError("memorization_rate: total_tokens < n");
  return memorization_rate(generate_stream(model, cfg), corpus, n);
}

double mem_match_err(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const std::vector<std::vector<int>>& prompts) {
  if (teacher.cfg.vocab_size != student.cfg.vocab_size)
    throw EvalError("mem_match_err: vocabulary sizes differ");
  if (prompts.empty()) throw EvalError("mem_match_err: no prompts");
  numkit::NoGradGuard ng;
  const int v = teacher.cfg.vocab_size;
  int64_t mismatches = 0, positions = 0;
  auto greedy_row = [&](const double* z) {
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (z[j] > z[best]) best = j;
    return best;
  };
  for (const auto& p : prompts) {
    Tensor zt = lm::forward_logits(teacher, p);
    Tensor zs = lm::forward_logits(student, p);
    for (int i = 0; i < zt.dim(0); ++i) {
      mismatches += greedy_row(zt.data().data() + static_cast<size_t>(i) * v) !=
                    greedy_row(zs.data().data() + static_cast<size_t>(i) * v);
      ++positions;
    }
  }
  return static_cast<double>(mismatches) / static_cast<double>(positions);
}

AicResult aic_aicc(double nll_total, int64_t k, int64_t n) {
  AicResult out;
  out.aic = 2.0 * static_cast<double>(k) + 2.0 * nll_total;
  if (n > k + 1)
    out.aicc = out.aic + 2.0 * static_cast<double>(k) * (static_cast<double>(k) + 1.0) /
                             static_cast<double>(n - k - 1);
  return out;
}

double size_reduction_pct(int64_t teacher_params, int64_t student_params) {
  return (1.0 - static_cast<double>(student_params) / static_cast<double>(teacher_params)) *
         100.0;
}

SpeedSize speed_size(const lm::ModelParams& teacher, const lm::ModelParams& student,
                     const BenchConfig& cfg) {
  if (cfg.repetitions < 5) throw BenchmarkError("speed_size: need at least 5 repetitions");
  if (cfg.prompt.empty() || cfg.gen_len < 1) throw BenchmarkError("speed_size: empty benchmark");
  numkit::NoGradGuard ng;

  auto tokens_per_sec = [&](const lm::ModelParams& m, std::vector<double>& samples) {
    samples.clear();
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      lm::generate(m, cfg.prompt, cfg.gen_len, {}, 0);
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (dt <= 0.0) throw BenchmarkError("speed_size: zero-duration timing sample");
      samples.push_back(cfg.gen_len / dt);
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };

  SpeedSize out;
  std::vector<double> ts, ss;
  out.teacher_tps = tokens_per_sec(teacher, ts);
  out.student_tps = tokens_per_sec(student, ss);
  out.speedup_pct = (out.student_tps / out.teacher_tps - 1.0) * 100.0;
  out.size_reduction_pct = size_reduction_pct(teacher.param_count(), student.param_count());
  out.spread_pct = (ss.back() - ss.front()) / ss[ss.size() / 2] * 100.0;
  return out;
}

double ppl_per_param(double delta_ppl, double delta_params_millions) {
  if (delta_params_millions == 0.0) return std::nan("");  // undefined-ratio marker
  return delta_ppl / delta_params_millions;
}

}  // namespace evalkit
