#include "lm/train.hpp"

#include <algorithm>
#include <cmath>

namespace lm {

using namespace numkit;

AdamOptimizer::AdamOptimizer(ModelParams& params, const OptConfig& cfg) : cfg_(cfg) {
  params.visit([&](const std::string&, const std::string&, Tensor& t) {
    if (t.requires_grad())
      slots_.push_back({t, std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});
  });
}

void AdamOptimizer::step(double lr_scale) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = cfg_.lr * lr_scale;
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;  // unused this step
    const auto& g = s.param.grad();
    auto& x = s.param.data();
    for (size_t i = 0; i < x.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      x[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

int64_t AdamOptimizer::num_trainable() const {
  int64_t n = 0;
  for (const auto& s : slots_) n += s.param.size();
  return n;
}

double warmup_scale(int step, int warmup_steps) {
  if (warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
}

TrainHistory train_teacher(ModelParams& params, const std::vector<int>& corpus_ids,
                           const OptConfig& opt, uint64_t seed) {
  TrainHistory history;
  if (opt.steps == 0) return history;
  const int seq = params.cfg.context_len;
  if (static_cast<int>(corpus_ids.size()) < seq + 2)
    throw TrainingError("train_teacher: corpus shorter than one window", 0);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> start_dist(0, corpus_ids.size() - seq - 2);
  AdamOptimizer adam(params, opt);

  for (int step = 0; step < opt.steps; ++step) {
    adam.zero_grad();
    Tensor total;
    for (int b = 0; b < opt.batch_size; ++b) {
      const size_t s0 = start_dist(rng);
      std::vector<int> input(corpus_ids.begin() + s0, corpus_ids.begin() + s0 + seq);
      std::vector<int> target(corpus_ids.begin() + s0 + 1, corpus_ids.begin() + s0 + seq + 1);
      Tensor loss = cross_entropy_mean(forward_logits(params, input), target);
      total = total.defined() ? add(total, loss) : loss;
    }
    Tensor loss = scale(total, 1.0 / opt.batch_size);
    const double lv = loss.value();
    if (!std::isfinite(lv))
      throw TrainingError("train_teacher: loss diverged at step " + std::to_string(step), step);
    loss.backward();
    adam.step(warmup_scale(step, opt.warmup_steps));
    history.loss.push_back(lv);
  }
  return history;
}

}  // namespace lm
