#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lm/model.hpp"

namespace lm {

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& msg, int step) : std::runtime_error(msg), step(step) {}
  int step;
};

struct OptConfig {
  double lr = 3e-4;
  int steps = 1000;
  int batch_size = 8;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over every requires_grad parameter of a model. Frozen groups carry
// requires_grad=false and are never touched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(ModelParams& params, const OptConfig& cfg);
  // lr_scale multiplies the base rate (warmup handled by callers).
  void step(double lr_scale = 1.0);
  void zero_grad();
  int64_t num_trainable() const;

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  OptConfig cfg_;
  int64_t t_ = 0;
};

double warmup_scale(int step, int warmup_steps);

struct TrainHistory {
  std::vector<double> loss;  // per step
};

// Next-token cross-entropy over random corpus windows. Deterministic for a
// fixed seed. Throws TrainingError with the step index if the loss leaves
// the reals.
TrainHistory train_teacher(ModelParams& params, const std::vector<int>& corpus_ids,
                           const OptConfig& opt, uint64_t seed);

}  // namespace lm
