#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lm/model.hpp"
#include "lm/train.hpp"
#include "oracle/oracle.hpp"
#include "steal/steal.hpp"

namespace distill {

struct DistillError : std::runtime_error {
  explicit DistillError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParameterError : DistillError {
  explicit ParameterError(const std::string& msg) : DistillError(msg) {}
};
struct TrainingError : DistillError {
  TrainingError(const std::string& msg, int depth, int step)
      : DistillError(msg), depth(depth), step(step) {}
  int depth;
  int step;
};
struct PartialTrainingError : DistillError {
  PartialTrainingError(const std::string& msg, int completed_epochs)
      : DistillError(msg), completed_epochs(completed_epochs) {}
  int completed_epochs;
};

struct TauSchedule {
  double tau_start = 4.0;
  double tau_end = 1.0;
  enum class Mode { Linear, Constant } mode = Mode::Linear;

  // epoch is 1-based; epoch 1 gives tau_start, epoch E gives tau_end.
  // A single-epoch linear schedule has no room to anneal and uses tau_start.
  double for_epoch(int epoch, int total_epochs) const;
};

struct DistillConfig {
  double lambda = 0.1;  // CE weight; the KL term is prioritized
  TauSchedule tau;
  int epochs = 3;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup_steps = 20;
  std::vector<int> student_depths = {4, 5, 6, 7, 8};
  enum class TeacherMode { Full, TopKRenorm } teacher_mode = TeacherMode::Full;
  int topk_k = 0;  // TopKRenorm only
  // Ablation: drop the KL term entirely and train on cross-entropy alone.
  bool ce_only = false;

  void validate() const;
};

// softmax(z / tau); autodiff flows through z.
numkit::Tensor soften(const numkit::Tensor& z, double tau);

// Eq-style distillation loss:
//   tau^2 * KL(soften(z_t, tau) || soften(z_s, tau)) + lambda * CE(z_s, y)
// mean over rows. z_t is treated as a constant; gradient reaches z_s only.
// Accepts [V] with a single label or [N x V] with N labels.
numkit::Tensor kd_loss(const numkit::Tensor& z_t, const numkit::Tensor& z_s,
                       const std::vector<int>& y, double tau, double lambda);

struct StudentArch {
  int context_len = 0;
  int num_heads = 0;  // 0 picks the largest of {8,4,2,1} dividing d_hat
  int ff_mult = 4;
};

// Student around the stolen projection: projection tensor holds w_hat bytes
// and doubles as the tied input embedding, both frozen. Blocks, positions
// and norms are fresh and trainable. Input/output scale is derived from
// w_hat's row norms so training starts in a sane regime.
lm::ModelParams build_student(const steal::StolenProjection& stolen, int depth,
                              const StudentArch& arch, uint64_t seed);

// Teacher logits for a window of tokens, shaped [positions x V], detached.
struct TeacherSource {
  const lm::ModelParams* model = nullptr;  // lab access, full per-position grids
  oracle::Oracle* oracle = nullptr;        // API access, last position only
  DistillConfig::TeacherMode mode = DistillConfig::TeacherMode::Full;
  int topk_k = 0;
};

// Full mode returns exact logits. TopKRenorm keeps the k largest per row
// and floors the rest at the smallest kept logit, the bounded uniform-tail
// estimate that keeps KL finite.
numkit::Tensor teacher_targets(const TeacherSource& src, const std::vector<int>& window);

struct EpochStats {
  int epoch = 0;
  int depth = 0;
  double tau = 0.0;
  double mean_kd_loss = 0.0;
  double mean_ce_loss = 0.0;
  double wall_time_s = 0.0;
};

struct StudentRun {
  int depth = 0;
  std::vector<EpochStats> epochs;
};

// Trains each student against the teacher on sliding corpus windows
// (length context+1: inputs plus next-token labels). Students train
// independently with per-student seeds derived from seed and depth.
std::vector<StudentRun> train_distill(const TeacherSource& teacher,
                                      std::vector<lm::ModelParams*>& students,
                                      const std::vector<std::vector<int>>& windows,
                                      const DistillConfig& cfg, uint64_t seed);

void write_training_log(const std::string& path, const std::vector<StudentRun>& runs);

}  // namespace distill
