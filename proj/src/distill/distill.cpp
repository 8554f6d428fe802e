#include "distill/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace distill {

using numkit::Tensor;

double TauSchedule::for_epoch(int epoch, int total_epochs) const {
  if (mode == Mode::Constant || total_epochs <= 1) return tau_start;
  const double t = static_cast<double>(epoch - 1) / (total_epochs - 1);
  return tau_start + (tau_end - tau_start) * t;
}

void DistillConfig::validate() const {
  if (lambda < 0.0) throw ParameterError("distill config: lambda must be >= 0");
  if (tau.tau_start < 1e-6 || tau.tau_end < 1e-6)
    throw ParameterError("distill config: tau values must be >= 1e-6");
  if (epochs < 0 || batch_size < 1 || lr <= 0.0)
    throw ParameterError("distill config: bad epochs/batch/lr");
  if (student_depths.empty()) throw ParameterError("distill config: no student depths");
  if (teacher_mode == TeacherMode::TopKRenorm && topk_k < 1)
    throw ParameterError("distill config: topk_renorm needs k >= 1");
}

Tensor soften(const Tensor& z, double tau) {
  if (tau <= 0.0) throw ParameterError("soften: tau must be positive");
  return numkit::softmax(numkit::scale(z, 1.0 / tau));
}

Tensor kd_loss(const Tensor& z_t, const Tensor& z_s, const std::vector<int>& y, double tau,
               double lambda) {
  if (tau <= 0.0) throw ParameterError("kd_loss: tau must be positive");
  if (z_t.shape() != z_s.shape())
    throw numkit::ShapeError("kd_loss: teacher/student logit shapes differ: " +
                             numkit::shape_str(z_t.shape()) + " vs " +
                             numkit::shape_str(z_s.shape()));
  if (z_t.ndim() != 1 && z_t.ndim() != 2)
    throw numkit::ShapeError("kd_loss: logits must be 1-D or 2-D");

  const int v = z_t.dim(z_t.ndim() - 1);
  const int rows = static_cast<int>(z_t.size() / v);
  if (static_cast<int>(y.size()) != rows)
    throw numkit::ShapeError("kd_loss: need one label per row");

  Tensor teacher2d = z_t.ndim() == 1 ? numkit::reshape(z_t.detach(), {1, v}) : z_t.detach();
  Tensor student2d = z_s.ndim() == 1 ? numkit::reshape(z_s, {1, v}) : z_s;

  // Teacher probabilities are constants; gradient reaches z_s only.
  Tensor st = soften(teacher2d, tau);

  double const_term = 0.0;  // sum st * log st, with 0 log 0 = 0
  for (double p : st.data())
    if (p > 0.0) const_term += p * std::log(p);

  Tensor logq = numkit::log_softmax(numkit::scale(student2d, 1.0 / tau));
  Tensor cross = numkit::sum(numkit::mul(st, logq));
  Tensor kl_term = numkit::scale(numkit::sub(Tensor::scalar(const_term), cross), tau * tau / rows);

  if (lambda == 0.0) return kl_term;
  Tensor ce = numkit::cross_entropy_mean(student2d, y);
  return numkit::add(kl_term, numkit::scale(ce, lambda));
}

lm::ModelParams build_student(const steal::StolenProjection& stolen, int depth,
                              const StudentArch& arch, uint64_t seed) {
  if (depth < 1) throw ParameterError("build_student: depth must be >= 1");
  if (!stolen.w_hat.defined() || stolen.w_hat.ndim() != 2)
    throw ParameterError("build_student: stolen projection missing");

  const int v = stolen.w_hat.dim(0);
  const int d = stolen.w_hat.dim(1);

  lm::ModelConfig cfg;
  cfg.vocab_size = v;
  cfg.hidden_dim = d;
  cfg.num_layers = depth;
  cfg.context_len = arch.context_len;
  cfg.ff_mult = arch.ff_mult;
  cfg.tie_embedding = true;
  if (arch.num_heads > 0) {
    cfg.num_heads = arch.num_heads;
  } else {
    cfg.num_heads = 1;
    for (int h : {8, 4, 2})
      if (d % h == 0) {
        cfg.num_heads = h;
        break;
      }
  }

  // Characteristic row norm of w_hat sets the input and output scale.
  double sq = 0.0;
  for (double x : stolen.w_hat.data()) sq += x * x;
  const double row_norm = std::sqrt(sq / v);
  if (row_norm <= 0.0) throw ParameterError("build_student: stolen projection is zero");
  cfg.embedding_scale = 1.0 / row_norm;

  lm::ModelParams p = lm::ModelParams::init(cfg, seed);
  p.projection.data() = stolen.w_hat.data();  // tied: embedding shares these bytes
  const double gain0 = 1.0 / (row_norm * std::sqrt(static_cast<double>(d)));
  std::fill(p.final_g.data().begin(), p.final_g.data().end(), gain0);
  p.set_group_frozen("projection", true);
  return p;
}

Tensor teacher_targets(const TeacherSource& src, const std::vector<int>& window) {
  if (src.oracle) {
    // API access: one query, last position only.
    oracle::TopKResponse resp = src.oracle->query_topk(window);
    const int v = src.oracle->vocab_size();
    Tensor row = Tensor::zeros({1, v});
    double min_seen = 0.0;
    bool first = true;
    for (const auto& e : resp.entries) {
      row.at(0, e.token_id) = e.logit;
      if (first || e.logit < min_seen) min_seen = e.logit;
      first = false;
    }
    if (static_cast<int>(resp.entries.size()) < v) {
      std::vector<bool> seen(static_cast<size_t>(v), false);
      for (const auto& e : resp.entries) seen[static_cast<size_t>(e.token_id)] = true;
      for (int j = 0; j < v; ++j)
        if (!seen[static_cast<size_t>(j)]) row.at(0, j) = min_seen;
    }
    return row;
  }

  if (!src.model) throw ParameterError("teacher_targets: no teacher access configured");
  numkit::NoGradGuard ng;
  Tensor logits = lm::forward_logits(*src.model, window).detach();
  if (src.mode == DistillConfig::TeacherMode::Full) return logits;

  const int k = src.topk_k;
  const int n = logits.dim(0), v = logits.dim(1);
  if (k >= v) return logits;  // boundary: topk_renorm(V) equals full mode
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(v);
    for (int j = 0; j < v; ++j) row[j] = logits.at(i, j);
    std::vector<double> sorted = row;
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                     std::greater<double>());
    const double kth = sorted[static_cast<size_t>(k - 1)];
    // keep the k largest (ties resolved toward keeping), floor the rest
    for (int j = 0; j < v; ++j)
      if (row[j] < kth) logits.at(i, j) = kth;
  }
  return logits;
}

std::vector<StudentRun> train_distill(const TeacherSource& teacher,
                                      std::vector<lm::ModelParams*>& students,
                                      const std::vector<std::vector<int>>& windows,
                                      const DistillConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::vector<StudentRun> runs;
  if (windows.empty()) throw ParameterError("train_distill: no prompt windows");
  for (const auto& w : windows)
    if (w.size() < 2) throw ParameterError("train_distill: windows need >= 2 tokens");

  const bool oracle_mode = teacher.oracle != nullptr;

  for (size_t si = 0; si < students.size(); ++si) {
    lm::ModelParams& student = *students[si];
    StudentRun run;
    run.depth = student.cfg.num_layers;

    lm::OptConfig opt;
    opt.lr = cfg.lr;
    opt.warmup_steps = cfg.warmup_steps;
    lm::AdamOptimizer adam(student, opt);
    std::mt19937_64 rng(seed ^ (0x5851f42d4c957f2dull * (run.depth + 1)));
    int step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const double tau = cfg.tau.for_epoch(epoch, cfg.epochs);
      const auto t0 = std::chrono::steady_clock::now();

      std::vector<size_t> order(windows.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);

      double kd_sum = 0.0, ce_sum = 0.0;
      int batches = 0;
      for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
        adam.zero_grad();
        Tensor total;
        double ce_batch = 0.0;
        const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
        for (size_t bi = b0; bi < b1; ++bi) {
          const auto& w = windows[order[bi]];
          std::vector<int> input(w.begin(), w.end() - 1);
          std::vector<int> labels(w.begin() + 1, w.end());

          Tensor z_t;
          if (!cfg.ce_only) {
            try {
              z_t = teacher_targets(teacher, input);
            } catch (const oracle::BudgetExceeded&) {
              throw PartialTrainingError("train_distill: teacher budget exhausted in epoch " +
                                             std::to_string(epoch),
                                         epoch - 1);
            }
          }

          Tensor z_s = lm::forward_logits(student, input);
          std::vector<int> y = labels;
          if (oracle_mode && !cfg.ce_only) {
            // teacher gave only the last position
            z_s = numkit::slice_rows(z_s, z_s.dim(0) - 1, z_s.dim(0));
            y = {labels.back()};
          }
          Tensor loss = cfg.ce_only ? numkit::cross_entropy_mean(z_s, y)
                                    : kd_loss(z_t, z_s, y, tau, cfg.lambda);
          {
            numkit::NoGradGuard ng;
            Tensor ce = numkit::cross_entropy_mean(z_s.detach(), y);
            ce_batch += ce.value();
          }
          total = total.defined() ? numkit::add(total, loss) : loss;
        }
        const double count = static_cast<double>(b1 - b0);
        Tensor batch_loss = numkit::scale(total, 1.0 / count);
        const double lv = batch_loss.value();
        if (!std::isfinite(lv))
          throw TrainingError("train_distill: loss diverged for depth " +
                                  std::to_string(run.depth) + " at step " + std::to_string(step),
                              run.depth, step);
        batch_loss.backward();
        adam.step(lm::warmup_scale(step, opt.warmup_steps));
        ++step;
        ++batches;
        ce_sum += ce_batch / count;
        kd_sum += cfg.ce_only ? 0.0 : lv - cfg.lambda * (ce_batch / count);
      }

      EpochStats es;
      es.epoch = epoch;
      es.depth = run.depth;
      es.tau = tau;
      es.mean_kd_loss = batches ? kd_sum / batches : 0.0;
      es.mean_ce_loss = batches ? ce_sum / batches : 0.0;
      es.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      run.epochs.push_back(es);
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

void write_training_log(const std::string& path, const std::vector<StudentRun>& runs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DistillError("cannot write training log: " + path);
  os << "epoch,student_depth,tau,mean_kd_loss,mean_ce_loss,wall_time_s\n";
  char buf[256];
  for (const auto& run : runs)
    for (const auto& e : run.epochs) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.6g,%.12g,%.12g,%.6g\n", e.epoch, e.depth, e.tau,
                    e.mean_kd_loss, e.mean_ce_loss, e.wall_time_s);
      os << buf;
    }
}

}  // namespace distill
