#pragma once

#include <string>
#include <vector>

#include "evalkit/metrics.hpp"
#include "json.hpp"

namespace evalkit {

// One row of the fidelity/efficiency tables plus figure payloads.
struct EvalReport {
  std::string model_name;
  bool is_teacher = false;
  int depth = 0;
  int64_t param_count = 0;

  // in-distribution corpus
  double nll = 0.0;
  double ppl = 0.0;
  double nll_total = 0.0;
  int64_t eval_positions = 0;
  double delta_ppl_pct = 0.0;
  double kl_to_teacher = 0.0;

  // out-of-distribution corpus
  double ood_nll = 0.0;
  double ood_ppl = 0.0;
  double ood_delta_ppl_pct = 0.0;
  double ood_kl_to_teacher = 0.0;

  double hidden_cosine = 0.0;
  double alignment_residual = 0.0;
  double prob_align_sigma = 0.0;
  double prob_align_sigma_sq = 0.0;
  std::vector<std::pair<double, double>> prob_pairs;

  int64_t unique_20grams = 0;
  double memorization_rate = 0.0;
  std::string memorization_label;  // tercile within the student set
  double mem_match_err = 0.0;

  double aic = 0.0;
  double aicc = 0.0;
  bool aicc_valid = false;
  double delta_aic = 0.0;
  double delta_aicc = 0.0;

  double speedup_pct = 0.0;
  double speedup_spread_pct = 0.0;
  double size_reduction_pct = 0.0;
  double ppl_per_param = 0.0;       // NaN when the parameter delta is zero
  double ood_ppl_per_param = 0.0;

  nlohmann::json to_json() const;
};

// Fills delta_aic/delta_aicc (minimum-subtracted), deltas vs the teacher
// row, per-parameter ratios and memorization terciles. The teacher row is
// the one flagged is_teacher.
void finalize_relative_fields(std::vector<EvalReport>& reports);

void write_model_report_json(const std::string& path, const EvalReport& report);
void write_combined_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_ood_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_fig3_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_fig4_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_fig5_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_fig6_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_table4_csv(const std::string& path, const std::vector<EvalReport>& reports);

}  // namespace evalkit
