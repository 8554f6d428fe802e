#include "evalkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace evalkit {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw EvalError("cannot write " + path);
  return os;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {
      {"model_name", model_name},
      {"is_teacher", is_teacher},
      {"depth", depth},
      {"param_count", param_count},
      {"nll", nll},
      {"ppl", ppl},
      {"nll_total", nll_total},
      {"eval_positions", eval_positions},
      {"delta_ppl_pct", delta_ppl_pct},
      {"kl_to_teacher", kl_to_teacher},
      {"ood", {{"nll", ood_nll}, {"ppl", ood_ppl}, {"delta_ppl_pct", ood_delta_ppl_pct},
               {"kl_to_teacher", ood_kl_to_teacher}}},
      {"hidden_cosine", hidden_cosine},
      {"alignment_residual", alignment_residual},
      {"prob_align_sigma", prob_align_sigma},
      {"prob_align_sigma_sq", prob_align_sigma_sq},
      {"unique_20grams", unique_20grams},
      {"memorization_rate", memorization_rate},
      {"memorization_label", memorization_label},
      {"mem_match_err", mem_match_err},
      {"aic", aic},
      {"aicc", aicc_valid ? nlohmann::json(aicc) : nlohmann::json()},
      {"aicc_valid", aicc_valid},
      {"delta_aic", delta_aic},
      {"delta_aicc", aicc_valid ? nlohmann::json(delta_aicc) : nlohmann::json()},
      {"speedup_pct", speedup_pct},
      {"speedup_spread_pct", speedup_spread_pct},
      {"size_reduction_pct", size_reduction_pct},
      {"ppl_per_param", std::isnan(ppl_per_param) ? nlohmann::json() : nlohmann::json(ppl_per_param)},
      {"ood_ppl_per_param",
       std::isnan(ood_ppl_per_param) ? nlohmann::json() : nlohmann::json(ood_ppl_per_param)},
      // metric definitions that the tables leave open; see the writers
      {"definitions",
       {{"memorization_label", "tercile of memorization_rate within the student set"},
        {"mem_match_err", "greedy next-token disagreement rate"},
        {"prob_align_sigma", "stddev of (p_student - p_teacher); sigma_sq also emitted"}}}};
}

void finalize_relative_fields(std::vector<EvalReport>& reports) {
  const EvalReport* teacher = nullptr;
  for (const auto& r : reports)
    if (r.is_teacher) teacher = &r;
  if (!teacher) throw EvalError("finalize_relative_fields: no teacher row");

  for (auto& r : reports) {
    r.delta_ppl_pct = (r.ppl / teacher->ppl - 1.0) * 100.0;
    r.ood_delta_ppl_pct = (r.ood_ppl / teacher->ood_ppl - 1.0) * 100.0;
    r.size_reduction_pct = size_reduction_pct(teacher->param_count, r.param_count);
    const double saved_m =
        static_cast<double>(teacher->param_count - r.param_count) / 1e6;
    r.ppl_per_param = r.is_teacher ? 0.0 : ppl_per_param(r.ppl - teacher->ppl, saved_m);
    r.ood_ppl_per_param =
        r.is_teacher ? 0.0 : ppl_per_param(r.ood_ppl - teacher->ood_ppl, saved_m);
  }

  double min_aic = reports[0].aic;
  for (const auto& r : reports) min_aic = std::min(min_aic, r.aic);
  bool any_aicc = false;
  double min_aicc = 0.0;
  for (const auto& r : reports)
    if (r.aicc_valid) {
      min_aicc = any_aicc ? std::min(min_aicc, r.aicc) : r.aicc;
      any_aicc = true;
    }
  for (auto& r : reports) {
    r.delta_aic = r.aic - min_aic;
    r.delta_aicc = r.aicc_valid && any_aicc ? r.aicc - min_aicc : 0.0;
  }

  // memorization terciles over the students; teacher stays "Baseline"
  std::vector<double> rates;
  for (const auto& r : reports)
    if (!r.is_teacher) rates.push_back(r.memorization_rate);
  std::sort(rates.begin(), rates.end());
  auto label = [&](double rate) -> std::string {
    if (rates.size() < 2) return "Mid";
    const double lo = rates[(rates.size() - 1) / 3];
    const double hi = rates[(rates.size() - 1) * 2 / 3];
    if (rate <= lo) return "Low";
    if (rate >= hi && hi > lo) return "High";
    return "Mid";
  };
  for (auto& r : reports) r.memorization_label = r.is_teacher ? "Baseline" : label(r.memorization_rate);
}

void write_model_report_json(const std::string& path, const EvalReport& report) {
  auto os = open_out(path);
  os << report.to_json().dump(2) << "\n";
}

void write_combined_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "model,depth,params,nll,ppl,delta_ppl_pct,kl,cos_sim,memorization_rate,"
        "memorization_label,mem_match_err,speedup_pct,size_reduction_pct\n";
  for (const auto& r : reports) {
    os << r.model_name << "," << r.depth << "," << r.param_count << "," << num(r.nll) << ","
       << num(r.ppl) << "," << num(r.delta_ppl_pct) << "," << num(r.kl_to_teacher) << ","
       << num(r.hidden_cosine) << "," << num(r.memorization_rate) << "," << r.memorization_label
       << "," << num(r.mem_match_err) << "," << num(r.speedup_pct) << ","
       << num(r.size_reduction_pct) << "\n";
  }
}

void write_ood_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "model,depth,nll,ppl,delta_ppl_pct,kl\n";
  for (const auto& r : reports)
    os << r.model_name << "," << r.depth << "," << num(r.ood_nll) << "," << num(r.ood_ppl) << ","
       << num(r.ood_delta_ppl_pct) << "," << num(r.ood_kl_to_teacher) << "\n";
}

void write_fig3_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "model,p_teacher,p_student\n";
  for (const auto& r : reports) {
    if (r.is_teacher) continue;
    for (const auto& [pt, ps] : r.prob_pairs)
      os << r.model_name << "," << num(pt) << "," << num(ps) << "\n";
  }
}

void write_fig4_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "model,params,unique_20grams\n";
  for (const auto& r : reports)
    os << r.model_name << "," << r.param_count << "," << r.unique_20grams << "\n";
}

void write_fig5_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  auto os = open_out(path);
  os << "model,delta_aic,delta_aicc,aicc_valid\n";
  for (const auto& r : reports) {
    if (r.is_teacher) continue;
    os << r.model_name << "," << num(r.delta_aic) << ","
       << (r.aicc_valid ? num(r.delta_aicc) : "nan") << "," << (r.aicc_valid ? 1 : 0) << "\n";
  }
}

void write_fig6_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  const EvalReport* teacher = nullptr;
  for (const auto& r : reports)
    if (r.is_teacher) teacher = &r;
  if (!teacher) throw EvalError("write_fig6_csv: no teacher row");
  auto os = open_out(path);
  os << "model,corpus,norm_params,norm_ppl\n";
  for (const auto& r : reports) {
    const double np = static_cast<double>(r.param_count) / teacher->param_count;
    os << r.model_name << ",in_distribution," << num(np) << "," << num(r.ppl / teacher->ppl)
       << "\n";
    os << r.model_name << ",out_of_distribution," << num(np) << ","
       << num(r.ood_ppl / teacher->ood_ppl) << "\n";
  }
}

void write_table4_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  const EvalReport* teacher = nullptr;
  for (const auto& r : reports)
    if (r.is_teacher) teacher = &r;
  if (!teacher) throw EvalError("write_table4_csv: no teacher row");
  auto os = open_out(path);
  os << "model,delta_ppl_in,delta_ppl_ood,ppl_per_param_in,ppl_per_param_ood\n";
  for (const auto& r : reports) {
    if (r.is_teacher) continue;
    os << r.model_name << "," << num(r.ppl - teacher->ppl) << ","
       << num(r.ood_ppl - teacher->ood_ppl) << "," << num(r.ppl_per_param) << ","
       << num(r.ood_ppl_per_param) << "\n";
  }
}

}  // namespace evalkit
