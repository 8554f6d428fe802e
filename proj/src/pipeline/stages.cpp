#include "pipeline/stages.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "common/hash.hpp"
#include "distill/distill.hpp"
#include "evalkit/metrics.hpp"
#include "evalkit/report.hpp"
#include "lm/train.hpp"
#include "oracle/wire.hpp"
#include "steal/completion.hpp"
#include "steal/steal.hpp"

namespace pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string teacher_ckpt_rel() { return "checkpoints/teacher.lllb"; }
std::string w_hat_rel() { return "checkpoints/w_hat.lllb"; }
std::string student_ckpt_rel(int depth) {
  return "checkpoints/student_d" + std::to_string(depth) + ".lllb";
}
std::string ce_baseline_rel(int depth) {
  return "checkpoints/ce_baseline_d" + std::to_string(depth) + ".lllb";
}

namespace {

uint64_t stage_seed(const RunConfig& cfg, const char* stage) {
  return common::fnv1a(stage, std::strlen(stage), cfg.seed ^ 0x8000000000000001ull);
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open corpus file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Writes the resolved config and prepares the directory tree. Returns the
// manifest path.
std::string prepare_run_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  fs::create_directories(cfg.out_dir + "/checkpoints");
  fs::create_directories(cfg.out_dir + "/reports");
  fs::create_directories(cfg.out_dir + "/plots");
  std::ofstream os(cfg.out_dir + "/resolved-config.toml", std::ios::trunc);
  if (!os) throw ConfigError("cannot write resolved config under " + cfg.out_dir);
  os << cfg.serialize();
  return cfg.out_dir + "/manifest.json";
}

void finish_stage(const RunConfig& cfg, Manifest& manifest, const std::string& stage,
                  std::vector<std::string> artifacts,
                  const std::vector<std::string>& errors = {}) {
  artifacts.push_back("resolved-config.toml");
  manifest.record_stage(stage, cfg.out_dir, artifacts, errors);
  manifest.set_config_hash(common::hex64(common::fnv1a(cfg.serialize())));
  manifest.set_timestamp(stage, iso_now());
  manifest.save(cfg.out_dir + "/manifest.json");
}

lm::Checkpoint require_checkpoint(const RunConfig& cfg, const std::string& rel) {
  const std::string path = cfg.out_dir + "/" + rel;
  if (!fs::exists(path)) throw MissingArtifactError("missing checkpoint: " + path);
  return lm::load_checkpoint(path);
}

uint64_t remaining_budget(const RunConfig& cfg, const Manifest& manifest) {
  const auto led = manifest.ledger();
  if (led.total >= cfg.oracle.max_queries) return 0;
  return cfg.oracle.max_queries - led.total;
}

struct StealOutput {
  steal::StolenProjection projection;
  oracle::LedgerSnapshot ledger;
};

StealOutput run_steal(const RunConfig& cfg, const CorpusTokens& corpus,
                      const lm::ModelParams& teacher, uint64_t budget) {
  oracle::OracleConfig ocfg = cfg.oracle;
  ocfg.max_queries = budget;
  oracle::LocalOracle o(teacher, ocfg);
  o.set_stage(oracle::Stage::Steal);

  const auto t0 = std::chrono::steady_clock::now();
  const steal::PromptSource source = cfg.steal.prompt_source == "corpus"
                                         ? steal::PromptSource::CorpusSnippets
                                         : steal::PromptSource::UniformRandom;
  auto prompts = steal::sample_prompts(cfg.steal.n, teacher.cfg.context_len,
                                       teacher.cfg.vocab_size, stage_seed(cfg, "steal-prompts"),
                                       source, &corpus.train, cfg.steal.prompt_len);
  steal::LogitMatrix q = steal::collect_logit_matrix(o, prompts);

  json als_diag;
  if (!q.fully_observed()) {
    // Top-k leak: complete at the information cap k-1 before estimating.
    steal::AlsConfig als;
    als.max_iters = cfg.steal.als_max_iters;
    als.tol = cfg.steal.als_tol;
    als.strict = cfg.steal.als_strict;
    als.seed = stage_seed(cfg, "steal-als");
    const int rank_cap = std::max(1, (ocfg.k == oracle::kFullLogits ? 1 : ocfg.k) - 1);
    steal::CompletionResult comp = steal::complete_masked(q, rank_cap, als);
    als_diag = {{"iterations", comp.diag.iterations},
                {"final_rmse", comp.diag.final_rmse},
                {"converged", comp.diag.converged},
                {"rank_used", rank_cap}};
    q = std::move(comp.completed);
  }

  steal::StolenProjection sp = steal::recover_projection_auto(q, cfg.steal.noise_floor_rel);
  steal::ResidualReport res = steal::subspace_residual(sp.w_hat, teacher.projection);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json report = {
      {"n", cfg.steal.n},
      {"k", cfg.oracle.k == oracle::kFullLogits ? json("full") : json(cfg.oracle.k)},
      {"d_hat", sp.d_hat},
      {"spectrum", std::vector<double>(sp.spectrum.begin(),
                                       sp.spectrum.begin() +
                                           std::min<size_t>(sp.spectrum.size(), 64))},
      {"gap_scores", sp.gap_scores},
      {"residual", res.residual},
      {"rank_deficit", res.rank_deficit},
      {"wall_time_s", wall},
      {"queries_used", o.ledger().steal}};
  if (!als_diag.is_null()) report["als"] = als_diag;
  std::ofstream os(cfg.out_dir + "/reports/steal_report.json", std::ios::trunc);
  os << report.dump(2) << "\n";

  lm::save_bundle(cfg.out_dir + "/" + w_hat_rel(),
                  {{"kind", "w_hat"},
                   {"vocab_size", sp.w_hat.dim(0)},
                   {"d_hat", sp.d_hat},
                   {"spectrum_head", std::vector<double>(
                                         sp.spectrum.begin(),
                                         sp.spectrum.begin() +
                                             std::min<size_t>(sp.spectrum.size(), 8))}},
                  {{"w_hat", sp.w_hat.detach()}});
  return {std::move(sp), o.ledger()};
}

steal::StolenProjection load_w_hat(const RunConfig& cfg) {
  const std::string path = cfg.out_dir + "/" + w_hat_rel();
  if (!fs::exists(path)) throw MissingArtifactError("missing stolen projection: " + path);
  lm::Bundle b = lm::load_bundle(path);
  steal::StolenProjection sp;
  sp.d_hat = b.meta.at("d_hat").get<int>();
  for (auto& m : b.matrices)
    if (m.name == "w_hat") sp.w_hat = m.tensor;
  if (!sp.w_hat.defined()) throw MissingArtifactError("bundle has no w_hat matrix: " + path);
  return sp;
}

std::vector<std::vector<int>> distill_windows(const RunConfig& cfg,
                                              const std::vector<int>& train, int context_len) {
  const int len = context_len + 1;
  if (static_cast<int>(train.size()) <= len)
    throw ConfigError("train corpus too small for distillation windows");
  std::mt19937_64 rng(stage_seed(cfg, "distill-windows"));
  std::uniform_int_distribution<size_t> start(0, train.size() - static_cast<size_t>(len) - 1);
  std::vector<std::vector<int>> windows(static_cast<size_t>(cfg.distill_num_windows));
  for (auto& w : windows) {
    const size_t s0 = start(rng);
    w.assign(train.begin() + s0, train.begin() + s0 + len);
  }
  return windows;
}

struct LedgerAccumulator {
  oracle::LedgerSnapshot base;
  void add_steal(uint64_t n) { base.steal += n; base.total += n; }
  void add_distill(uint64_t n) { base.distill += n; base.total += n; }
};

}  // namespace

CorpusTokens load_corpus(const RunConfig& cfg) {
  const std::string train_text = read_text_file(cfg.corpus.train_path);
  const std::string ood_text = read_text_file(cfg.corpus.ood_path);
  CorpusTokens out;
  if (cfg.corpus.tokenizer == "byte")
    out.vocab = lm::Vocab::bytes();
  else if (cfg.corpus.tokenizer == "char_corpus")
    out.vocab = lm::Vocab::from_corpus(train_text);
  else
    out.vocab = lm::Vocab::printable_ascii();

  std::vector<int> all = out.vocab.encode(train_text);
  const size_t split = static_cast<size_t>(all.size() * (1.0 - cfg.corpus.eval_split));
  out.train.assign(all.begin(), all.begin() + split);
  out.eval_in.assign(all.begin() + split, all.end());
  out.ood = out.vocab.encode(ood_text);
  return out;
}

Manifest load_or_create_manifest(const RunConfig& cfg) {
  const std::string path = cfg.out_dir + "/manifest.json";
  if (fs::exists(path)) return Manifest::load(path);
  return Manifest{};
}

void cmd_train_teacher(const RunConfig& cfg) {
  prepare_run_dir(cfg);
  Manifest manifest = load_or_create_manifest(cfg);
  CorpusTokens corpus = load_corpus(cfg);

  lm::ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.hidden_dim = cfg.teacher.hidden_dim;
  mc.num_layers = cfg.teacher.num_layers;
  mc.num_heads = cfg.teacher.num_heads;
  mc.context_len = cfg.teacher.context_len;
  mc.ff_mult = cfg.teacher.ff_mult;
  mc.tie_embedding = cfg.teacher.tie_embedding;
  try {
    mc.validate();
  } catch (const lm::ConfigError& e) {
    throw ConfigError(std::string("teacher config: ") + e.what());
  }

  lm::ModelParams teacher = lm::ModelParams::init(mc, stage_seed(cfg, "teacher-init"));
  lm::OptConfig opt;
  opt.lr = cfg.teacher.lr;
  opt.steps = cfg.teacher.steps;
  opt.batch_size = cfg.teacher.batch_size;
  opt.warmup_steps = cfg.teacher.warmup_steps;
  lm::TrainHistory history =
      lm::train_teacher(teacher, corpus.train, opt, stage_seed(cfg, "teacher-train"));

  lm::save_checkpoint(cfg.out_dir + "/" + teacher_ckpt_rel(), teacher, corpus.vocab);
  {
    std::ofstream os(cfg.out_dir + "/reports/teacher_training.csv", std::ios::trunc);
    os << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < history.loss.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", i, history.loss[i]);
      os << buf;
    }
  }
  finish_stage(cfg, manifest, "train_teacher",
               {teacher_ckpt_rel(), "reports/teacher_training.csv"});
}

void cmd_steal(const RunConfig& cfg) {
  prepare_run_dir(cfg);
  Manifest manifest = load_or_create_manifest(cfg);
  CorpusTokens corpus = load_corpus(cfg);
  lm::Checkpoint teacher = require_checkpoint(cfg, teacher_ckpt_rel());

  StealOutput out = run_steal(cfg, corpus, teacher.params, cfg.oracle.max_queries);

  auto led = manifest.ledger();
  led.steal = out.ledger.steal;
  led.total = led.steal + led.distill;
  manifest.set_ledger(led);
  finish_stage(cfg, manifest, "steal", {w_hat_rel(), "reports/steal_report.json"});
}

void cmd_distill(const RunConfig& cfg) {
  prepare_run_dir(cfg);
  Manifest manifest = load_or_create_manifest(cfg);
  CorpusTokens corpus = load_corpus(cfg);
  lm::Checkpoint teacher = require_checkpoint(cfg, teacher_ckpt_rel());
  steal::StolenProjection stolen = load_w_hat(cfg);

  auto windows = distill_windows(cfg, corpus.train, teacher.params.cfg.context_len);

  distill::StudentArch arch;
  arch.context_len = teacher.params.cfg.context_len;
  arch.ff_mult = teacher.params.cfg.ff_mult;

  // The oracle path draws on whatever budget the steal stage left over.
  oracle::OracleConfig ocfg = cfg.oracle;
  ocfg.max_queries = remaining_budget(cfg, manifest);
  oracle::LocalOracle api(teacher.params, ocfg);
  api.set_stage(oracle::Stage::Distill);

  distill::TeacherSource src;
  if (cfg.distill_teacher_access == "oracle") {
    src.oracle = &api;
  } else {
    src.model = &teacher.params;
    src.mode = cfg.distill.teacher_mode;
    src.topk_k = cfg.distill.topk_k;
  }

  std::vector<std::string> artifacts;
  std::vector<std::string> errors;
  std::vector<distill::StudentRun> all_runs;

  auto train_one = [&](int depth, bool ce_only, const std::string& rel) {
    distill::DistillConfig dcfg = cfg.distill;
    dcfg.student_depths = {depth};
    dcfg.ce_only = ce_only;
    lm::ModelParams student = distill::build_student(
        stolen, depth, arch, stage_seed(cfg, ce_only ? "ce-baseline" : "student") ^ depth);
    std::vector<lm::ModelParams*> group = {&student};
    try {
      auto runs = distill::train_distill(src, group, windows, dcfg, stage_seed(cfg, "distill"));
      for (auto& r : runs) all_runs.push_back(std::move(r));
      lm::save_checkpoint(cfg.out_dir + "/" + rel, student, corpus.vocab);
      artifacts.push_back(rel);
    } catch (const std::exception& e) {
      errors.push_back((ce_only ? "ce_baseline depth " : "student depth ") +
                       std::to_string(depth) + ": " + e.what());
    }
  };

  for (int depth : cfg.distill.student_depths)
    train_one(depth, false, student_ckpt_rel(depth));
  if (cfg.ce_baseline_depth > 0)
    train_one(cfg.ce_baseline_depth, true, ce_baseline_rel(cfg.ce_baseline_depth));

  distill::write_training_log(cfg.out_dir + "/reports/distill_log.csv", all_runs);
  artifacts.push_back("reports/distill_log.csv");

  auto led = manifest.ledger();
  led.distill = api.ledger().distill;
  led.total = led.steal + led.distill;
  manifest.set_ledger(led);
  finish_stage(cfg, manifest, "distill", artifacts, errors);
  if (!errors.empty())
    throw distill::DistillError("distill: " + std::to_string(errors.size()) +
                                " student(s) failed; see manifest");
}

namespace {

evalkit::EvalReport evaluate_model(const RunConfig& cfg, const std::string& name,
                                   const lm::ModelParams& teacher, const lm::ModelParams& model,
                                   const CorpusTokens& corpus, bool is_teacher) {
  const auto& ev = cfg.eval;
  evalkit::EvalReport r;
  r.model_name = name;
  r.is_teacher = is_teacher;
  r.depth = model.cfg.num_layers;
  r.param_count = model.param_count();

  evalkit::NllPpl in = evalkit::nll_ppl(model, corpus.eval_in, ev.max_positions);
  r.nll = in.nll;
  r.ppl = in.ppl;
  r.nll_total = in.nll_total;
  r.eval_positions = in.positions;
  evalkit::NllPpl ood = evalkit::nll_ppl(model, corpus.ood, ev.max_positions);
  r.ood_nll = ood.nll;
  r.ood_ppl = ood.ppl;

  r.kl_to_teacher =
      is_teacher ? 0.0 : evalkit::kl_divergence(teacher, model, corpus.eval_in, ev.max_positions);
  r.ood_kl_to_teacher =
      is_teacher ? 0.0 : evalkit::kl_divergence(teacher, model, corpus.ood, ev.max_positions);

  evalkit::HiddenCosine hc = evalkit::hidden_cosine(teacher, model, corpus.eval_in,
                                                    ev.calib_fraction, ev.max_positions);
  r.hidden_cosine = hc.mean_cosine;
  r.alignment_residual = hc.fit_residual;

  evalkit::ProbAlignment pa =
      evalkit::prob_alignment(teacher, model, corpus.eval_in, ev.prob_sample_n, ev.max_positions);
  r.prob_align_sigma = pa.sigma;
  r.prob_align_sigma_sq = pa.sigma_sq;
  r.prob_pairs = std::move(pa.pairs);

  evalkit::GenConfig gen;
  gen.total_tokens = ev.gen_tokens;
  gen.temperature = ev.gen_temperature;
  gen.seed = stage_seed(cfg, "eval-gen") ^ common::fnv1a(name);
  std::vector<int> stream = evalkit::generate_stream(model, gen);
  r.unique_20grams = evalkit::unique_ngrams(stream, ev.ngram_n);
  r.memorization_rate = evalkit::memorization_rate(stream, corpus.train, ev.ngram_n);

  // greedy-disagreement prompts come from the held-out corpus
  std::vector<std::vector<int>> prompts;
  const int plen = std::min(teacher.cfg.context_len, 24);
  for (int i = 0; i < ev.mem_match_prompts; ++i) {
    const size_t s0 = (static_cast<size_t>(i) * 131) % (corpus.eval_in.size() - plen - 1);
    prompts.emplace_back(corpus.eval_in.begin() + s0, corpus.eval_in.begin() + s0 + plen);
  }
  r.mem_match_err = is_teacher ? 0.0 : evalkit::mem_match_err(teacher, model, prompts);

  evalkit::AicResult aic = evalkit::aic_aicc(r.nll_total, r.param_count, r.eval_positions);
  r.aic = aic.aic;
  r.aicc_valid = aic.aicc.has_value();
  r.aicc = aic.aicc.value_or(0.0);

  evalkit::BenchConfig bench;
  const int bplen = std::min(teacher.cfg.context_len, 16);
  bench.prompt.assign(corpus.eval_in.begin(), corpus.eval_in.begin() + bplen);
  bench.gen_len = ev.bench_gen_len;
  bench.repetitions = ev.bench_reps;
  evalkit::SpeedSize ss = evalkit::speed_size(teacher, model, bench);
  r.speedup_pct = ss.speedup_pct;
  r.speedup_spread_pct = ss.spread_pct;
  return r;
}

}  // namespace

void cmd_eval(const RunConfig& cfg) {
  prepare_run_dir(cfg);
  Manifest manifest = load_or_create_manifest(cfg);
  CorpusTokens corpus = load_corpus(cfg);
  lm::Checkpoint teacher = require_checkpoint(cfg, teacher_ckpt_rel());

  // collect the models; report every missing checkpoint at once
  std::vector<std::pair<std::string, std::string>> wanted;  // name, rel path
  for (int depth : cfg.distill.student_depths)
    wanted.emplace_back("student-" + std::to_string(depth), student_ckpt_rel(depth));
  if (cfg.ce_baseline_depth > 0)
    wanted.emplace_back("ce-baseline-" + std::to_string(cfg.ce_baseline_depth),
                        ce_baseline_rel(cfg.ce_baseline_depth));
  std::vector<std::string> missing;
  std::vector<std::pair<std::string, lm::Checkpoint>> models;
  for (const auto& [name, rel] : wanted) {
    const std::string path = cfg.out_dir + "/" + rel;
    if (!fs::exists(path)) {
      missing.push_back(path);
      continue;
    }
    models.emplace_back(name, lm::load_checkpoint(path));
  }
  if (!missing.empty()) {
    std::string msg = "eval: missing checkpoints:";
    for (const auto& m : missing) msg += " " + m;
    throw MissingArtifactError(msg);
  }

  std::vector<evalkit::EvalReport> reports;
  reports.push_back(
      evaluate_model(cfg, "teacher", teacher.params, teacher.params, corpus, true));
  for (const auto& [name, ckpt] : models)
    reports.push_back(evaluate_model(cfg, name, teacher.params, ckpt.params, corpus, false));
  evalkit::finalize_relative_fields(reports);

  std::vector<std::string> artifacts;
  for (const auto& r : reports) {
    const std::string rel = "reports/eval_" + r.model_name + ".json";
    evalkit::write_model_report_json(cfg.out_dir + "/" + rel, r);
    artifacts.push_back(rel);
  }
  evalkit::write_combined_csv(cfg.out_dir + "/reports/table1.csv", reports);
  evalkit::write_ood_csv(cfg.out_dir + "/reports/table2.csv", reports);
  evalkit::write_fig3_csv(cfg.out_dir + "/plots/fig3_prob_alignment.csv", reports);
  evalkit::write_fig4_csv(cfg.out_dir + "/plots/fig4_unique_20grams.csv", reports);
  evalkit::write_fig5_csv(cfg.out_dir + "/plots/fig5_delta_aic.csv", reports);
  evalkit::write_fig6_csv(cfg.out_dir + "/plots/fig6_ppl_vs_size.csv", reports);
  evalkit::write_table4_csv(cfg.out_dir + "/plots/table4_ppl_per_param.csv", reports);
  for (const char* rel :
       {"reports/table1.csv", "reports/table2.csv", "plots/fig3_prob_alignment.csv",
        "plots/fig4_unique_20grams.csv", "plots/fig5_delta_aic.csv", "plots/fig6_ppl_vs_size.csv",
        "plots/table4_ppl_per_param.csv"})
    artifacts.push_back(rel);

  finish_stage(cfg, manifest, "eval", artifacts);
}

void cmd_full_run(const RunConfig& cfg) {
  prepare_run_dir(cfg);
  struct StageDef {
    const char* name;
    void (*fn)(const RunConfig&);
  };
  const StageDef stages[] = {{"train_teacher", cmd_train_teacher},
                             {"steal", cmd_steal},
                             {"distill", cmd_distill},
                             {"eval", cmd_eval}};
  for (const auto& st : stages) {
    Manifest manifest = load_or_create_manifest(cfg);
    if (manifest.stage_intact(st.name, cfg.out_dir)) continue;  // resume after interruption
    st.fn(cfg);
    Manifest after = load_or_create_manifest(cfg);
    if (after.ledger().total > cfg.oracle.max_queries)
      throw oracle::BudgetExceeded(after.ledger().total);
  }
}

void cmd_serve_oracle(const RunConfig& cfg, int port) {
  lm::Checkpoint teacher = require_checkpoint(cfg, teacher_ckpt_rel());
  oracle::LocalOracle shared(teacher.params, cfg.oracle);
  oracle::OracleServer server(shared, port);
  server.start();
  std::fprintf(stderr, "oracle serving on 127.0.0.1:%d (V=%d, k=%s)\n", server.port(),
               shared.vocab_size(),
               shared.top_k() == oracle::kFullLogits ? "full" : std::to_string(shared.top_k()).c_str());
  for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
}

}  // namespace pipeline
