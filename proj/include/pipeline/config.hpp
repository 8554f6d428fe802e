#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distill/distill.hpp"
#include "oracle/oracle.hpp"

namespace pipeline {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Minimal TOML-style reader: [section] headers, key = value pairs, with
// strings, numbers, booleans and flat numeric arrays. Comments start with #.
class KvFile {
 public:
  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_number(const std::string& section, const std::string& key, double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<int> get_int_array(const std::string& section, const std::string& key,
                                 const std::vector<int>& fallback) const;

 private:
  // section -> key -> raw value text
  std::map<std::string, std::map<std::string, std::string>> values_;
};

struct CorpusConfig {
  std::string train_path = "corpus/train.txt";
  double eval_split = 0.1;  // trailing fraction held out in-distribution
  std::string ood_path = "corpus/ood.txt";
  std::string tokenizer = "char_ascii";  // byte | char_ascii | char_corpus
};

struct TeacherConfig {
  int hidden_dim = 64;
  int num_layers = 6;
  int num_heads = 4;
  int context_len = 48;
  int ff_mult = 4;
  bool tie_embedding = false;
  int steps = 1200;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup_steps = 100;
};

struct StealConfig {
  int n = 128;
  std::string prompt_source = "uniform";  // uniform | corpus
  int prompt_len = 12;
  double noise_floor_rel = 1e-10;
  // ALS knobs for k < V runs
  int als_max_iters = 500;
  double als_tol = 1e-9;
  bool als_strict = false;  // structured top-k masks are exploratory
};

struct EvalConfig {
  int64_t max_positions = 6000;
  int64_t prob_sample_n = 400;
  int ngram_n = 20;
  int gen_tokens = 1500;
  double gen_temperature = 1.0;
  int bench_reps = 5;
  int bench_gen_len = 24;
  double calib_fraction = 0.5;
  int mem_match_prompts = 30;
};

struct RunConfig {
  uint64_t seed = 42;
  std::string out_dir = "out/run";
  CorpusConfig corpus;
  TeacherConfig teacher;
  oracle::OracleConfig oracle;
  StealConfig steal;
  distill::DistillConfig distill;
  std::string distill_teacher_access = "direct";  // direct | oracle
  int distill_num_windows = 400;
  int ce_baseline_depth = 0;  // 0 disables the CE-only ablation student
  EvalConfig eval;

  void validate() const;  // referenced paths must exist
  std::string serialize() const;  // resolved values, TOML-style
};

RunConfig load_run_config(const std::string& path);
RunConfig config_from_kv(const KvFile& kv);

}  // namespace pipeline
