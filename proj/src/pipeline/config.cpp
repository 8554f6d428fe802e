#include "pipeline/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/stat.h>

namespace pipeline {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool file_exists(const std::string& path) {
  struct stat st{};
  return ::stat(path.c_str(), &st) == 0;
}

}  // namespace

KvFile KvFile::parse_string(const std::string& text) {
  KvFile kv;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    kv.values_[section][key] = value;
  }
  return kv;
}

KvFile KvFile::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

bool KvFile::has(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

std::string KvFile::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  if (!has(section, key)) return fallback;
  std::string raw = values_.at(section).at(key);
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
    return raw.substr(1, raw.size() - 2);
  return raw;
}

double KvFile::get_number(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = values_.at(section).at(key);
  try {
    size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config [" + section + "] " + key + ": not a number: " + raw);
  }
}

int64_t KvFile::get_int(const std::string& section, const std::string& key,
                        int64_t fallback) const {
  if (!has(section, key)) return fallback;
  const double v = get_number(section, key, 0.0);
  const auto i = static_cast<int64_t>(v);
  if (static_cast<double>(i) != v)
    throw ConfigError("config [" + section + "] " + key + ": expected an integer");
  return i;
}

bool KvFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = values_.at(section).at(key);
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigError("config [" + section + "] " + key + ": expected true or false");
}

std::vector<int> KvFile::get_int_array(const std::string& section, const std::string& key,
                                       const std::vector<int>& fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = values_.at(section).at(key);
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
    throw ConfigError("config [" + section + "] " + key + ": expected [a, b, ...]");
  std::vector<int> out;
  std::string item;
  std::istringstream is(raw.substr(1, raw.size() - 2));
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("config [" + section + "] " + key + ": bad array element: " + item);
    }
  }
  return out;
}

RunConfig config_from_kv(const KvFile& kv) {
  RunConfig c;
  c.seed = static_cast<uint64_t>(kv.get_int("run", "seed", 42));
  c.out_dir = kv.get_string("run", "out_dir", c.out_dir);

  c.corpus.train_path = kv.get_string("corpus", "train_path", c.corpus.train_path);
  c.corpus.eval_split = kv.get_number("corpus", "eval_split", c.corpus.eval_split);
  c.corpus.ood_path = kv.get_string("corpus", "ood_path", c.corpus.ood_path);
  c.corpus.tokenizer = kv.get_string("corpus", "tokenizer", c.corpus.tokenizer);

  c.teacher.hidden_dim = static_cast<int>(kv.get_int("teacher", "hidden_dim", 64));
  c.teacher.num_layers = static_cast<int>(kv.get_int("teacher", "num_layers", 6));
  c.teacher.num_heads = static_cast<int>(kv.get_int("teacher", "num_heads", 4));
  c.teacher.context_len = static_cast<int>(kv.get_int("teacher", "context_len", 48));
  c.teacher.ff_mult = static_cast<int>(kv.get_int("teacher", "ff_mult", 4));
  c.teacher.tie_embedding = kv.get_bool("teacher", "tie_embedding", false);
  c.teacher.steps = static_cast<int>(kv.get_int("teacher", "steps", 1200));
  c.teacher.batch_size = static_cast<int>(kv.get_int("teacher", "batch_size", 8));
  c.teacher.lr = kv.get_number("teacher", "lr", 1e-3);
  c.teacher.warmup_steps = static_cast<int>(kv.get_int("teacher", "warmup_steps", 100));

  const std::string k = kv.get_string("oracle", "k", "full");
  c.oracle.k = (k == "full") ? oracle::kFullLogits : std::stoi(k);
  c.oracle.max_queries = static_cast<uint64_t>(kv.get_int("oracle", "max_queries", 10000));
  c.oracle.rate_limit = kv.get_number("oracle", "rate_limit", 0.0);
  const std::string deg = kv.get_string("oracle", "degradation", "none");
  if (deg == "none") {
    c.oracle.degradation.kind = oracle::Degradation::Kind::None;
  } else if (deg == "round") {
    c.oracle.degradation.kind = oracle::Degradation::Kind::Round;
    c.oracle.degradation.decimals = static_cast<int>(kv.get_int("oracle", "round_decimals", 3));
  } else if (deg == "gaussian") {
    c.oracle.degradation.kind = oracle::Degradation::Kind::GaussianNoise;
    c.oracle.degradation.sigma = kv.get_number("oracle", "noise_sigma", 0.0);
    c.oracle.degradation.noise_seed =
        static_cast<uint64_t>(kv.get_int("oracle", "noise_seed", 0));
  } else {
    throw ConfigError("config [oracle] degradation: unknown mode " + deg);
  }

  c.steal.n = static_cast<int>(kv.get_int("steal", "n", 128));
  c.steal.prompt_source = kv.get_string("steal", "prompt_source", "uniform");
  c.steal.prompt_len = static_cast<int>(kv.get_int("steal", "prompt_len", 12));
  c.steal.noise_floor_rel = kv.get_number("steal", "noise_floor_rel", 1e-10);
  c.steal.als_max_iters = static_cast<int>(kv.get_int("steal", "als_max_iters", 500));
  c.steal.als_tol = kv.get_number("steal", "als_tol", 1e-9);
  c.steal.als_strict = kv.get_bool("steal", "als_strict", false);

  c.distill.lambda = kv.get_number("distill", "lambda", 0.1);
  c.distill.tau.tau_start = kv.get_number("distill", "tau_start", 4.0);
  c.distill.tau.tau_end = kv.get_number("distill", "tau_end", 1.0);
  const std::string tau_mode = kv.get_string("distill", "tau_mode", "linear");
  c.distill.tau.mode = tau_mode == "constant" ? distill::TauSchedule::Mode::Constant
                                              : distill::TauSchedule::Mode::Linear;
  c.distill.epochs = static_cast<int>(kv.get_int("distill", "epochs", 3));
  c.distill.batch_size = static_cast<int>(kv.get_int("distill", "batch_size", 8));
  c.distill.lr = kv.get_number("distill", "lr", 1e-3);
  c.distill.warmup_steps = static_cast<int>(kv.get_int("distill", "warmup_steps", 20));
  c.distill.student_depths = kv.get_int_array("distill", "student_depths", {4, 5, 6, 7, 8});
  const std::string tm = kv.get_string("distill", "teacher_mode", "full");
  if (tm == "full") {
    c.distill.teacher_mode = distill::DistillConfig::TeacherMode::Full;
  } else if (tm == "topk_renorm") {
    c.distill.teacher_mode = distill::DistillConfig::TeacherMode::TopKRenorm;
    c.distill.topk_k = static_cast<int>(kv.get_int("distill", "topk_k", 8));
  } else {
    throw ConfigError("config [distill] teacher_mode: unknown mode " + tm);
  }
  c.distill_teacher_access = kv.get_string("distill", "teacher_access", "direct");
  c.distill_num_windows = static_cast<int>(kv.get_int("distill", "num_windows", 400));
  c.ce_baseline_depth = static_cast<int>(kv.get_int("distill", "ce_baseline_depth", 0));

  c.eval.max_positions = kv.get_int("eval", "max_positions", 6000);
  c.eval.prob_sample_n = kv.get_int("eval", "prob_sample_n", 400);
  c.eval.ngram_n = static_cast<int>(kv.get_int("eval", "ngram_n", 20));
  c.eval.gen_tokens = static_cast<int>(kv.get_int("eval", "gen_tokens", 1500));
  c.eval.gen_temperature = kv.get_number("eval", "gen_temperature", 1.0);
  c.eval.bench_reps = static_cast<int>(kv.get_int("eval", "bench_reps", 5));
  c.eval.bench_gen_len = static_cast<int>(kv.get_int("eval", "bench_gen_len", 24));
  c.eval.calib_fraction = kv.get_number("eval", "calib_fraction", 0.5);
  c.eval.mem_match_prompts = static_cast<int>(kv.get_int("eval", "mem_match_prompts", 30));
  return c;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = config_from_kv(KvFile::parse_file(path));
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (!file_exists(corpus.train_path))
    throw ConfigError("corpus.train_path does not exist: " + corpus.train_path);
  if (!file_exists(corpus.ood_path))
    throw ConfigError("corpus.ood_path does not exist: " + corpus.ood_path);
  if (corpus.eval_split <= 0.0 || corpus.eval_split >= 0.9)
    throw ConfigError("corpus.eval_split must be in (0, 0.9)");
  if (corpus.tokenizer != "byte" && corpus.tokenizer != "char_ascii" &&
      corpus.tokenizer != "char_corpus")
    throw ConfigError("corpus.tokenizer: unknown mode " + corpus.tokenizer);
  if (teacher.hidden_dim < 1 || teacher.num_layers < 0 || teacher.context_len < 2)
    throw ConfigError("teacher: bad dimensions");
  if (steal.n < 1) throw ConfigError("steal.n must be >= 1");
  if (distill_teacher_access != "direct" && distill_teacher_access != "oracle")
    throw ConfigError("distill.teacher_access must be direct or oracle");
  distill.validate();
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  char buf[128];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  // out_dir is deliberately omitted: the file lives inside the run
  // directory, and identical runs into different directories must produce
  // identical artifacts.
  os << "[run]\n";
  os << "seed = " << seed << "\n\n";
  os << "[corpus]\n";
  os << "train_path = \"" << corpus.train_path << "\"\n";
  os << "eval_split = " << num(corpus.eval_split) << "\n";
  os << "ood_path = \"" << corpus.ood_path << "\"\n";
  os << "tokenizer = \"" << corpus.tokenizer << "\"\n\n";
  os << "[teacher]\n";
  os << "hidden_dim = " << teacher.hidden_dim << "\n";
  os << "num_layers = " << teacher.num_layers << "\n";
  os << "num_heads = " << teacher.num_heads << "\n";
  os << "context_len = " << teacher.context_len << "\n";
  os << "ff_mult = " << teacher.ff_mult << "\n";
  os << "tie_embedding = " << (teacher.tie_embedding ? "true" : "false") << "\n";
  os << "steps = " << teacher.steps << "\n";
  os << "batch_size = " << teacher.batch_size << "\n";
  os << "lr = " << num(teacher.lr) << "\n";
  os << "warmup_steps = " << teacher.warmup_steps << "\n\n";
  os << "[oracle]\n";
  if (oracle.k == oracle::kFullLogits)
    os << "k = \"full\"\n";
  else
    os << "k = " << oracle.k << "\n";
  os << "max_queries = " << oracle.max_queries << "\n";
  os << "rate_limit = " << num(oracle.rate_limit) << "\n";
  switch (oracle.degradation.kind) {
    case oracle::Degradation::Kind::None:
      os << "degradation = \"none\"\n";
      break;
    case oracle::Degradation::Kind::Round:
      os << "degradation = \"round\"\n";
      os << "round_decimals = " << oracle.degradation.decimals << "\n";
      break;
    case oracle::Degradation::Kind::GaussianNoise:
      os << "degradation = \"gaussian\"\n";
      os << "noise_sigma = " << num(oracle.degradation.sigma) << "\n";
      os << "noise_seed = " << oracle.degradation.noise_seed << "\n";
      break;
  }
  os << "\n[steal]\n";
  os << "n = " << steal.n << "\n";
  os << "prompt_source = \"" << steal.prompt_source << "\"\n";
  os << "prompt_len = " << steal.prompt_len << "\n";
  os << "noise_floor_rel = " << num(steal.noise_floor_rel) << "\n";
  os << "als_max_iters = " << steal.als_max_iters << "\n";
  os << "als_tol = " << num(steal.als_tol) << "\n";
  os << "als_strict = " << (steal.als_strict ? "true" : "false") << "\n\n";
  os << "[distill]\n";
  os << "lambda = " << num(distill.lambda) << "\n";
  os << "tau_start = " << num(distill.tau.tau_start) << "\n";
  os << "tau_end = " << num(distill.tau.tau_end) << "\n";
  os << "tau_mode = \""
     << (distill.tau.mode == distill::TauSchedule::Mode::Constant ? "constant" : "linear")
     << "\"\n";
  os << "epochs = " << distill.epochs << "\n";
  os << "batch_size = " << distill.batch_size << "\n";
  os << "lr = " << num(distill.lr) << "\n";
  os << "warmup_steps = " << distill.warmup_steps << "\n";
  os << "student_depths = [";
  for (size_t i = 0; i < distill.student_depths.size(); ++i)
    os << (i ? ", " : "") << distill.student_depths[i];
  os << "]\n";
  os << "teacher_mode = \""
     << (distill.teacher_mode == distill::DistillConfig::TeacherMode::Full ? "full"
                                                                           : "topk_renorm")
     << "\"\n";
  if (distill.teacher_mode == distill::DistillConfig::TeacherMode::TopKRenorm)
    os << "topk_k = " << distill.topk_k << "\n";
  os << "teacher_access = \"" << distill_teacher_access << "\"\n";
  os << "num_windows = " << distill_num_windows << "\n";
  os << "ce_baseline_depth = " << ce_baseline_depth << "\n\n";
  os << "[eval]\n";
  os << "max_positions = " << eval.max_positions << "\n";
  os << "prob_sample_n = " << eval.prob_sample_n << "\n";
  os << "ngram_n = " << eval.ngram_n << "\n";
  os << "gen_tokens = " << eval.gen_tokens << "\n";
  os << "gen_temperature = " << num(eval.gen_temperature) << "\n";
  os << "bench_reps = " << eval.bench_reps << "\n";
  os << "bench_gen_len = " << eval.bench_gen_len << "\n";
  os << "calib_fraction = " << num(eval.calib_fraction) << "\n";
  os << "mem_match_prompts = " << eval.mem_match_prompts << "\n";
  return os.str();
}

}  // namespace pipeline
