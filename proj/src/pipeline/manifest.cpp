#include "pipeline/manifest.hpp"

#include <fstream>
#include <sstream>

#include "common/hash.hpp"
#include "pipeline/config.hpp"

namespace pipeline {

using nlohmann::json;

bool is_volatile_key(const std::string& key) {
  static const std::vector<std::string> kVolatile = {
      "wall_time_s", "timestamp",  "timestamps",        "speedup_pct", "speedup_spread_pct",
      "spread_pct",  "teacher_tps", "student_tps",      "tokens_per_s"};
  for (const auto& v : kVolatile)
    if (key == v) return true;
  return false;
}

namespace {

json strip_volatile(const json& j) {
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (is_volatile_key(it.key())) continue;
      out[it.key()] = strip_volatile(it.value());
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(strip_volatile(v));
    return out;
  }
  return j;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("artifact_hash: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string artifact_hash(const std::string& path) {
  const std::string bytes = read_file(path);
  if (ends_with(path, ".json")) {
    try {
      const json parsed = json::parse(bytes);
      return common::hex64(common::fnv1a(strip_volatile(parsed).dump()));
    } catch (const json::exception&) {
      // fall through to raw hashing
    }
  }
  if (ends_with(path, ".csv")) {
    std::istringstream is(bytes);
    std::string header;
    if (std::getline(is, header)) {
      const auto cols = split_csv_line(header);
      std::vector<size_t> masked;
      for (size_t i = 0; i < cols.size(); ++i)
        if (is_volatile_key(cols[i])) masked.push_back(i);
      if (!masked.empty()) {
        std::string normalized = header;
        normalized.push_back('\n');
        std::string line;
        while (std::getline(is, line)) {
          auto cells = split_csv_line(line);
          for (size_t m : masked)
            if (m < cells.size()) cells[m] = "";
          for (size_t i = 0; i < cells.size(); ++i) {
            if (i) normalized.push_back(',');
            normalized += cells[i];
          }
          normalized.push_back('\n');
        }
        return common::hex64(common::fnv1a(normalized));
      }
    }
  }
  return common::hex64(common::fnv1a(bytes));
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest: " + path);
  json j = json::parse(is);
  Manifest m;
  for (auto it = j.at("stages").begin(); it != j.at("stages").end(); ++it) {
    StageRecord rec;
    rec.completed = it.value().at("completed").get<bool>();
    for (const auto& a : it.value().at("artifacts"))
      rec.artifacts.push_back({a.at("path").get<std::string>(), a.at("hash").get<std::string>()});
    if (it.value().contains("errors"))
      rec.errors = it.value().at("errors").get<std::vector<std::string>>();
    m.stages_[it.key()] = std::move(rec);
  }
  const auto& led = j.at("ledger");
  m.ledger_.total = led.at("total").get<uint64_t>();
  m.ledger_.steal = led.at("steal").get<uint64_t>();
  m.ledger_.distill = led.at("distill").get<uint64_t>();
  m.config_hash_ = j.value("config_hash", "");
  if (j.contains("timestamps"))
    for (auto it = j.at("timestamps").begin(); it != j.at("timestamps").end(); ++it)
      m.timestamps_[it.key()] = it.value().get<std::string>();
  return m;
}

void Manifest::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write manifest: " + path);
  os << to_json().dump(2) << "\n";
}

void Manifest::record_stage(const std::string& stage, const std::string& run_dir,
                            const std::vector<std::string>& artifact_paths,
                            const std::vector<std::string>& errors) {
  StageRecord rec;
  rec.completed = errors.empty();
  for (const auto& rel : artifact_paths)
    rec.artifacts.push_back({rel, artifact_hash(run_dir + "/" + rel)});
  rec.errors = errors;
  stages_[stage] = std::move(rec);
}

bool Manifest::stage_completed(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it != stages_.end() && it->second.completed;
}

bool Manifest::stage_intact(const std::string& stage, const std::string& run_dir) const {
  auto it = stages_.find(stage);
  if (it == stages_.end() || !it->second.completed) return false;
  for (const auto& a : it->second.artifacts) {
    try {
      if (artifact_hash(run_dir + "/" + a.path) != a.hash) return false;
    } catch (const std::exception&) {
      return false;
    }
  }
  return true;
}

void Manifest::set_ledger(const oracle::LedgerSnapshot& ledger) { ledger_ = ledger; }
oracle::LedgerSnapshot Manifest::ledger() const { return ledger_; }

void Manifest::set_timestamp(const std::string& stage, const std::string& iso) {
  timestamps_[stage] = iso;
}

nlohmann::json Manifest::to_json() const {
  json stages = json::object();
  for (const auto& [name, rec] : stages_) {
    json arts = json::array();
    for (const auto& a : rec.artifacts) arts.push_back({{"path", a.path}, {"hash", a.hash}});
    stages[name] = {{"completed", rec.completed}, {"artifacts", arts}, {"errors", rec.errors}};
  }
  return {{"schema", 1},
          {"stages", stages},
          {"ledger",
           {{"total", ledger_.total}, {"steal", ledger_.steal}, {"distill", ledger_.distill}}},
          {"config_hash", config_hash_},
          {"timestamps", timestamps_}};
}

nlohmann::json Manifest::deterministic_view() const {
  json j = to_json();
  j.erase("timestamps");
  return j;
}

}  // namespace pipeline
