#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "oracle/oracle.hpp"

namespace pipeline {

// Content hash with timing noise masked out: JSON artifacts drop volatile
// keys (wall_time_s, speedup, tokens/sec) before hashing, CSV artifacts
// blank volatile columns. Everything else hashes raw bytes. This is what
// makes two identical runs produce identical manifests modulo timestamps.
std::string artifact_hash(const std::string& path);

bool is_volatile_key(const std::string& key);

struct ArtifactEntry {
  std::string path;  // relative to the run directory
  std::string hash;
};

struct StageRecord {
  bool completed = false;
  std::vector<ArtifactEntry> artifacts;
  std::vector<std::string> errors;
};

class Manifest {
 public:
  Manifest() = default;
  static Manifest load(const std::string& path);
  void save(const std::string& path) const;

  void record_stage(const std::string& stage, const std::string& run_dir,
                    const std::vector<std::string>& artifact_paths,
                    const std::vector<std::string>& errors = {});
  bool stage_completed(const std::string& stage) const;
  // Completed and every artifact still hashes to the recorded value.
  bool stage_intact(const std::string& stage, const std::string& run_dir) const;

  void set_ledger(const oracle::LedgerSnapshot& ledger);
  oracle::LedgerSnapshot ledger() const;
  void set_config_hash(const std::string& hash) { config_hash_ = hash; }
  void set_timestamp(const std::string& stage, const std::string& iso);

  nlohmann::json to_json() const;
  // Everything except the timestamps block; determinism checks compare this.
  nlohmann::json deterministic_view() const;

 private:
  std::map<std::string, StageRecord> stages_;
  oracle::LedgerSnapshot ledger_;
  std::string config_hash_;
  std::map<std::string, std::string> timestamps_;
};

}  // namespace pipeline
