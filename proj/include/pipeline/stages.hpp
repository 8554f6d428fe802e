#pragma once

#include <string>
#include <vector>

#include "lm/checkpoint.hpp"
#include "pipeline/config.hpp"
#include "pipeline/manifest.hpp"

namespace pipeline {

struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CorpusTokens {
  lm::Vocab vocab;
  std::vector<int> train;    // leading (1 - eval_split) of the train text
  std::vector<int> eval_in;  // trailing split, in-distribution
  std::vector<int> ood;      // disjoint second text
  CorpusTokens() : vocab(lm::Vocab::printable_ascii()) {}
};

CorpusTokens load_corpus(const RunConfig& cfg);

// Every stage writes under cfg.out_dir, serializes the resolved config
// before any work, and updates manifest.json when done.
void cmd_train_teacher(const RunConfig& cfg);
void cmd_steal(const RunConfig& cfg);
void cmd_distill(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
// All four in sequence; intact stages from a previous interrupted run are
// skipped, so a rerun resumes where it stopped.
void cmd_full_run(const RunConfig& cfg);
// Blocks serving the wire protocol until the process is interrupted.
void cmd_serve_oracle(const RunConfig& cfg, int port);

// Paths relative to the run directory.
std::string teacher_ckpt_rel();
std::string w_hat_rel();
std::string student_ckpt_rel(int depth);
std::string ce_baseline_rel(int depth);

Manifest load_or_create_manifest(const RunConfig& cfg);

}  // namespace pipeline
