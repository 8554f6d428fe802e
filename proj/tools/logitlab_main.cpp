#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "distill/distill.hpp"
#include "lm/train.hpp"
#include "numkit/tensor.hpp"
#include "oracle/oracle.hpp"
#include "pipeline/config.hpp"
#include "pipeline/stages.hpp"

namespace {

// 0 success, 2 config error, 3 budget exceeded, 4 numeric failure,
// 5 transport failure.
int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return 0;
  } catch (const pipeline::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lm::TokenizeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pipeline::MissingArtifactError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const oracle::BudgetExceeded& e) {
    std::fprintf(stderr, "budget exceeded: %s\n", e.what());
    return 3;
  } catch (const oracle::TransportError& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
    return 5;
  } catch (const oracle::ProtocolError& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
    return 5;
  } catch (const lm::TrainingError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const distill::DistillError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const numkit::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box LM replication lab: steal the projection, distill the rest"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  int64_t seed_override = -1;
  int port = 8237;

  auto add_common = [&](CLI::App* cmd, bool with_port = false) {
    cmd->add_option("--config", config_path, "path to the run config")->required();
    cmd->add_option("--out", out_override, "output directory override");
    cmd->add_option("--seed", seed_override, "seed override");
    if (with_port) cmd->add_option("--port", port, "listen port (0 = ephemeral)");
  };

  auto* c_train = app.add_subcommand("train-teacher", "train the desk-scale target model");
  auto* c_steal = app.add_subcommand("steal", "recover the output projection from logit leakage");
  auto* c_distill = app.add_subcommand("distill", "train student clones around the stolen layers");
  auto* c_eval = app.add_subcommand("eval", "fidelity and efficiency reports");
  auto* c_full = app.add_subcommand("full-run", "train-teacher, steal, distill, eval in sequence");
  auto* c_serve = app.add_subcommand("serve-oracle", "expose the teacher over the wire protocol");
  add_common(c_train);
  add_common(c_steal);
  add_common(c_distill);
  add_common(c_eval);
  add_common(c_full);
  add_common(c_serve, true);

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&] {
    pipeline::RunConfig cfg = pipeline::load_run_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    cfg.validate();

    if (c_train->parsed()) pipeline::cmd_train_teacher(cfg);
    if (c_steal->parsed()) pipeline::cmd_steal(cfg);
    if (c_distill->parsed()) pipeline::cmd_distill(cfg);
    if (c_eval->parsed()) pipeline::cmd_eval(cfg);
    if (c_full->parsed()) pipeline::cmd_full_run(cfg);
    if (c_serve->parsed()) pipeline::cmd_serve_oracle(cfg, port);
  });
}
