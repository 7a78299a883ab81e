#include "lagr/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the configured seed");
}

lagr::RunConfig load(const Common& c) {
  lagr::RunConfig cfg = lagr::RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg.resolved();
}

std::optional<std::filesystem::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lagrangian particle simulation: data generation, learned simulators, evaluation"};
  app.require_subcommand(1);

  Common gen_c, train_c, roll_c, eval_c;
  std::string gen_out, train_data, train_ckpt, roll_ckpt, roll_traj, roll_out, eval_ckpt, eval_data, eval_report;

  auto* gen = app.add_subcommand("generate", "Run the SPH solver and write trajectories");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a learned simulator (resumes from <checkpoints>/last.lgck)");
  add_common(train, train_c);
  train->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--checkpoints", train_ckpt, "Checkpoint directory")->required();

  auto* roll = app.add_subcommand("rollout", "Roll a model out from the first frames of a trajectory");
  add_common(roll, roll_c);
  roll->add_option("--checkpoint", roll_ckpt, "Checkpoint (omit for model 'zero')")->check(CLI::ExistingFile);
  roll->add_option("--trajectory", roll_traj, "Reference trajectory")->required()->check(CLI::ExistingFile);
  roll->add_option("--out", roll_out, "Output trajectory")->required();

  auto* eval = app.add_subcommand("evaluate", "Evaluate rollouts on the test split");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint (omit for model 'zero')")->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", eval_report, "Report JSON path; per-step CSV is written next to it")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      lagr::cmd_generate(load(gen_c), gen_out, std::cout);
    } else if (*train) {
      const auto s = lagr::cmd_train(load(train_c), train_data, train_ckpt, std::cout);
      std::cout << "finished at step " << s.final_step << ", best valid_mse_p " << s.best_valid << "\n";
    } else if (*roll) {
      lagr::cmd_rollout(load(roll_c), optional_path(roll_ckpt), roll_traj, roll_out, std::cout);
    } else if (*eval) {
      lagr::cmd_evaluate(load(eval_c), optional_path(eval_ckpt), eval_data, eval_report, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
