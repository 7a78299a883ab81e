#pragma once

// Command implementations shared by the CLI and the end-to-end tests.

#include "lagr/config.hpp"
#include "lagr/io.hpp"
#include "lagr/metrics.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lagr {

struct Dataset {
  std::vector<Trajectory> train, valid, test;
};

/// Loads train/valid/test trajectories written by cmd_generate. An RPF
/// dataset is one trajectory cut into time windows by its split manifest.
Dataset load_dataset(const std::filesystem::path& dir);

/// Frames [begin, end) of a trajectory.
Trajectory slice_frames(const Trajectory& traj, int begin, int end);

struct GenerateSummary {
  std::vector<std::filesystem::path> files;
  int frames = 0;
  int particles = 0;
};

GenerateSummary cmd_generate(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

struct TrainSummary {
  std::vector<double> losses;  // per optimiser step run in this call
  long final_step = 0;
  double best_valid = -1.0;
  std::filesystem::path best_checkpoint;
};

/// Trains, resuming from `checkpoint_dir/last.lgck` when present. Writes
/// last.lgck, best.lgck and curve.csv. `max_steps` (>= 0) stops early after
/// that many steps in this call, for resume tests.
TrainSummary cmd_train(const RunConfig& config, const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& checkpoint_dir, std::ostream& log, long max_steps = -1);

/// Model and parameters of a checkpoint; the "zero" model needs none.
struct LoadedModel {
  RunConfig config;
  LearnedSimulator<double> model;
  ad::ParamStore<double> params;
  NormalizationStats stats;

  AccelerationModel accelerations() const;
};

LoadedModel load_model(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint);

Trajectory cmd_rollout(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                       const std::filesystem::path& trajectory, const std::filesystem::path& output, std::ostream& log);

struct EvaluateResult {
  std::vector<EvalReport> reports;
  nlohmann::json summary;  // {dataset: {mse_p, mse_ekin, sinkhorn_mean}}
};

/// Rolls out every test trajectory and writes `report` (JSON) plus a per-step
/// CSV next to it.
EvaluateResult cmd_evaluate(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                            const std::filesystem::path& dataset_dir, const std::filesystem::path& report,
                            std::ostream& log);

/// Metrics of predicted rollouts against their references.
EvaluateResult evaluate_trajectories(const std::vector<Trajectory>& predicted, const std::vector<Trajectory>& reference,
                                     const RunConfig& config);

}  // namespace lagr
