#pragma once

#include "lagr/metrics.hpp"
#include "lagr/models.hpp"
#include "lagr/sph.hpp"
#include "lagr/training.hpp"

#include <json.hpp>

#include <filesystem>

namespace lagr {

struct DatasetConfig {
  int train = 80;   // TGV trajectory counts
  int valid = 10;
  int test = 10;
  double rpf_train_fraction = 0.8;  // RPF: time windows of the single trajectory
  double rpf_valid_fraction = 0.1;
};

struct EvalConfig {
  int rollout_steps = 100;
  int sinkhorn_stride = 1;
  SinkhornOptions sinkhorn;
};

/// Complete, self-describing description of a run. Every default is written
/// out by to_json; from_json rejects unknown keys.
struct RunConfig {
  sph::ScenarioConfig scenario;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Copies shared fields (history, seed) into the sub-configs.
  RunConfig resolved() const;
  void validate() const;
};

}  // namespace lagr
