#pragma once

// Training pairs, noise, pushforward loss, rollout and the training step.
// Everything here is in frame units: one time unit is one stored frame.

#include "lagr/autodiff.hpp"
#include "lagr/graph.hpp"
#include "lagr/models.hpp"
#include "lagr/optim.hpp"
#include "lagr/trajectory.hpp"

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lagr {

struct TrainConfig {
  int history = 5;
  double noise_std = 3e-4;        // frame units
  int pushforward_steps = 5;
  double pushforward_base = 0.5;
  long pushforward_warmup = 0;    // optimiser steps trained one-step only
  int batch_size = 2;
  long steps = 2000;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  ad::AdamConfig adam;
  double radius_factor = 1.5;     // connectivity radius in mean particle spacings
  long eval_every = 200;
  long checkpoint_every = 500;
  int valid_rollout_steps = 20;
  int rollout_steps = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Connectivity radius: radius_factor * (volume / N)^(1/3).
double connectivity_radius(const Trajectory& traj, double radius_factor);

/// External acceleration on `positions` in frame units.
Points external_force(const Trajectory& traj, const Points& positions);

/// Sample at frame t with H velocities; target set when t + 1 < frames.
/// Requires H <= t < frames.
GraphSample make_training_pair(const Trajectory& traj, int t, int history, double radius);

/// Random-walk noise on the velocity history with accumulated std `std` on the
/// last velocity. The position carries the integrated noise and the target is
/// corrected so that p + v + a still lands on the true next position.
GraphSample add_noise(const GraphSample& sample, double std, std::uint64_t seed);

/// Semi-implicit Euler step of a sample with accelerations in frame units.
/// Shifts the history window and rebuilds edges; the target is cleared.
GraphSample advance(const GraphSample& sample, const Points& accel, const Trajectory& traj);

/// P(s) proportional to base^s for s = 0..max_steps.
std::vector<double> pushforward_probabilities(int max_steps, double base);
int sample_pushforward_steps(int max_steps, double base, std::uint64_t seed);

NormalizationStats compute_stats(NormalizationStats::Mode mode, const std::vector<Trajectory>& trajs, int history);
NormalizationStats::Mode stats_mode_for(const ModelConfig& model);

/// Frame-unit accelerations for a sample.
using AccelerationModel = std::function<Points(const GraphSample&)>;

AccelerationModel zero_model();
/// Replays the accelerations of `reference`, assuming the rollout started
/// with the sample whose current frame is `first_frame`.
AccelerationModel oracle_model(const Trajectory& reference, int first_frame);

template <typename S>
AccelerationModel learned_model(const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                                const NormalizationStats& stats);

class RolloutDiverged : public std::runtime_error {
 public:
  RolloutDiverged(int step, Trajectory partial)
      : std::runtime_error("rollout produced non-finite positions at step " + std::to_string(step)),
        step_(step),
        partial_(std::move(partial)) {}
  int step() const { return step_; }
  const Trajectory& partial() const { return partial_; }

 private:
  int step_;
  Trajectory partial_;
};

/// Seeds with reference frames start..start+H and predicts n_steps frames.
/// The result holds H + 1 + n_steps frames.
Trajectory rollout(const AccelerationModel& model, const Trajectory& reference, int start, int n_steps, int history,
                   double radius);

template <typename S>
struct PushforwardResult {
  ad::Var loss;
  int steps = 0;
  GraphSample input;   // pushed-forward, noisy model input of the final step
  Matrix<S> target;    // normalised corrected target
};

/// One-step normalised acceleration MSE after a gradient-free rollout of
/// sampled depth. `rollout_params` drive the rollout; only the final step is
/// recorded on `tape` with `params`. The sampled depth is clamped so the
/// rollout starts at or after frame H.
template <typename S>
PushforwardResult<S> pushforward_loss(ad::Tape<S>& tape, const LearnedSimulator<S>& model,
                                      const ad::ParamStore<S>& params, const ad::ParamStore<S>& rollout_params,
                                      const Trajectory& traj, int t, const TrainConfig& config,
                                      const NormalizationStats& stats, std::uint64_t seed, int forced_steps = -1);

/// Plain one-step loss on a prepared sample.
template <typename S>
ad::Var one_step_loss(ad::Tape<S>& tape, const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                      const GraphSample& sample, const NormalizationStats& stats);

struct TrainingState {
  ad::ParamStore<double> params;
  ad::AdamState<double> optimizer;
  long step = 0;
  double best_valid = -1.0;  // negative until the first validation
};

/// One optimiser step on a batch drawn from (config.seed, state.step).
/// Returns the batch-mean loss.
double train_step(TrainingState& state, const LearnedSimulator<double>& model, const TrainConfig& config,
                  const std::vector<Trajectory>& train, const NormalizationStats& stats);

/// Mean one-step normalised acceleration MSE over a fixed frame set.
double validation_accel_mse(const LearnedSimulator<double>& model, const ad::ParamStore<double>& params,
                            const std::vector<Trajectory>& valid, const NormalizationStats& stats,
                            const TrainConfig& config, int max_frames_per_traj = 8);

/// Mean position MSE over short rollouts of the validation set.
double validation_rollout_mse(const LearnedSimulator<double>& model, const ad::ParamStore<double>& params,
                              const std::vector<Trajectory>& valid, const NormalizationStats& stats,
                              const TrainConfig& config);

/// Backward vs central finite differences on a fixed random batch.
struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // by layer type
  Eigen::Index checked = 0;

  double worst() const;
  bool passed(double tolerance) const { return worst() < tolerance; }
};

/// Layer type of a parameter path, e.g. "dense/w", "tp/w110", "hae/w_h".
std::string layer_type(const std::string& param_name);

/// The analytic gradient is computed in S; the finite-difference reference in
/// double. `fault_op` corrupts the backward rule of one primitive.
template <typename S>
GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, const std::string& fault_op = "",
                           double step = 1e-5, int max_entries_per_block = 24);

/// Small random graph used by the gradient and symmetry checks.
GraphSample random_sample(int num_nodes, int history, double radius, std::uint64_t seed);

}  // namespace lagr
