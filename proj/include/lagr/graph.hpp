#pragma once

#include "lagr/neighbors.hpp"
#include "lagr/types.hpp"

#include <vector>

namespace lagr {

/// One model input: the current frame plus its velocity history, all in
/// frame units (length per coarse step, length per coarse step squared).
struct GraphSample {
  Points position;
  std::vector<Points> velocity_history;  // oldest first; back() is the most recent
  Points force;                          // external acceleration
  EdgeList edges;
  Points target;                         // acceleration; empty when unknown
  DomainSpec domain;
  double radius = 0.0;

  int num_nodes() const { return static_cast<int>(position.rows()); }
  int history() const { return static_cast<int>(velocity_history.size()); }
  bool has_target() const { return target.rows() == position.rows() && target.rows() > 0; }
};

/// Rebuilds `sample.edges` from its positions.
void rebuild_edges(GraphSample& sample);

/// Dataset statistics used to scale model inputs and targets.
///
/// PerComponent: x -> (x - mean) / std per axis (GNS).
/// Magnitude: x -> x / scale with one scalar per quantity, where scale is the
/// root-mean-square Cartesian component. Commutes with rotations (SEGNN).
struct NormalizationStats {
  enum class Mode { PerComponent, Magnitude };

  Mode mode = Mode::Magnitude;
  Vec3 velocity_mean = Vec3::Zero();
  Vec3 velocity_std = Vec3::Ones();
  Vec3 accel_mean = Vec3::Zero();
  Vec3 accel_std = Vec3::Ones();
  double velocity_scale = 1.0;
  double accel_scale = 1.0;

  /// Statistics over a set of velocity and acceleration samples (N x 3 each).
  static NormalizationStats from_samples(Mode mode, const std::vector<Points>& velocities,
                                         const std::vector<Points>& accelerations);

  Points normalize_velocity(const Points& v) const;
  Points denormalize_velocity(const Points& v) const;
  Points normalize_accel(const Points& a) const;
  Points denormalize_accel(const Points& a) const;
  /// External accelerations are scaled by the acceleration spread without centring.
  Points normalize_force(const Points& f) const;
};

}  // namespace lagr
