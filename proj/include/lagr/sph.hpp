#pragma once

#include "lagr/neighbors.hpp"
#include "lagr/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>

namespace lagr::sph {

/// Weakly-compressible particle state in the transport-velocity formulation.
struct ParticleState {
  Points position;
  Points velocity;
  Points transport_velocity;
  Eigen::VectorXd density;
  Eigen::VectorXd mass;
  Points external_accel;

  int size() const { return static_cast<int>(position.rows()); }
};

struct ScenarioConfig {
  Scenario scenario = Scenario::TaylorGreen;
  DomainSpec domain = DomainSpec::taylor_green();
  double dx = 0.05;
  double reference_velocity = 1.0;
  double reference_length = 1.0;
  double viscosity = 0.01;  // dynamic
  double rest_density = 1.0;
  double dt = 0.001;
  int frames = 100;
  int stride = 10;
  double rpf_force = 0.08;     // calibrated: peak laminar velocity f / (8 nu) = U
  double warmup_time = 10.0;   // RPF only
  double jitter = 0.2;         // fraction of dx
  int relaxation_steps = 200;  // damped settling of the jittered lattice before the flow is imposed
  double sound_speed_factor = 10.0;

  static ScenarioConfig taylor_green(int n_side);
  static ScenarioConfig reverse_poiseuille(double dx);

  double reynolds() const { return reference_velocity * reference_length / viscosity; }
  double smoothing_length() const { return dx; }
  double cutoff() const { return 3.0 * smoothing_length(); }
  double sound_speed() const { return sound_speed_factor * reference_velocity; }
  double reference_pressure() const { return rest_density * sound_speed() * sound_speed(); }
  double max_stable_dt() const;
  std::array<int, 3> lattice() const;
  int num_particles() const;

  /// Throws std::invalid_argument on an inconsistent or unstable setup.
  void validate() const;
};

class SolverDiverged : public std::runtime_error {
 public:
  explicit SolverDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// Quintic spline, support 3h.
double kernel_w(double r, double h);
/// dW/dr; zero at r = 0 and beyond the support.
double kernel_grad(double r, double h);

/// Initial Taylor-Green velocity field, k = 2 pi / L, w = 0.
Vec3 tgv_velocity(const Vec3& p, double length);

/// Body acceleration of the reverse Poiseuille flow. The mid-plane y = Ly/2
/// belongs to the upper (-x) half.
Vec3 rpf_accel(const Vec3& position, const DomainSpec& domain, double magnitude);

/// Steady laminar x-velocity of the forced periodic channel pair.
double rpf_laminar_velocity(double y, const DomainSpec& domain, double force, double kinematic_viscosity);

ParticleState tgv_init(const ScenarioConfig& config, std::uint64_t seed);
ParticleState rpf_init(const ScenarioConfig& config, std::uint64_t seed);
ParticleState initial_state(const ScenarioConfig& config, std::uint64_t seed);

/// Summation density (m_i * sum_j W_ij, self term included).
Eigen::VectorXd summation_density(const ParticleState& state, const PairList& pairs, double h);

/// One symplectic-Euler step. `pairs` must be built at the kernel cutoff.
/// Throws SolverDiverged if the new state is not finite.
ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config, const PairList& pairs);
/// Same step with the directed edge list (only i < j edges are used).
ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config, const EdgeList& edges);
ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config);

Vec3 total_momentum(const ParticleState& state);
double kinetic_energy(const ParticleState& state);

using ProgressFn = std::function<void(int frame, const ParticleState&)>;

/// Runs the solver and records every `stride`-th state. RPF discards
/// `warmup_time` first.
Trajectory generate_trajectory(const ScenarioConfig& config, std::uint64_t seed,
                               const ProgressFn& progress = {});

}  // namespace lagr::sph
