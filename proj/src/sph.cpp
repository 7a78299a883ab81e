#include "lagr/sph.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace lagr {

std::string to_string(Scenario s) { return s == Scenario::TaylorGreen ? "tgv" : "rpf"; }

Scenario scenario_from_string(const std::string& name) {
  if (name == "tgv") return Scenario::TaylorGreen;
  if (name == "rpf") return Scenario::ReversePoiseuille;
  throw std::invalid_argument("unknown scenario '" + name + "' (expected tgv or rpf)");
}

}  // namespace lagr

namespace lagr::sph {

ScenarioConfig ScenarioConfig::taylor_green(int n_side) {
  ScenarioConfig c;
  c.scenario = Scenario::TaylorGreen;
  c.domain = DomainSpec::taylor_green();
  c.dx = 1.0 / n_side;
  return c;
}

ScenarioConfig ScenarioConfig::reverse_poiseuille(double dx) {
  ScenarioConfig c;
  c.scenario = Scenario::ReversePoiseuille;
  c.domain = DomainSpec::reverse_poiseuille();
  c.dx = dx;
  return c;
}

double ScenarioConfig::max_stable_dt() const {
  const double h = smoothing_length();
  const double nu = viscosity / rest_density;
  double bound = std::min(0.25 * h / (sound_speed() + reference_velocity), 0.125 * h * h / nu);
  if (scenario == Scenario::ReversePoiseuille && rpf_force > 0.0) {
    bound = std::min(bound, 0.25 * std::sqrt(h / rpf_force));
  }
  return bound;
}

std::array<int, 3> ScenarioConfig::lattice() const {
  std::array<int, 3> n{};
  for (int k = 0; k < 3; ++k) n[k] = static_cast<int>(std::lround(domain.box[k] / dx));
  return n;
}

int ScenarioConfig::num_particles() const {
  const auto n = lattice();
  return n[0] * n[1] * n[2];
}

void ScenarioConfig::validate() const {
  domain.validate();
  if (!(dx > 0.0)) throw std::invalid_argument("scenario: dx must be positive");
  const auto n = lattice();
  for (int k = 0; k < 3; ++k) {
    if (n[k] < 1 || std::abs(n[k] * dx - domain.box[k]) > 1e-9 * domain.box[k]) {
      throw std::invalid_argument("scenario: box is not an integer multiple of dx on axis " + std::to_string(k));
    }
    if (cutoff() > 0.5 * domain.box[k]) {
      throw std::invalid_argument("scenario: kernel support 3h exceeds half the box on axis " + std::to_string(k) +
                                  "; refine dx");
    }
  }
  if (!(viscosity > 0.0) || !(rest_density > 0.0) || !(reference_velocity > 0.0)) {
    throw std::invalid_argument("scenario: viscosity, density and reference velocity must be positive");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("scenario: dt must be positive");
  if (dt > max_stable_dt()) {
    throw std::invalid_argument("scenario: dt = " + std::to_string(dt) + " violates the stability bound " +
                                std::to_string(max_stable_dt()) + " (acoustic/viscous/body-force limit)");
  }
  if (frames < 1 || stride < 1) throw std::invalid_argument("scenario: frames and stride must be >= 1");
  if (jitter < 0.0 || jitter >= 0.5) throw std::invalid_argument("scenario: jitter must be in [0, 0.5)");
  if (relaxation_steps < 0) throw std::invalid_argument("scenario: relaxation_steps must be >= 0");
}

double kernel_w(double r, double h) {
  const double q = r / h;
  if (q >= 3.0) return 0.0;
  const double alpha = 1.0 / (120.0 * std::numbers::pi * h * h * h);
  const auto p5 = [](double x) { return x * x * x * x * x; };
  double w = p5(3.0 - q);
  if (q < 2.0) w -= 6.0 * p5(2.0 - q);
  if (q < 1.0) w += 15.0 * p5(1.0 - q);
  return alpha * w;
}

double kernel_grad(double r, double h) {
  const double q = r / h;
  if (q >= 3.0 || q <= 0.0) return 0.0;
  const double alpha = 1.0 / (120.0 * std::numbers::pi * h * h * h * h);
  const auto p4 = [](double x) { return x * x * x * x; };
  double g = -5.0 * p4(3.0 - q);
  if (q < 2.0) g += 30.0 * p4(2.0 - q);
  if (q < 1.0) g -= 75.0 * p4(1.0 - q);
  return alpha * g;
}

Vec3 tgv_velocity(const Vec3& p, double length) {
  const double k = 2.0 * std::numbers::pi / length;
  return {std::sin(k * p.x()) * std::cos(k * p.y()) * std::cos(k * p.z()),
          -std::cos(k * p.x()) * std::sin(k * p.y()) * std::cos(k * p.z()), 0.0};
}

Vec3 rpf_accel(const Vec3& position, const DomainSpec& domain, double magnitude) {
  return {position.y() >= 0.5 * domain.box.y() ? -magnitude : magnitude, 0.0, 0.0};
}

double rpf_laminar_velocity(double y, const DomainSpec& domain, double force, double kinematic_viscosity) {
  const double half = 0.5 * domain.box.y();
  const double scale = force / (2.0 * kinematic_viscosity);
  // Scaled so each half is a unit-width parabola, continuous with its image.
  if (y < half) return scale * y * (half - y);
  return -scale * (y - half) * (domain.box.y() - y);
}

namespace {

Points jittered_lattice(const ScenarioConfig& config, std::uint64_t seed) {
  const auto n = config.lattice();
  Points pos(static_cast<Eigen::Index>(n[0]) * n[1] * n[2], 3);
  std::mt19937_64 rng(seed);
  const double a = config.jitter * config.dx;
  std::uniform_real_distribution<double> u(-a, a);
  Eigen::Index i = 0;
  for (int iz = 0; iz < n[2]; ++iz) {
    for (int iy = 0; iy < n[1]; ++iy) {
      for (int ix = 0; ix < n[0]; ++ix, ++i) {
        Vec3 p((ix + 0.5) * config.dx, (iy + 0.5) * config.dx, (iz + 0.5) * config.dx);
        if (a > 0.0) {
          const double jx = u(rng), jy = u(rng), jz = u(rng);
          p += Vec3(jx, jy, jz);
        }
        pos.row(i) = config.domain.wrap(p).transpose();
      }
    }
  }
  return pos;
}

ParticleState blank_state(const ScenarioConfig& config, Points positions) {
  ParticleState s;
  const Eigen::Index n = positions.rows();
  s.position = std::move(positions);
  s.velocity = Points::Zero(n, 3);
  s.transport_velocity = Points::Zero(n, 3);
  s.external_accel = Points::Zero(n, 3);
  s.mass = Eigen::VectorXd::Constant(n, config.rest_density * config.domain.volume() / static_cast<double>(n));
  return s;
}

void refresh_density(ParticleState& s, const ScenarioConfig& config) {
  const PairList pairs = build_pairs(s.position, config.domain, config.cutoff());
  s.density = summation_density(s, pairs, config.smoothing_length());
}

void refresh_external(ParticleState& s, const ScenarioConfig& config) {
  if (config.scenario != Scenario::ReversePoiseuille) return;
  for (Eigen::Index i = 0; i < s.position.rows(); ++i) {
    s.external_accel.row(i) = rpf_accel(s.position.row(i).transpose(), config.domain, config.rpf_force).transpose();
  }
}

// Damped settling of the jittered lattice under the background pressure:
// velocities are zeroed before every step, so only the transport correction
// moves particles. Removes the density noise that would otherwise feed
// acoustic energy into the flow.
void relax(ParticleState& s, const ScenarioConfig& config) {
  ScenarioConfig quiet = config;
  quiet.rpf_force = 0.0;
  s.external_accel.setZero();
  refresh_density(s, quiet);
  for (int r = 0; r < config.relaxation_steps; ++r) {
    s.velocity.setZero();
    s.transport_velocity.setZero();
    s = sph_step(s, quiet);
  }
  s.velocity.setZero();
  s.transport_velocity.setZero();
}

}  // namespace

ParticleState tgv_init(const ScenarioConfig& config, std::uint64_t seed) {
  ParticleState s = blank_state(config, jittered_lattice(config, seed));
  relax(s, config);
  for (Eigen::Index i = 0; i < s.position.rows(); ++i) {
    s.velocity.row(i) = tgv_velocity(s.position.row(i).transpose(), config.reference_length).transpose();
  }
  s.transport_velocity = s.velocity;
  refresh_density(s, config);
  return s;
}

ParticleState rpf_init(const ScenarioConfig& config, std::uint64_t seed) {
  ParticleState s = blank_state(config, jittered_lattice(config, seed));
  relax(s, config);
  const double nu = config.viscosity / config.rest_density;
  for (Eigen::Index i = 0; i < s.position.rows(); ++i) {
    s.velocity(i, 0) = rpf_laminar_velocity(s.position(i, 1), config.domain, config.rpf_force, nu);
  }
  s.transport_velocity = s.velocity;
  refresh_external(s, config);
  refresh_density(s, config);
  return s;
}

ParticleState initial_state(const ScenarioConfig& config, std::uint64_t seed) {
  return config.scenario == Scenario::TaylorGreen ? tgv_init(config, seed) : rpf_init(config, seed);
}

Eigen::VectorXd summation_density(const ParticleState& state, const PairList& pairs, double h) {
  Eigen::VectorXd sigma = Eigen::VectorXd::Constant(state.size(), kernel_w(0.0, h));
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    const double w = kernel_w(pairs.distance[e], h);
    sigma[pairs.pairs[e].first] += w;
    sigma[pairs.pairs[e].second] += w;
  }
  return sigma.cwiseProduct(state.mass);
}

ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config, const PairList& pairs) {
  const int n = state.size();
  const double h = config.smoothing_length();
  const double dt = config.dt;
  const double c0 = config.sound_speed();
  const double rho0 = config.rest_density;
  const double eta = config.viscosity;
  const double p_background = config.reference_pressure();

  const Eigen::VectorXd rho = summation_density(state, pairs, h);
  const Eigen::VectorXd pressure = (c0 * c0) * (rho.array() - rho0).matrix();
  const Eigen::VectorXd volume = state.mass.cwiseQuotient(rho);  // 1 / number density

  Points force = Points::Zero(n, 3);
  Points background = Points::Zero(n, 3);
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    const auto [i, j] = pairs.pairs[e];
    const double r = pairs.distance[e];
    if (!(r > 0.0)) continue;
    const Vec3 d = pairs.displacement.row(static_cast<Eigen::Index>(e)).transpose();
    const double dwdr = kernel_grad(r, h);
    const Vec3 grad_w = (dwdr / r) * d;
    const double vol2 = volume[i] * volume[i] + volume[j] * volume[j];
    const double p_avg = (rho[j] * pressure[i] + rho[i] * pressure[j]) / (rho[i] + rho[j]);

    const Vec3 vi = state.velocity.row(i).transpose();
    const Vec3 vj = state.velocity.row(j).transpose();
    const Vec3 ti = state.transport_velocity.row(i).transpose();
    const Vec3 tj = state.transport_velocity.row(j).transpose();
    // (A_i + A_j) . grad W with A = rho v (v_transport - v)^T
    const Vec3 stress = rho[i] * vi * (ti - vi).dot(grad_w) + rho[j] * vj * (tj - vj).dot(grad_w);

    const Vec3 f = vol2 * (-p_avg * grad_w + 0.5 * stress + eta * (dwdr / r) * (vi - vj));
    force.row(i) += f.transpose();
    force.row(j) -= f.transpose();
    const Vec3 b = vol2 * grad_w;
    background.row(i) += b.transpose();
    background.row(j) -= b.transpose();
  }

  ParticleState next = state;
  next.density = rho;
  for (int i = 0; i < n; ++i) {
    const double inv_m = 1.0 / state.mass[i];
    const Eigen::RowVector3d accel = force.row(i) * inv_m + state.external_accel.row(i);
    next.velocity.row(i) = state.velocity.row(i) + dt * accel;
    next.transport_velocity.row(i) = next.velocity.row(i) - (dt * p_background * inv_m) * background.row(i);
    next.position.row(i) =
        config.domain.wrap((state.position.row(i) + dt * next.transport_velocity.row(i)).transpose()).transpose();
  }
  refresh_external(next, config);
  if (!next.position.allFinite() || !next.velocity.allFinite()) {
    throw SolverDiverged("sph: non-finite state after step");
  }
  return next;
}

ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config, const EdgeList& edges) {
  PairList pairs;
  std::vector<Vec3> disp;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const int i = edges.receivers[e];
    const int j = edges.senders[e];
    if (i >= j) continue;
    pairs.pairs.emplace_back(i, j);
    disp.push_back(edges.displacement.row(static_cast<Eigen::Index>(e)).transpose());
    pairs.distance.push_back(edges.distance[e]);
  }
  pairs.displacement.resize(static_cast<Eigen::Index>(disp.size()), 3);
  for (std::size_t e = 0; e < disp.size(); ++e) pairs.displacement.row(static_cast<Eigen::Index>(e)) = disp[e];
  return sph_step(state, config, pairs);
}

ParticleState sph_step(const ParticleState& state, const ScenarioConfig& config) {
  return sph_step(state, config, build_pairs(state.position, config.domain, config.cutoff()));
}

Vec3 total_momentum(const ParticleState& state) {
  return (state.velocity.transpose() * state.mass);
}

double kinetic_energy(const ParticleState& state) {
  return 0.5 * state.velocity.rowwise().squaredNorm().dot(state.mass);
}

Trajectory generate_trajectory(const ScenarioConfig& config, std::uint64_t seed, const ProgressFn& progress) {
  config.validate();
  ParticleState state = initial_state(config, seed);

  if (config.scenario == Scenario::ReversePoiseuille) {
    const long warmup = std::lround(config.warmup_time / config.dt);
    for (long s = 0; s < warmup; ++s) state = sph_step(state, config);
  }

  Trajectory traj;
  traj.frame_dt = config.stride * config.dt;
  traj.domain = config.domain;
  traj.scenario = config.scenario;
  for (int f = 0; f < config.frames; ++f) {
    if (f > 0) {
      for (int s = 0; s < config.stride; ++s) state = sph_step(state, config);
    }
    traj.positions.push_back(state.position);
    traj.velocities.push_back(state.velocity);
    if (progress) progress(f, state);
  }
  traj.metadata = {{"seed", seed},
                   {"dt", config.dt},
                   {"stride", config.stride},
                   {"dx", config.dx},
                   {"viscosity", config.viscosity},
                   {"rest_density", config.rest_density},
                   {"sound_speed", config.sound_speed()},
                   {"background_pressure", config.reference_pressure()},
                   {"reynolds", config.reynolds()},
                   {"particle_mass", state.mass.size() ? state.mass[0] : 0.0}};
  if (config.scenario == Scenario::ReversePoiseuille) {
    traj.metadata["rpf_force"] = config.rpf_force;
    traj.metadata["warmup_time"] = config.warmup_time;
  } else {
    traj.metadata["jitter"] = config.jitter;
  }
  traj.metadata["relaxation_steps"] = config.relaxation_steps;
  return traj;
}

}  // namespace lagr::sph
