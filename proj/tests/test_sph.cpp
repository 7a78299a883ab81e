#include "lagr/sph.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace lagr;
using namespace lagr::sph;

namespace {

// Composite Simpson rule on [a, b] with n (even) panels.
template <typename F>
double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

ParticleState rest_lattice(const ScenarioConfig& c) {
  ParticleState s = initial_state(c, 0);
  const auto n = c.lattice();
  int idx = 0;
  for (int i = 0; i < n[0]; ++i)
    for (int j = 0; j < n[1]; ++j)
      for (int k = 0; k < n[2]; ++k) s.position.row(idx++) = Eigen::RowVector3d((i + 0.5) * c.dx, (j + 0.5) * c.dx, (k + 0.5) * c.dx);
  s.velocity.setZero();
  s.transport_velocity.setZero();
  s.external_accel.setZero();
  return s;
}

}  // namespace

TEST_CASE("kernel integrates to one over its support") {
  for (double h : {0.05, 0.3, 1.0}) {
    const double integral = simpson([&](double r) { return 4.0 * std::numbers::pi * r * r * kernel_w(r, h); }, 0.0, 3.0 * h, 3000);
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("kernel support and gradient") {
  const double h = 0.1;
  CHECK(kernel_w(3 * h, h) == 0.0);
  CHECK(kernel_w(4 * h, h) == 0.0);
  CHECK(kernel_grad(0.0, h) == 0.0);
  CHECK(kernel_grad(3.5 * h, h) == 0.0);
  for (double q : {0.3, 0.9, 1.0, 1.5, 2.2, 2.9}) {
    const double r = q * h, e = 1e-7;
    const double fd = (kernel_w(r + e, h) - kernel_w(r - e, h)) / (2 * e);
    CHECK(kernel_grad(r, h) == doctest::Approx(fd).epsilon(1e-6));
    CHECK(kernel_w(r, h) >= 0.0);
  }
}

TEST_CASE("Taylor-Green initial velocity field") {
  const Vec3 a = tgv_velocity(Vec3(0.25, 0, 0), 1.0);
  CHECK(a[0] == doctest::Approx(1.0));
  CHECK(std::abs(a[1]) < 1e-15);
  CHECK(a[2] == 0.0);
  CHECK(tgv_velocity(Vec3::Zero(), 1.0).norm() == 0.0);
}

TEST_CASE("Taylor-Green initial kinetic energy per unit mass") {
  // Domain average of (u^2 + v^2) / 2 with the sin^2 cos^2 cos^2 averages of 1/8.
  const double expected = 0.5 * (0.125 + 0.125);
  for (int n : {8, 20}) {
    const ScenarioConfig c = ScenarioConfig::taylor_green(n);
    const ParticleState s = tgv_init(c, 3);
    CHECK(s.size() == n * n * n);
    CHECK(s.mass.sum() == doctest::Approx(1.0));
    CHECK(s.velocity.col(2).cwiseAbs().maxCoeff() == 0.0);
    const double per_mass = sph::kinetic_energy(s) / s.mass.sum();
    CHECK(per_mass == doctest::Approx(expected).epsilon(n == 20 ? 0.02 : 0.05));
  }
}

TEST_CASE("reverse Poiseuille forcing") {
  const DomainSpec d = DomainSpec::reverse_poiseuille();
  CHECK(rpf_accel(Vec3(0, 1.5, 0), d, 0.08)[0] == -0.08);
  CHECK(rpf_accel(Vec3(0, 0.5, 0), d, 0.08)[0] == 0.08);
  CHECK(rpf_accel(Vec3(0, 1.0, 0), d, 0.08)[0] == -0.08);
  CHECK(rpf_accel(Vec3(0, 0.5, 0), d, 0.08).tail<2>().norm() == 0.0);
  // Laminar peak f / (8 nu) = U = 1 at the quarter planes.
  CHECK(rpf_laminar_velocity(0.5, d, 0.08, 0.01) == doctest::Approx(1.0));
  CHECK(rpf_laminar_velocity(1.5, d, 0.08, 0.01) == doctest::Approx(-1.0));
  CHECK(rpf_laminar_velocity(0.0, d, 0.08, 0.01) == doctest::Approx(0.0));
}

TEST_CASE("summation density and kernel partition on the rest lattice") {
  const ScenarioConfig c = ScenarioConfig::taylor_green(10);
  const ParticleState s = rest_lattice(c);
  const PairList pairs = build_pairs(s.position, c.domain, c.cutoff());
  const Eigen::VectorXd rho = summation_density(s, pairs, c.smoothing_length());
  for (Eigen::Index i = 0; i < rho.size(); ++i) CHECK(rho[i] == doctest::Approx(c.rest_density).epsilon(0.02));
}

TEST_CASE("rest lattice stays at rest") {
  const ScenarioConfig c = ScenarioConfig::taylor_green(8);
  const ParticleState s = rest_lattice(c);
  const ParticleState n = sph_step(s, c);
  CHECK(n.velocity.cwiseAbs().maxCoeff() < 1e-9 * c.sound_speed());
}

TEST_CASE("zero time step leaves the state unchanged") {
  ScenarioConfig c = ScenarioConfig::taylor_green(8);
  const ParticleState s = tgv_init(c, 5);
  c.dt = 0.0;
  const PairList pairs = build_pairs(s.position, c.domain, c.cutoff());
  const ParticleState n = sph_step(s, c, pairs);
  CHECK((n.position - s.position).cwiseAbs().maxCoeff() == 0.0);
  CHECK((n.velocity - s.velocity).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("momentum is conserved without forcing") {
  const ScenarioConfig c = ScenarioConfig::taylor_green(8);
  ParticleState s = tgv_init(c, 7);
  Vec3 prev = total_momentum(s);
  for (int step = 0; step < 100; ++step) {
    s = sph_step(s, c);
    const Vec3 m = total_momentum(s);
    CHECK((m - prev).norm() < 1e-10 * s.size());
    prev = m;
  }
}

TEST_CASE("edge list and pair list steps agree") {
  const ScenarioConfig c = ScenarioConfig::taylor_green(8);
  const ParticleState s = tgv_init(c, 9);
  const ParticleState a = sph_step(s, c, build_pairs(s.position, c.domain, c.cutoff()));
  const ParticleState b = sph_step(s, c, build_edges(s.position, c.domain, c.cutoff()));
  CHECK((a.velocity - b.velocity).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.position - b.position).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("configuration validation") {
  ScenarioConfig c = ScenarioConfig::taylor_green(8);
  CHECK_NOTHROW(c.validate());
  CHECK(c.reynolds() == doctest::Approx(100.0));
  c.dt = 0.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ScenarioConfig::taylor_green(4);  // support 3h > half box
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ScenarioConfig::reverse_poiseuille(0.1);  // 3h = 0.3 > Lz / 2
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("trajectory generation is deterministic and frame counted") {
  ScenarioConfig c = ScenarioConfig::taylor_green(8);
  c.frames = 5;
  const Trajectory a = generate_trajectory(c, 11);
  const Trajectory b = generate_trajectory(c, 11);
  const Trajectory other = generate_trajectory(c, 12);
  REQUIRE(a.num_frames() == 5);
  CHECK(a.frame_dt == doctest::Approx(0.01));
  CHECK(a.has_velocities());
  for (int f = 0; f < 5; ++f) {
    CHECK((a.positions[f] - b.positions[f]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((a.positions[0] - other.positions[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("divergence is reported") {
  ScenarioConfig c = ScenarioConfig::taylor_green(8);
  ParticleState s = tgv_init(c, 1);
  s.velocity(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(sph_step(s, c), SolverDiverged);
}
