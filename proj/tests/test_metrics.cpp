#include "lagr/metrics.hpp"
#include "lagr/sph.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace lagr;

namespace {

Points point(double x, double y, double z) {
  Points p(1, 3);
  p << x, y, z;
  return p;
}

Points shuffled(const Points& p, std::mt19937_64& rng) {
  std::vector<int> perm(static_cast<std::size_t>(p.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points q(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
  return q;
}

// Points clustered away from the box faces so that minimum image plays no role
// in the oracle comparisons.
Points interior(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.3, 0.7);
  Points p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

SinkhornOptions with_eps(double eps) {
  SinkhornOptions o;
  o.epsilon = eps;
  o.max_iters = 20000;
  return o;
}

}  // namespace

TEST_CASE("position MSE") {
  const DomainSpec dom = DomainSpec::taylor_green();
  std::mt19937_64 rng(1);
  const Points p = test::random_points(30, dom, rng);
  CHECK(mse_positions(p, p, dom) == 0.0);
  Points q = p;
  q.col(0).array() += 0.01;
  CHECK(mse_positions(q, p, dom) == doctest::Approx(0.01 * 0.01 / 3.0).epsilon(1e-9));
  CHECK(mse_positions(point(0.99, 0.5, 0.5), point(0.01, 0.5, 0.5), dom) == doctest::Approx(0.02 * 0.02 / 3.0).epsilon(1e-9));
  CHECK_THROWS_AS(mse_positions(p, Points(p.topRows(5)), dom), std::invalid_argument);
}

TEST_CASE("kinetic energy") {
  Points v = Points::Zero(10, 3);
  CHECK(kinetic_energy(v, 0.3) == 0.0);
  v.col(1).setConstant(2.0);
  CHECK(kinetic_energy(v, 0.3) == doctest::Approx(2.0 * 0.3 * 10));
  CHECK(kinetic_energy(v, Eigen::VectorXd::Constant(10, 0.3)) == doctest::Approx(2.0 * 0.3 * 10));
}

TEST_CASE("kinetic energy of a fresh 8000-particle Taylor-Green field") {
  const auto c = sph::ScenarioConfig::taylor_green(20);
  const sph::ParticleState s = sph::tgv_init(c, 1);
  REQUIRE(s.size() == 8000);
  CHECK(s.mass.sum() == doctest::Approx(1.0));
  CHECK(kinetic_energy(s.velocity, s.mass) == doctest::Approx(0.125).epsilon(0.02));
}

TEST_CASE("exact transport") {
  const DomainSpec dom = DomainSpec::taylor_green();
  std::mt19937_64 rng(2);
  const Points a = interior(6, rng);
  CHECK(exact_ot(a, a, dom) == 0.0);
  Points swapped = a;
  swapped.row(0).swap(swapped.row(3));
  CHECK(exact_ot(a, swapped, dom) == 0.0);
  // Two points: the crossing assignment is never better than the direct one.
  Points x(2, 3), y(2, 3);
  x << 0.2, 0.5, 0.5, 0.6, 0.5, 0.5;
  y << 0.65, 0.5, 0.5, 0.25, 0.5, 0.5;
  CHECK(exact_ot(x, y, dom) == doctest::Approx(0.05 * 0.05));
  CHECK_THROWS_AS(exact_ot(test::random_points(9, dom, rng), test::random_points(9, dom, rng), dom), std::invalid_argument);
  CHECK_THROWS_AS(exact_ot(a, Points(a.topRows(3)), dom), std::invalid_argument);
}

TEST_CASE("Sinkhorn divergence of identical sets vanishes") {
  const DomainSpec dom = DomainSpec::taylor_green();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Points a = test::random_points(40, dom, rng);
    const SinkhornResult r = sinkhorn_distance(a, a, dom);
    CHECK(std::abs(r.value) < 1e-9);
    CHECK(r.converged);
  }
}

TEST_CASE("Sinkhorn divergence of a single pair is the squared distance") {
  const DomainSpec dom = DomainSpec::taylor_green();
  const SinkhornResult r = sinkhorn_distance(point(0, 0, 0), point(0.1, 0, 0), dom, with_eps(1e-4));
  CHECK(r.value == doctest::Approx(0.01).epsilon(0.01));
}

TEST_CASE("Sinkhorn approaches exact transport as epsilon shrinks") {
  const DomainSpec dom = DomainSpec::taylor_green();
  std::mt19937_64 rng(4);
  for (int n : {3, 5}) {
    for (int trial = 0; trial < 3; ++trial) {
      CAPTURE(n);
      CAPTURE(trial);
      const Points a = interior(n, rng), b = interior(n, rng);
      const double exact = exact_ot(a, b, dom);
      double prev = std::numeric_limits<double>::infinity();
      for (double eps : {1e-2, 1e-3, 1e-4, 1e-5}) {
        CAPTURE(eps);
        const SinkhornResult r = sinkhorn_distance(a, b, dom, with_eps(eps));
        CAPTURE(r.marginal_error);
        CHECK(r.converged);
        const double gap = std::abs(r.value - exact);
        CHECK(gap <= prev + 1e-15);
        prev = gap;
      }
      CHECK(prev <= 0.01 * exact);
    }
  }
}

TEST_CASE("Sinkhorn symmetry, sign and permutation invariance") {
  const DomainSpec dom = DomainSpec::reverse_poiseuille();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Points a = test::random_points(30, dom, rng), b = test::random_points(30, dom, rng);
    const double ab = sinkhorn_distance(a, b, dom).value;
    const double ba = sinkhorn_distance(b, a, dom).value;
    CHECK(std::abs(ab - ba) < 1e-9);
    CHECK(ab > -1e-9);
    CHECK(sinkhorn_distance(shuffled(a, rng), shuffled(b, rng), dom).value == ab);
  }
}

TEST_CASE("Sinkhorn reports non-convergence instead of throwing") {
  const DomainSpec dom = DomainSpec::taylor_green();
  std::mt19937_64 rng(6);
  SinkhornOptions o;
  o.max_iters = 1;
  o.tol = 1e-14;
  o.anneal = false;
  const SinkhornResult r = sinkhorn_distance(test::random_points(20, dom, rng), test::random_points(20, dom, rng), dom, o);
  CHECK_FALSE(r.converged);
  CHECK(std::isfinite(r.value));
  CHECK_THROWS_AS(sinkhorn_distance(Points(0, 3), point(0, 0, 0), dom), std::invalid_argument);
}

TEST_CASE("rollout evaluation") {
  std::mt19937_64 rng(7);
  Trajectory ref;
  ref.domain = DomainSpec::taylor_green();
  ref.frame_dt = 0.1;
  ref.metadata["particle_mass"] = 0.01;
  Points p = test::random_points(20, ref.domain, rng);
  const Points v = test::random_normal(20, rng, 0.01);
  for (int f = 0; f < 16; ++f) {
    ref.positions.push_back(p);
    p += v;
    ref.domain.wrap_all(p);
  }
  EvalOptions opt;
  opt.history = 5;
  const EvalReport self = evaluate_rollout(ref, ref, opt);
  REQUIRE(self.mse_p.size() == 10);
  CHECK(self.mse_p_mean() == 0.0);
  CHECK(self.mse_ekin == 0.0);
  CHECK(std::abs(self.sinkhorn_mean) < 1e-9);
  CHECK(self.ekin_ref[3] == doctest::Approx(0.5 * 0.01 * (v / 0.1).squaredNorm()));

  Trajectory frozen = ref;
  for (std::size_t f = 6; f < frozen.positions.size(); ++f) frozen.positions[f] = ref.positions[5];
  opt.sinkhorn_stride = 3;
  const EvalReport z = evaluate_rollout(frozen, ref, opt);
  CHECK(z.sinkhorn_steps == std::vector<int>{0, 3, 6, 9});
  for (std::size_t k = 1; k < z.mse_p.size(); ++k) CHECK(z.mse_p[k] > z.mse_p[k - 1]);
  CHECK(z.mse_ekin > 0.0);
  for (double e : z.ekin_pred) CHECK(e == 0.0);

  const auto summary = summary_json({self, z});
  CHECK(summary.size() == 3);
  CHECK(summary.at("mse_p").get<double>() == doctest::Approx(z.mse_p_mean() / 2));
  std::ostringstream csv;
  write_eval_csv(csv, {z});
  std::istringstream lines(csv.str());
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  CHECK(header == "traj,step,mse_p,ekin_pred,ekin_ref,sinkhorn");
  CHECK(first.rfind("0,0,", 0) == 0);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);
  CHECK(particle_mass(ref) == 0.01);
}
