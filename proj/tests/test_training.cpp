#include "lagr/training.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace lagr;

namespace {

// Random smooth motion in the unit periodic box, wrapped every frame.
Trajectory synthetic(int n, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Trajectory t;
  t.domain = DomainSpec::taylor_green();
  t.frame_dt = 0.1;
  Points p = test::random_points(n, t.domain, rng);
  Points v = test::random_normal(n, rng, 0.01);
  for (int f = 0; f < frames; ++f) {
    t.positions.push_back(p);
    v += test::random_normal(n, rng, 1e-3);
    p += v;
    t.domain.wrap_all(p);
  }
  return t;
}

Trajectory line_trajectory(std::initializer_list<double> xs) {
  Trajectory t;
  t.domain = DomainSpec::taylor_green();
  t.frame_dt = 1.0;
  for (double x : xs) {
    Points p(1, 3);
    p << x, 0.5, 0.5;
    t.positions.push_back(p);
  }
  return t;
}

Points min_image(const Points& d, const DomainSpec& dom) {
  Points out(d.rows(), 3);
  for (Eigen::Index i = 0; i < d.rows(); ++i) out.row(i) = dom.minimum_image(d.row(i).transpose()).transpose();
  return out;
}

ModelConfig tiny(const std::string& name) {
  ModelConfig c = ModelConfig::from_name(name);
  c.layers = 2;
  c.hidden = name == "gns" ? 16 : 8;
  return c;
}

bool bitwise_equal(const ad::ParamStore<double>& a, const ad::ParamStore<double>& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(a.value(i).data(), b.value(i).data(), sizeof(double) * static_cast<std::size_t>(a.value(i).size())) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("finite-difference velocities and targets") {
  const Trajectory t = line_trajectory({0.0, 0.1, 0.3, 0.6});
  const GraphSample s = make_training_pair(t, 2, 2, 0.1);
  REQUIRE(s.history() == 2);
  CHECK(s.velocity_history[0](0, 0) == doctest::Approx(0.1));
  CHECK(s.velocity_history[1](0, 0) == doctest::Approx(0.2));
  CHECK(s.target(0, 0) == doctest::Approx(0.1));
  CHECK(s.target.rightCols(2).norm() == 0.0);
  CHECK(make_training_pair(t, 1, 1, 0.1).target(0, 0) == doctest::Approx(0.1));

  const GraphSample lin = make_training_pair(line_trajectory({0.1, 0.2, 0.3, 0.4}), 2, 2, 0.1);
  CHECK(std::abs(lin.target(0, 0)) < 1e-15);

  const GraphSample wrap = make_training_pair(line_trajectory({0.98, 0.01}), 1, 1, 0.1);
  CHECK(wrap.velocity_history[0](0, 0) == doctest::Approx(0.03));
  CHECK_FALSE(wrap.has_target());

  CHECK_THROWS_AS(make_training_pair(t, 1, 2, 0.1), std::out_of_range);
  CHECK_THROWS_AS(make_training_pair(t, 4, 2, 0.1), std::out_of_range);
}

TEST_CASE("noise is the identity at zero std and deterministic per seed") {
  const Trajectory t = synthetic(50, 10, 1);
  const GraphSample s = make_training_pair(t, 6, 5, 0.2);
  const GraphSample z = add_noise(s, 0.0, 3);
  CHECK((z.position - s.position).cwiseAbs().maxCoeff() == 0.0);
  CHECK((z.target - s.target).cwiseAbs().maxCoeff() == 0.0);
  const GraphSample a = add_noise(s, 1e-3, 4), b = add_noise(s, 1e-3, 4), c = add_noise(s, 1e-3, 5);
  CHECK((a.velocity_history.back() - b.velocity_history.back()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.velocity_history.back() - c.velocity_history.back()).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(add_noise(s, -1.0, 1), std::invalid_argument);
}

TEST_CASE("accumulated noise has the configured std") {
  const Trajectory t = synthetic(2000, 8, 2);
  const GraphSample s = make_training_pair(t, 6, 5, 0.05);
  const double sigma = 3e-4;
  double sum = 0, sq = 0, first_sq = 0;
  long n = 0;
  for (std::uint64_t seed = 0; seed < 17; ++seed) {
    const GraphSample ns = add_noise(s, sigma, seed);
    const Points d = ns.velocity_history.back() - s.velocity_history.back();
    const Points d0 = ns.velocity_history.front() - s.velocity_history.front();
    sum += d.sum();
    sq += d.squaredNorm();
    first_sq += d0.squaredNorm();
    n += d.size();
  }
  REQUIRE(n >= 100000);
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  CHECK(sd == doctest::Approx(sigma).epsilon(0.01));
  // Random walk: the first step carries 1/H of the final variance.
  CHECK(std::sqrt(first_sq / static_cast<double>(n)) == doctest::Approx(sigma / std::sqrt(5.0)).epsilon(0.02));
}

TEST_CASE("noisy inputs keep the corrected target on the true next position") {
  const Trajectory t = synthetic(200, 10, 3);
  const GraphSample s = make_training_pair(t, 7, 5, 0.15);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GraphSample ns = add_noise(s, 5e-3, seed);
    const Points next = ns.position + ns.velocity_history.back() + ns.target;
    CHECK(min_image(next - t.positions[8], t.domain).cwiseAbs().maxCoeff() < 1e-12);
    // Edges follow the perturbed positions.
    CHECK(ns.edges.size() == build_edges(ns.position, ns.domain, ns.radius).size());
  }
}

TEST_CASE("pushforward schedule") {
  const auto p = pushforward_probabilities(5, 0.5);
  REQUIRE(p.size() == 6);
  CHECK(p[0] == doctest::Approx(32.0 / 63.0).epsilon(1e-15));
  CHECK(p[5] == doctest::Approx(1.0 / 63.0).epsilon(1e-12));
  double total = 0;
  for (double x : p) total += x;
  CHECK(total == 1.0);
  for (int s : {0, 1, 3, 7}) {
    for (double base : {0.25, 0.5, 0.9, 1.0}) {
      double tot = 0;
      for (double x : pushforward_probabilities(s, base)) tot += x;
      CHECK(tot == 1.0);
    }
  }
  CHECK(pushforward_probabilities(0, 0.5) == std::vector<double>{1.0});

  std::vector<int> counts(6, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_pushforward_steps(5, 0.5, static_cast<std::uint64_t>(i)))];
  for (std::size_t s = 0; s < 6; ++s) {
    const double se = std::sqrt(p[s] * (1 - p[s]) / draws);
    CHECK(std::abs(counts[s] / static_cast<double>(draws) - p[s]) < 5 * se);
  }
  CHECK_THROWS_AS(pushforward_probabilities(-1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(pushforward_probabilities(3, 1.5), std::invalid_argument);
}

TEST_CASE("pushforward without steps is the plain one-step loss") {
  const Trajectory t = synthetic(60, 20, 4);
  const LearnedSimulator<double> m(tiny("segnn-avg"));
  const auto params = m.init_params(1);
  TrainConfig cfg;
  cfg.pushforward_steps = 0;
  const NormalizationStats st = compute_stats(NormalizationStats::Mode::Magnitude, {t}, 5);
  ad::Tape<double> tape;
  const auto r = pushforward_loss(tape, m, params, params, t, 10, cfg, st, 99);
  CHECK(r.steps == 0);
  ad::Tape<double> t2;
  const double plain = t2.value(one_step_loss(t2, m, params, r.input, st))(0, 0);
  CHECK(tape.value(r.loss)(0, 0) == plain);
}

TEST_CASE("pushforward rollout steps carry no gradient") {
  const Trajectory t = synthetic(60, 20, 5);
  const LearnedSimulator<double> m(tiny("segnn-tensor"));
  const auto params = m.init_params(2);
  TrainConfig cfg;
  const NormalizationStats st = compute_stats(NormalizationStats::Mode::Magnitude, {t}, 5);

  // A frozen copy with one perturbed block drives the rollout only.
  ad::ParamStore<double> frozen = params;
  frozen.value(3).array() += 0.05;

  ad::Tape<double> tape;
  const auto r = pushforward_loss(tape, m, params, frozen, t, 12, cfg, st, 7, 3);
  REQUIRE(r.steps == 3);
  tape.backward(r.loss);
  const auto g = tape.gradients(params);

  // The same gradient follows from the final input alone.
  GraphSample final_input = r.input;
  final_input.target = st.denormalize_accel(Points(r.target));
  ad::Tape<double> ref;
  const ad::Var loss = one_step_loss(ref, m, params, final_input, st);
  ref.backward(loss);
  const auto want = ref.gradients(params);
  CHECK(tape.size() == ref.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK((g.value(i) - want.value(i)).cwiseAbs().maxCoeff() < 1e-14);

  // The rolled-out state depends on the frozen copy, the gradient path does not see it.
  ad::Tape<double> other;
  const auto r2 = pushforward_loss(other, m, params, params, t, 12, cfg, st, 7, 3);
  CHECK((r2.input.position - r.input.position).cwiseAbs().maxCoeff() > 0.0);

  // The corrected target keeps the final step on the true next frame.
  const Points next = r.input.position + r.input.velocity_history.back() + final_input.target;
  CHECK(min_image(next - t.positions[13], t.domain).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pushforward depth is clamped near the start") {
  const Trajectory t = synthetic(30, 12, 6);
  const LearnedSimulator<double> m(tiny("gns"));
  const auto params = m.init_params(3);
  TrainConfig cfg;
  const NormalizationStats st = compute_stats(NormalizationStats::Mode::PerComponent, {t}, 5);
  ad::Tape<double> tape;
  CHECK(pushforward_loss(tape, m, params, params, t, 6, cfg, st, 1, 5).steps == 1);
  CHECK_THROWS_AS(pushforward_loss(tape, m, params, params, t, 11, cfg, st, 1, 0), std::out_of_range);
}

TEST_CASE("zero-acceleration rollout moves in straight lines") {
  const Trajectory t = synthetic(40, 10, 7);
  const Trajectory r = rollout(zero_model(), t, 2, 100, 5, 0.2);
  REQUIRE(r.num_frames() == 5 + 1 + 100);
  const Points p0 = t.positions[7];
  const Points v = min_image(t.positions[7] - t.positions[6], t.domain);
  for (int k = 1; k <= 100; ++k) {
    Points want = p0 + k * v;
    t.domain.wrap_all(want);
    CHECK(min_image(r.positions[static_cast<std::size_t>(6 + k - 1)] - want, t.domain).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (int k = 0; k <= 5; ++k) CHECK((r.positions[static_cast<std::size_t>(k)] - t.positions[static_cast<std::size_t>(2 + k)]).norm() == 0.0);
}

TEST_CASE("oracle accelerations reproduce the reference") {
  const Trajectory t = synthetic(80, 120, 8);
  const int start = 3, H = 5;
  const Trajectory r = rollout(oracle_model(t, start + H), t, start, 100, H, 0.15);
  REQUIRE(r.num_frames() == H + 1 + 100);
  double worst = 0;
  for (int k = 0; k < r.num_frames(); ++k) {
    worst = std::max(worst, min_image(r.positions[static_cast<std::size_t>(k)] - t.positions[static_cast<std::size_t>(start + k)], t.domain)
                                .cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("divergent rollouts report the step") {
  const Trajectory t = synthetic(10, 10, 9);
  int calls = 0;
  const AccelerationModel bad = [&calls](const GraphSample& s) {
    Points a = Points::Zero(s.num_nodes(), 3);
    if (++calls == 4) a(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return a;
  };
  try {
    rollout(bad, t, 0, 10, 5, 0.2);
    FAIL("expected divergence");
  } catch (const RolloutDiverged& e) {
    CHECK(e.step() == 3);
    CHECK(e.partial().num_frames() == 5 + 1 + 3);
  }
  CHECK_THROWS_AS(rollout(zero_model(), t, 5, 1, 5, 0.2), std::out_of_range);
}

TEST_CASE("normalisation round trips and rotation behaviour") {
  std::mt19937_64 rng(10);
  const std::vector<Trajectory> trajs{synthetic(100, 12, 11), synthetic(100, 12, 12)};
  const auto mag = compute_stats(NormalizationStats::Mode::Magnitude, trajs, 5);
  const auto comp = compute_stats(NormalizationStats::Mode::PerComponent, trajs, 5);
  CHECK(mag.velocity_scale > 0);
  CHECK(mag.accel_scale > 0);
  CHECK(mag.velocity_mean == Vec3::Zero());
  CHECK(mag.velocity_std == Vec3::Ones());
  CHECK((comp.velocity_std.array() > 0).all());

  const Points x = test::random_normal(50, rng, 0.02);
  for (const auto* st : {&mag, &comp}) {
    CHECK((st->denormalize_velocity(st->normalize_velocity(x)) - x).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((st->denormalize_accel(st->normalize_accel(x)) - x).cwiseAbs().maxCoeff() < 1e-12);
  }
  const Eigen::Matrix3d r = test::random_orthogonal(rng);
  const Points rx = test::rotate_points(x, r);
  CHECK((mag.normalize_velocity(rx) - test::rotate_points(mag.normalize_velocity(x), r)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((comp.normalize_velocity(rx) - test::rotate_points(comp.normalize_velocity(x), r)).cwiseAbs().maxCoeff() > 1e-3);

  // RMS Cartesian component of all frame velocities.
  double sq = 0, n = 0;
  for (const auto& t : trajs) {
    for (int f = 1; f < t.num_frames(); ++f) {
      sq += min_image(t.positions[static_cast<std::size_t>(f)] - t.positions[static_cast<std::size_t>(f - 1)], t.domain).squaredNorm();
      n += 3.0 * t.num_particles();
    }
  }
  CHECK(mag.velocity_scale == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-12));
  CHECK(stats_mode_for(ModelConfig::from_name("gns")) == NormalizationStats::Mode::PerComponent);
  CHECK(stats_mode_for(ModelConfig::from_name("segnn-lin")) == NormalizationStats::Mode::Magnitude);
}

TEST_CASE("connectivity radius and external force") {
  Trajectory t = synthetic(512, 3, 13);
  CHECK(connectivity_radius(t, 1.5) == doctest::Approx(1.5 * 0.125));
  CHECK(external_force(t, t.positions[0]).cwiseAbs().maxCoeff() == 0.0);
  t.scenario = Scenario::ReversePoiseuille;
  t.domain = DomainSpec::reverse_poiseuille();
  t.metadata["rpf_force"] = 0.08;
  Points p(2, 3);
  p << 0.3, 0.5, 0.1, 0.3, 1.5, 0.1;
  const Points f = external_force(t, p);
  CHECK(f(0, 0) == doctest::Approx(0.08 * 0.01));
  CHECK(f(1, 0) == doctest::Approx(-0.08 * 0.01));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.history = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.pushforward_steps = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.pushforward_base = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.pushforward_warmup = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("gradient check on tiny models") {
  for (const char* name : {"gns", "segnn-avg", "segnn-lin", "segnn-tensor"}) {
    CAPTURE(name);
    const ModelConfig cfg = tiny(name);
    CHECK(LearnedSimulator<double>(cfg).parameter_count() <= 10000);
    const GradCheckReport d = grad_check<double>(cfg, 1);
    const GradCheckReport f = grad_check<float>(cfg, 1);
    for (const auto& [type, err] : d.max_rel_error) {
      CAPTURE(type);
      CHECK(err < 1e-6);
    }
    for (const auto& [type, err] : f.max_rel_error) {
      CAPTURE(type);
      CHECK(err < 1e-4);
    }
    CHECK(d.checked > 0);
  }
  const GradCheckReport lin = grad_check<double>(tiny("segnn-lin"), 1);
  CHECK(lin.max_rel_error.count("hae/w_h") == 1);
  const GradCheckReport ten = grad_check<double>(tiny("segnn-tensor"), 1);
  CHECK(ten.max_rel_error.count("hae_tp/w110") == 1);
}

TEST_CASE("gradient check detects a corrupted backward rule") {
  CHECK_FALSE(grad_check<double>(tiny("gns"), 2, "layer_norm").passed(1e-6));
  CHECK_FALSE(grad_check<double>(tiny("gns"), 2, "silu").passed(1e-6));
  CHECK_FALSE(grad_check<double>(tiny("segnn-avg"), 2, "cg_product").passed(1e-6));
  CHECK_FALSE(grad_check<double>(tiny("segnn-tensor"), 2, "scatter_add_rows").passed(1e-6));
  CHECK(layer_type("gns/decoder/lin1/w") == "dense/w");
  CHECK(layer_type("segnn/layer0/message0/w110") == "tp/w110");
  CHECK(layer_type("hae/layer3/w_h2") == "hae/w_h");
}

TEST_CASE("training steps are deterministic") {
  const std::vector<Trajectory> train{synthetic(40, 16, 14), synthetic(40, 16, 15)};
  const LearnedSimulator<double> m(tiny("segnn-lin"));
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.steps = 10;
  const NormalizationStats st = compute_stats(NormalizationStats::Mode::Magnitude, train, 5);
  auto run = [&](std::vector<double>& losses) {
    TrainingState s{m.init_params(4), {}, 0, -1.0};
    s.optimizer = ad::AdamState<double>::for_params(s.params);
    for (int i = 0; i < 3; ++i) losses.push_back(train_step(s, m, cfg, train, st));
    return s;
  };
  std::vector<double> la, lb;
  const TrainingState a = run(la), b = run(lb);
  CHECK(la == lb);
  CHECK(bitwise_equal(a.params, b.params));
  CHECK(a.step == 3);
  CHECK(a.optimizer.step == 3);
  CHECK_FALSE(bitwise_equal(a.params, m.init_params(4)));
}

TEST_CASE("pushforward warmup trains one-step only") {
  const std::vector<Trajectory> train{synthetic(40, 16, 16)};
  const LearnedSimulator<double> m(tiny("segnn-avg"));
  const NormalizationStats st = compute_stats(NormalizationStats::Mode::Magnitude, train, 5);
  auto losses = [&](const TrainConfig& cfg) {
    TrainingState s{m.init_params(6), {}, 0, -1.0};
    s.optimizer = ad::AdamState<double>::for_params(s.params);
    std::vector<double> out;
    for (int i = 0; i < 6; ++i) out.push_back(train_step(s, m, cfg, train, st));
    return out;
  };
  TrainConfig plain;
  plain.seed = 8;
  plain.steps = 6;
  plain.pushforward_steps = 0;
  TrainConfig warm = plain;
  warm.pushforward_steps = 5;
  warm.pushforward_base = 1.0;
  warm.pushforward_warmup = 3;
  const auto a = losses(plain), b = losses(warm);
  CHECK(std::equal(a.begin(), a.begin() + 3, b.begin()));
  CHECK_FALSE(std::equal(a.begin() + 3, a.end(), b.begin() + 3));
}
