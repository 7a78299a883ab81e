#include "lagr/training.hpp"

#include "lagr/metrics.hpp"
#include "lagr/sph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

namespace lagr {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL)); }

Points min_image_diff(const Points& a, const Points& b, const DomainSpec& domain) {
  Points d(a.rows(), 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i) d.row(i) = domain.minimum_image((a.row(i) - b.row(i)).transpose()).transpose();
  return d;
}

Points frame(const Trajectory& traj, int t) { return traj.positions.at(static_cast<std::size_t>(t)); }

bool all_finite(const Points& p) { return p.allFinite(); }

Vec3 column_mean(const std::vector<Points>& xs) {
  Vec3 sum = Vec3::Zero();
  double n = 0;
  for (const auto& x : xs) {
    sum += x.colwise().sum().transpose();
    n += static_cast<double>(x.rows());
  }
  return n > 0 ? Vec3(sum / n) : Vec3(Vec3::Zero());
}

Vec3 column_std(const std::vector<Points>& xs, const Vec3& mean) {
  Vec3 sum = Vec3::Zero();
  double n = 0;
  for (const auto& x : xs) {
    sum += (x.rowwise() - mean.transpose()).array().square().matrix().colwise().sum().transpose();
    n += static_cast<double>(x.rows());
  }
  Vec3 s = n > 0 ? Vec3((sum / n).cwiseSqrt()) : Vec3(Vec3::Ones());
  for (int k = 0; k < 3; ++k) {
    if (!(s[k] > 1e-12)) s[k] = 1.0;
  }
  return s;
}

double rms_component(const std::vector<Points>& xs) {
  double sum = 0, n = 0;
  for (const auto& x : xs) {
    sum += x.squaredNorm();
    n += 3.0 * static_cast<double>(x.rows());
  }
  const double s = n > 0 ? std::sqrt(sum / n) : 1.0;
  return s > 1e-12 ? s : 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph samples and normalisation

void rebuild_edges(GraphSample& sample) { sample.edges = build_edges(sample.position, sample.domain, sample.radius); }

NormalizationStats NormalizationStats::from_samples(Mode mode, const std::vector<Points>& velocities,
                                                    const std::vector<Points>& accelerations) {
  NormalizationStats s;
  s.mode = mode;
  if (mode == Mode::PerComponent) {
    s.velocity_mean = column_mean(velocities);
    s.velocity_std = column_std(velocities, s.velocity_mean);
    s.accel_mean = column_mean(accelerations);
    s.accel_std = column_std(accelerations, s.accel_mean);
  } else {
    s.velocity_scale = rms_component(velocities);
    s.accel_scale = rms_component(accelerations);
  }
  return s;
}

Points NormalizationStats::normalize_velocity(const Points& v) const {
  if (mode == Mode::Magnitude) return v / velocity_scale;
  return ((v.rowwise() - velocity_mean.transpose()).array().rowwise() / velocity_std.transpose().array()).matrix();
}

Points NormalizationStats::denormalize_velocity(const Points& v) const {
  if (mode == Mode::Magnitude) return v * velocity_scale;
  return ((v.array().rowwise() * velocity_std.transpose().array()).matrix()).rowwise() + velocity_mean.transpose();
}

Points NormalizationStats::normalize_accel(const Points& a) const {
  if (mode == Mode::Magnitude) return a / accel_scale;
  return ((a.rowwise() - accel_mean.transpose()).array().rowwise() / accel_std.transpose().array()).matrix();
}

Points NormalizationStats::denormalize_accel(const Points& a) const {
  if (mode == Mode::Magnitude) return a * accel_scale;
  return ((a.array().rowwise() * accel_std.transpose().array()).matrix()).rowwise() + accel_mean.transpose();
}

Points NormalizationStats::normalize_force(const Points& f) const {
  if (mode == Mode::Magnitude) return f / accel_scale;
  return (f.array().rowwise() / accel_std.transpose().array()).matrix();
}

NormalizationStats::Mode stats_mode_for(const ModelConfig& model) {
  return model.kind == ModelKind::Gns ? NormalizationStats::Mode::PerComponent : NormalizationStats::Mode::Magnitude;
}

NormalizationStats compute_stats(NormalizationStats::Mode mode, const std::vector<Trajectory>& trajs, int history) {
  (void)history;
  std::vector<Points> vel, acc;
  for (const auto& traj : trajs) {
    for (int t = 1; t < traj.num_frames(); ++t) {
      const Points v = min_image_diff(frame(traj, t), frame(traj, t - 1), traj.domain);
      vel.push_back(v);
      if (t + 1 < traj.num_frames()) acc.push_back(min_image_diff(frame(traj, t + 1), frame(traj, t), traj.domain) - v);
    }
  }
  if (vel.empty() || acc.empty()) throw std::invalid_argument("compute_stats: need trajectories with >= 3 frames");
  return NormalizationStats::from_samples(mode, vel, acc);
}

// ---------------------------------------------------------------------------
// Training pairs

void TrainConfig::validate() const {
  if (history < 1) throw std::invalid_argument("train: history must be >= 1");
  if (noise_std < 0) throw std::invalid_argument("train: noise_std must be >= 0");
  if (pushforward_steps < 0) throw std::invalid_argument("train: pushforward_steps must be >= 0");
  if (!(pushforward_base > 0 && pushforward_base <= 1)) throw std::invalid_argument("train: pushforward_base must lie in (0, 1]");
  if (pushforward_warmup < 0) throw std::invalid_argument("train: pushforward_warmup must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (!(lr_start > 0 && lr_end > 0)) throw std::invalid_argument("train: learning rates must be positive");
  if (!(radius_factor > 0)) throw std::invalid_argument("train: radius_factor must be positive");
  if (eval_every < 1 || checkpoint_every < 1) throw std::invalid_argument("train: eval/checkpoint intervals must be >= 1");
  if (valid_rollout_steps < 1 || rollout_steps < 1) throw std::invalid_argument("train: rollout lengths must be >= 1");
}

double connectivity_radius(const Trajectory& traj, double radius_factor) {
  if (traj.num_particles() == 0) throw std::invalid_argument("connectivity_radius: empty trajectory");
  return radius_factor * std::cbrt(traj.domain.volume() / traj.num_particles());
}

Points external_force(const Trajectory& traj, const Points& positions) {
  Points f = Points::Zero(positions.rows(), 3);
  if (traj.scenario != Scenario::ReversePoiseuille) return f;
  const double magnitude = traj.metadata.value("rpf_force", 0.0);
  const double scale = traj.frame_dt * traj.frame_dt;
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    f.row(i) = (sph::rpf_accel(positions.row(i).transpose(), traj.domain, magnitude) * scale).transpose();
  }
  return f;
}

GraphSample make_training_pair(const Trajectory& traj, int t, int history, double radius) {
  if (history < 1) throw std::invalid_argument("make_training_pair: history must be >= 1");
  if (t < history || t >= traj.num_frames()) {
    throw std::out_of_range("make_training_pair: frame " + std::to_string(t) + " outside [" +
                            std::to_string(history) + ", " + std::to_string(traj.num_frames()) + ")");
  }
  GraphSample s;
  s.domain = traj.domain;
  s.radius = radius;
  s.position = frame(traj, t);
  for (int k = t - history + 1; k <= t; ++k) {
    s.velocity_history.push_back(min_image_diff(frame(traj, k), frame(traj, k - 1), traj.domain));
  }
  if (t + 1 < traj.num_frames()) {
    s.target = min_image_diff(frame(traj, t + 1), frame(traj, t), traj.domain) - s.velocity_history.back();
  }
  s.force = external_force(traj, s.position);
  rebuild_edges(s);
  return s;
}

GraphSample add_noise(const GraphSample& sample, double std, std::uint64_t seed) {
  if (std < 0) throw std::invalid_argument("add_noise: std must be >= 0");
  if (std == 0.0) return sample;
  GraphSample out = sample;
  const int H = sample.history();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std / std::sqrt(static_cast<double>(H)));
  const Eigen::Index n = sample.position.rows();
  Points walk = Points::Zero(n, 3);
  Points position_noise = Points::Zero(n, 3);
  for (int h = 0; h < H; ++h) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) walk(i, k) += nd(rng);
    }
    out.velocity_history[static_cast<std::size_t>(h)] += walk;
    position_noise += walk;
  }
  out.position += position_noise;
  out.domain.wrap_all(out.position);
  if (out.has_target()) out.target -= position_noise + walk;
  rebuild_edges(out);
  return out;
}

GraphSample advance(const GraphSample& sample, const Points& accel, const Trajectory& traj) {
  GraphSample out;
  out.domain = sample.domain;
  out.radius = sample.radius;
  const Points v = sample.velocity_history.back() + accel;
  out.velocity_history.assign(sample.velocity_history.begin() + 1, sample.velocity_history.end());
  out.velocity_history.push_back(v);
  out.position = sample.position + v;
  if (!all_finite(out.position)) throw std::runtime_error("advance: non-finite positions");
  out.domain.wrap_all(out.position);
  out.force = external_force(traj, out.position);
  rebuild_edges(out);
  return out;
}

std::vector<double> pushforward_probabilities(int max_steps, double base) {
  if (max_steps < 0) throw std::invalid_argument("pushforward: max_steps must be >= 0");
  if (!(base > 0 && base <= 1)) throw std::invalid_argument("pushforward: base must lie in (0, 1]");
  std::vector<double> w(static_cast<std::size_t>(max_steps) + 1);
  double total = 0;
  for (int s = 0; s <= max_steps; ++s) total += (w[static_cast<std::size_t>(s)] = std::pow(base, s));
  double head = 0;
  for (int s = 0; s < max_steps; ++s) head += (w[static_cast<std::size_t>(s)] /= total);
  w.back() = 1.0 - head;
  return w;
}

int sample_pushforward_steps(int max_steps, double base, std::uint64_t seed) {
  const auto p = pushforward_probabilities(max_steps, base);
  std::mt19937_64 rng(seed);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0;
  for (std::size_t s = 0; s < p.size(); ++s) {
    acc += p[s];
    if (u < acc) return static_cast<int>(s);
  }
  return max_steps;
}

// ---------------------------------------------------------------------------
// Models as acceleration functions and rollout

AccelerationModel zero_model() {
  return [](const GraphSample& s) { return Points(Points::Zero(s.num_nodes(), 3)); };
}

AccelerationModel oracle_model(const Trajectory& reference, int first_frame) {
  auto counter = std::make_shared<int>(0);
  return [&reference, first_frame, counter](const GraphSample&) {
    const int t = first_frame + (*counter)++;
    if (t < 1 || t + 1 >= reference.num_frames()) throw std::out_of_range("oracle_model: ran past the reference");
    return Points(min_image_diff(frame(reference, t + 1), frame(reference, t), reference.domain) -
                  min_image_diff(frame(reference, t), frame(reference, t - 1), reference.domain));
  };
}

template <typename S>
AccelerationModel learned_model(const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                                const NormalizationStats& stats) {
  return [&model, &params, stats](const GraphSample& sample) {
    ad::Tape<S> tape;
    const ad::Var out = model.forward(tape, params, sample, stats);
    const Points a = tape.value(out).template cast<double>();
    return stats.denormalize_accel(a);
  };
}

template AccelerationModel learned_model(const LearnedSimulator<float>&, const ad::ParamStore<float>&,
                                         const NormalizationStats&);
template AccelerationModel learned_model(const LearnedSimulator<double>&, const ad::ParamStore<double>&,
                                         const NormalizationStats&);

Trajectory rollout(const AccelerationModel& model, const Trajectory& reference, int start, int n_steps, int history,
                   double radius) {
  if (start < 0 || start + history >= reference.num_frames()) {
    throw std::out_of_range("rollout: need frames " + std::to_string(start) + ".." + std::to_string(start + history) +
                            " but the reference has " + std::to_string(reference.num_frames()));
  }
  if (n_steps < 0) throw std::invalid_argument("rollout: n_steps must be >= 0");
  Trajectory out;
  out.frame_dt = reference.frame_dt;
  out.domain = reference.domain;
  out.scenario = reference.scenario;
  out.metadata = reference.metadata;
  out.metadata["rollout_start"] = start;
  out.metadata["rollout_history"] = history;
  for (int k = start; k <= start + history; ++k) out.positions.push_back(frame(reference, k));

  GraphSample sample = make_training_pair(reference, start + history, history, radius);
  sample.target.resize(0, 3);
  for (int step = 0; step < n_steps; ++step) {
    const Points a = model(sample);
    if (a.rows() != sample.num_nodes() || !all_finite(a)) throw RolloutDiverged(step, out);
    try {
      sample = advance(sample, a, reference);
    } catch (const std::exception&) {
      throw RolloutDiverged(step, out);
    }
    out.positions.push_back(sample.position);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

template <typename S>
ad::Var one_step_loss(ad::Tape<S>& tape, const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                      const GraphSample& sample, const NormalizationStats& stats) {
  if (!sample.has_target()) throw std::invalid_argument("one_step_loss: sample has no target");
  const Matrix<S> target = stats.normalize_accel(sample.target).template cast<S>();
  return ad::mse(tape, model.forward(tape, params, sample, stats), target);
}

template <typename S>
PushforwardResult<S> pushforward_loss(ad::Tape<S>& tape, const LearnedSimulator<S>& model,
                                      const ad::ParamStore<S>& params, const ad::ParamStore<S>& rollout_params,
                                      const Trajectory& traj, int t, const TrainConfig& config,
                                      const NormalizationStats& stats, std::uint64_t seed, int forced_steps) {
  const int H = config.history;
  if (t < H || t + 1 >= traj.num_frames()) throw std::out_of_range("pushforward_loss: frame outside [H, frames - 1)");
  int s = forced_steps >= 0 ? forced_steps
                            : sample_pushforward_steps(config.pushforward_steps, config.pushforward_base,
                                                       derive_seed(seed, 1));
  s = std::min(s, t - H);
  const double radius = connectivity_radius(traj, config.radius_factor);

  GraphSample sample = add_noise(make_training_pair(traj, t - s, H, radius), config.noise_std, derive_seed(seed, 2));
  const AccelerationModel frozen = learned_model(model, rollout_params, stats);
  for (int k = 0; k < s; ++k) sample = advance(sample, frozen(sample), traj);

  // Keep the next position on the ground truth.
  sample.target = min_image_diff(frame(traj, t + 1), sample.position, traj.domain) - sample.velocity_history.back();

  PushforwardResult<S> r;
  r.steps = s;
  r.target = stats.normalize_accel(sample.target).template cast<S>();
  r.loss = ad::mse(tape, model.forward(tape, params, sample, stats), r.target);
  r.input = std::move(sample);
  return r;
}

template ad::Var one_step_loss(ad::Tape<float>&, const LearnedSimulator<float>&, const ad::ParamStore<float>&,
                               const GraphSample&, const NormalizationStats&);
template ad::Var one_step_loss(ad::Tape<double>&, const LearnedSimulator<double>&, const ad::ParamStore<double>&,
                               const GraphSample&, const NormalizationStats&);
template PushforwardResult<float> pushforward_loss(ad::Tape<float>&, const LearnedSimulator<float>&,
                                                   const ad::ParamStore<float>&, const ad::ParamStore<float>&,
                                                   const Trajectory&, int, const TrainConfig&,
                                                   const NormalizationStats&, std::uint64_t, int);
template PushforwardResult<double> pushforward_loss(ad::Tape<double>&, const LearnedSimulator<double>&,
                                                    const ad::ParamStore<double>&, const ad::ParamStore<double>&,
                                                    const Trajectory&, int, const TrainConfig&,
                                                    const NormalizationStats&, std::uint64_t, int);

// ---------------------------------------------------------------------------
// Optimisation

double train_step(TrainingState& state, const LearnedSimulator<double>& model, const TrainConfig& config,
                  const std::vector<Trajectory>& train, const NormalizationStats& stats) {
  if (train.empty()) throw std::invalid_argument("train_step: no training trajectories");
  std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(state.step)));
  ad::ParamStore<double> grads = state.params.zeros_like();
  double loss = 0;
  const double w = 1.0 / config.batch_size;
  for (int b = 0; b < config.batch_size; ++b) {
    const auto& traj = train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)];
    if (traj.num_frames() < config.history + 2) {
      throw std::invalid_argument("train_step: trajectory has " + std::to_string(traj.num_frames()) +
                                  " frames, history " + std::to_string(config.history) + " needs at least " +
                                  std::to_string(config.history + 2));
    }
    const int t = std::uniform_int_distribution<int>(config.history, traj.num_frames() - 2)(rng);
    ad::Tape<double> tape;
    const int forced = state.step < config.pushforward_warmup ? 0 : -1;
    const auto r = pushforward_loss(tape, model, state.params, state.params, traj, t, config, stats, rng(), forced);
    tape.backward(r.loss);
    grads.axpy(w, tape.gradients(state.params));
    loss += w * tape.value(r.loss)(0, 0);
  }
  const double lr = ad::exponential_lr(config.lr_start, config.lr_end, state.step, std::max(1L, config.steps));
  auto next = ad::adam_step(std::move(state.params), grads, std::move(state.optimizer), lr, config.adam);
  state.params = std::move(next.params);
  state.optimizer = std::move(next.state);
  ++state.step;
  return loss;
}

double validation_accel_mse(const LearnedSimulator<double>& model, const ad::ParamStore<double>& params,
                            const std::vector<Trajectory>& valid, const NormalizationStats& stats,
                            const TrainConfig& config, int max_frames_per_traj) {
  double sum = 0;
  int count = 0;
  for (const auto& traj : valid) {
    const int lo = config.history, hi = traj.num_frames() - 2;
    if (hi < lo) continue;
    const int n = std::min(max_frames_per_traj, hi - lo + 1);
    const double radius = connectivity_radius(traj, config.radius_factor);
    for (int k = 0; k < n; ++k) {
      const int t = n == 1 ? lo : lo + static_cast<int>(std::lround(static_cast<double>(k) * (hi - lo) / (n - 1)));
      ad::Tape<double> tape;
      sum += tape.value(one_step_loss(tape, model, params, make_training_pair(traj, t, config.history, radius), stats))(0, 0);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("validation: no usable validation frames");
  return sum / count;
}

double validation_rollout_mse(const LearnedSimulator<double>& model, const ad::ParamStore<double>& params,
                              const std::vector<Trajectory>& valid, const NormalizationStats& stats,
                              const TrainConfig& config) {
  double sum = 0;
  int count = 0;
  const AccelerationModel m = learned_model(model, params, stats);
  for (const auto& traj : valid) {
    const int steps = std::min(config.valid_rollout_steps, traj.num_frames() - config.history - 1);
    if (steps < 1) continue;
    const double radius = connectivity_radius(traj, config.radius_factor);
    Trajectory pred;
    try {
      pred = rollout(m, traj, 0, steps, config.history, radius);
    } catch (const RolloutDiverged&) {
      return std::numeric_limits<double>::infinity();
    }
    for (int k = config.history + 1; k < pred.num_frames(); ++k) {
      sum += mse_positions(frame(pred, k), frame(traj, k), traj.domain);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("validation: trajectories too short for a rollout");
  return sum / count;
}

// ---------------------------------------------------------------------------
// Gradient check

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& [k, v] : max_rel_error) w = std::max(w, v);
  return w;
}

std::string layer_type(const std::string& name) {
  const auto slash = name.rfind('/');
  const std::string leaf = slash == std::string::npos ? name : name.substr(slash + 1);
  if (name.rfind("hae/", 0) == 0) return leaf.rfind("w_h", 0) == 0 ? "hae/w_h" : "hae_tp/" + leaf;
  if (name.find("/norm/") != std::string::npos) return "layer_norm/" + leaf;
  if (name.find("/lin") != std::string::npos) return "dense/" + leaf;
  return "tp/" + leaf;
}

GraphSample random_sample(int num_nodes, int history, double radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  GraphSample s;
  s.domain = DomainSpec::taylor_green();
  s.radius = radius;
  s.position.resize(num_nodes, 3);
  for (Eigen::Index i = 0; i < s.position.size(); ++i) s.position.data()[i] = u(rng);
  auto normal_points = [&] {
    Points p(num_nodes, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = nd(rng);
    return p;
  };
  for (int h = 0; h < history; ++h) s.velocity_history.push_back(normal_points());
  s.force = normal_points();
  s.target = normal_points();
  rebuild_edges(s);
  return s;
}

template <typename S>
GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, const std::string& fault_op, double step,
                           int max_entries_per_block) {
  const LearnedSimulator<S> model(config);
  const ad::ParamStore<S> params = model.init_params(seed);
  const GraphSample sample = random_sample(16, config.history, 0.4, derive_seed(seed, 7));
  const NormalizationStats stats;

  ad::Tape<S> tape;
  if (!fault_op.empty()) tape.inject_fault(fault_op);
  tape.backward(one_step_loss(tape, model, params, sample, stats));
  const ad::ParamStore<S> grads = tape.gradients(params);

  const LearnedSimulator<double> reference(config);
  ad::ParamStore<double> p = params.template cast<double>();
  auto loss_at = [&] {
    ad::Tape<double> t;
    return t.value(one_step_loss(t, reference, p, sample, stats))(0, 0);
  };

  GradCheckReport report;
  std::mt19937_64 rng(derive_seed(seed, 11));
  for (std::size_t b = 0; b < p.size(); ++b) {
    Matrix<double>& block = p.value(b);
    const Eigen::Index n = block.size();
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(n));
    std::iota(entries.begin(), entries.end(), 0);
    if (n > max_entries_per_block) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(max_entries_per_block));
    }
    double max_fd = 0, max_diff = 0;
    for (Eigen::Index e : entries) {
      const double orig = block.data()[e];
      block.data()[e] = orig + step;
      const double up = loss_at();
      block.data()[e] = orig - step;
      const double down = loss_at();
      block.data()[e] = orig;
      const double fd = (up - down) / (2 * step);
      const double g = static_cast<double>(grads.value(b).data()[e]);
      max_fd = std::max(max_fd, std::abs(fd));
      max_diff = std::max(max_diff, std::abs(g - fd));
      ++report.checked;
    }
    const double rel = max_diff / std::max(max_fd, 1e-8);
    double& slot = report.max_rel_error[layer_type(p.name(b))];
    slot = std::max(slot, rel);
  }
  return report;
}

template GradCheckReport grad_check<float>(const ModelConfig&, std::uint64_t, const std::string&, double, int);
template GradCheckReport grad_check<double>(const ModelConfig&, std::uint64_t, const std::string&, double, int);

}  // namespace lagr
