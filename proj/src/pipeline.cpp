#include "lagr/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

namespace lagr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kGeneratorVersion = "1";

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + index + 1;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string numbered(const std::string& prefix, int i) {
  std::ostringstream os;
  os << prefix << '_';
  os.width(3);
  os.fill('0');
  os << i << ".lgtr";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<Trajectory> load_split(const fs::path& dir, const std::string& prefix) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix + "_", 0) == 0 && entry.path().extension() == ".lgtr") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Trajectory> out;
  for (const auto& f : files) out.push_back(read_trajectory(f));
  return out;
}

void check_compatible(const RunConfig& config, const std::vector<Trajectory>& trajs) {
  for (const auto& t : trajs) {
    if (t.scenario != config.scenario.scenario) {
      throw std::invalid_argument("dataset/config mismatch: dataset scenario " + to_string(t.scenario) +
                                  ", config scenario " + to_string(config.scenario.scenario));
    }
    if ((t.domain.box - config.scenario.domain.box).cwiseAbs().maxCoeff() > 1e-12) {
      throw std::invalid_argument("dataset/config mismatch: box sizes differ");
    }
    if (t.num_frames() < config.train.history + 2) {
      throw std::invalid_argument("dataset/config mismatch: history " + std::to_string(config.train.history) +
                                  " needs trajectories with at least " + std::to_string(config.train.history + 2) +
                                  " frames, found " + std::to_string(t.num_frames()));
    }
  }
}

// Keeps curve rows up to `step`, so a resumed run continues the same file.
void truncate_curve(const fs::path& path, long step) {
  std::ifstream is(path);
  if (!is) return;
  std::string line, kept;
  std::getline(is, line);
  kept = line + "\n";
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (std::stol(line.substr(0, line.find(','))) <= step) kept += line + "\n";
  }
  is.close();
  write_text(path, kept);
}

}  // namespace

Trajectory slice_frames(const Trajectory& traj, int begin, int end) {
  if (begin < 0 || end > traj.num_frames() || begin >= end) throw std::out_of_range("slice_frames: bad window");
  Trajectory out = traj;
  out.positions.assign(traj.positions.begin() + begin, traj.positions.begin() + end);
  if (traj.has_velocities()) out.velocities.assign(traj.velocities.begin() + begin, traj.velocities.begin() + end);
  out.metadata["window"] = {begin, end};
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  Dataset d;
  const fs::path manifest = dir / "split.json";
  if (fs::exists(manifest)) {
    std::ifstream is(manifest);
    const json m = json::parse(is);
    const Trajectory full = read_trajectory(dir / m.at("file").get<std::string>());
    auto window = [&](const char* key) {
      const auto& w = m.at(key);
      return slice_frames(full, w.at(0).get<int>(), w.at(1).get<int>());
    };
    d.train.push_back(window("train"));
    d.valid.push_back(window("valid"));
    d.test.push_back(window("test"));
  } else {
    d.train = load_split(dir, "train");
    d.valid = load_split(dir, "valid");
    d.test = load_split(dir, "test");
  }
  if (d.train.empty()) throw std::runtime_error("dataset " + dir.string() + " has no training trajectories");
  return d;
}

GenerateSummary cmd_generate(const RunConfig& config_in, const fs::path& out_dir, std::ostream& log) {
  const RunConfig config = config_in.resolved();
  config.validate();
  fs::create_directories(out_dir);
  GenerateSummary summary;
  summary.particles = config.scenario.num_particles();
  std::ostringstream ekin;
  ekin.precision(17);
  ekin << "file,frame,time,ekin\n";

  auto produce = [&](const std::string& file, std::uint64_t seed, const json& extra) {
    log << "generating " << file << " (" << summary.particles << " particles, seed " << seed << ")\n";
    Trajectory traj = sph::generate_trajectory(config.scenario, seed);
    traj.metadata["generator_version"] = kGeneratorVersion;
    traj.metadata["config"] = config.to_json();
    traj.metadata["unpublished_defaults"] = {"sound_speed_factor", "background_pressure", "warmup_time", "rpf_force",
                                             "jitter", "noise_std", "pushforward_base", "pushforward_warmup", "optimizer", "sinkhorn"};
    for (const auto& [k, v] : extra.items()) traj.metadata[k] = v;
    const double mass = particle_mass(traj);
    for (int f = 0; f < traj.num_frames(); ++f) {
      ekin << file << ',' << f << ',' << f * traj.frame_dt << ','
           << kinetic_energy(traj.velocities[static_cast<std::size_t>(f)], mass) << '\n';
    }
    const fs::path path = out_dir / file;
    write_trajectory(path, traj);
    summary.files.push_back(path);
    summary.frames = traj.num_frames();
  };

  try {
    if (config.scenario.scenario == Scenario::TaylorGreen) {
      std::uint64_t index = 0;
      const std::pair<const char*, int> splits[] = {
          {"train", config.dataset.train}, {"valid", config.dataset.valid}, {"test", config.dataset.test}};
      for (const auto& [split, count] : splits) {
        for (int i = 0; i < count; ++i) {
          const std::uint64_t seed = mix_seed(config.seed, index++);
          produce(numbered(split, i), seed, {{"split", split}, {"index", i}});
        }
      }
    } else {
      produce("rpf.lgtr", mix_seed(config.seed, 0), {{"split", "all"}});
      const int frames = summary.frames;
      const int a = static_cast<int>(std::lround(frames * config.dataset.rpf_train_fraction));
      const int b = a + static_cast<int>(std::lround(frames * config.dataset.rpf_valid_fraction));
      if (a < 1 || b <= a || b >= frames) throw std::invalid_argument("generate: RPF split leaves an empty window");
      const json manifest = {{"file", "rpf.lgtr"}, {"train", {0, a}}, {"valid", {a, b}}, {"test", {b, frames}}};
      write_text(out_dir / "split.json", manifest.dump(2) + "\n");
      summary.files.push_back(out_dir / "split.json");
    }
  } catch (...) {
    for (const auto& f : summary.files) fs::remove(f);
    throw;
  }
  write_text(out_dir / "ekin.csv", ekin.str());
  write_text(out_dir / "config.json", config.to_json().dump(2) + "\n");
  log << "wrote " << summary.files.size() << " file(s), " << summary.frames << " frames each, to " << out_dir.string()
      << "\n";
  return summary;
}

TrainSummary cmd_train(const RunConfig& config_in, const fs::path& dataset_dir, const fs::path& checkpoint_dir,
                       std::ostream& log, long max_steps) {
  const RunConfig config = config_in.resolved();
  config.validate();
  if (config.model.kind == ModelKind::Zero) throw std::invalid_argument("train: the zero model has nothing to train");
  const Dataset data = load_dataset(dataset_dir);
  check_compatible(config, data.train);
  check_compatible(config, data.valid);
  const std::vector<Trajectory>& valid = data.valid.empty() ? data.train : data.valid;

  const LearnedSimulator<double> model(config.model);
  fs::create_directories(checkpoint_dir);
  const fs::path last = checkpoint_dir / "last.lgck";
  const fs::path best = checkpoint_dir / "best.lgck";
  const fs::path curve = checkpoint_dir / "curve.csv";

  TrainingState state;
  NormalizationStats stats;
  if (fs::exists(last)) {
    Checkpoint c = read_checkpoint(last);
    if (c.config.at("model") != config.to_json().at("model")) {
      throw std::invalid_argument("train: checkpoint in " + checkpoint_dir.string() + " was made for another model");
    }
    state.params = std::move(c.params);
    state.optimizer = std::move(c.optimizer);
    state.step = c.step;
    state.best_valid = c.best_valid;
    stats = c.stats;
    truncate_curve(curve, state.step);
    log << "resuming from step " << state.step << "\n";
  } else {
    state.params = model.init_params(config.seed);
    state.optimizer = ad::AdamState<double>::for_params(state.params);
    stats = compute_stats(stats_mode_for(config.model), data.train, config.train.history);
    write_text(curve, "step,train_loss,valid_mse_p\n");
  }
  log << "model " << config.model.name() << ": " << state.params.parameter_count() << " parameters\n";

  auto snapshot = [&] {
    Checkpoint c;
    c.config = config.to_json();
    c.stats = stats;
    c.step = state.step;
    c.best_valid = state.best_valid;
    c.params = state.params;
    c.optimizer = state.optimizer;
    return c;
  };

  TrainSummary summary;
  std::ofstream curve_os(curve, std::ios::app);
  curve_os.precision(17);
  long run = 0;
  while (state.step < config.train.steps && (max_steps < 0 || run < max_steps)) {
    const double loss = train_step(state, model, config.train, data.train, stats);
    if (!std::isfinite(loss)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(state.step));
    summary.losses.push_back(loss);
    ++run;
    const bool final_step = state.step == config.train.steps;
    if (state.step % config.train.eval_every == 0 || final_step) {
      const double v = validation_rollout_mse(model, state.params, valid, stats, config.train);
      curve_os << state.step << ',' << loss << ',' << v << '\n' << std::flush;
      log << "step " << state.step << " loss " << loss << " valid_mse_p " << v << "\n";
      if (state.best_valid < 0 || v < state.best_valid) {
        state.best_valid = v;
        write_checkpoint(best, snapshot());
      }
    }
    if (state.step % config.train.checkpoint_every == 0 || final_step) write_checkpoint(last, snapshot());
  }
  if (run > 0 && !(state.step % config.train.checkpoint_every == 0 || state.step == config.train.steps)) {
    write_checkpoint(last, snapshot());
  }
  if (!fs::exists(best)) write_checkpoint(best, snapshot());
  summary.final_step = state.step;
  summary.best_valid = state.best_valid;
  summary.best_checkpoint = best;
  return summary;
}

AccelerationModel LoadedModel::accelerations() const { return learned_model(model, params, stats); }

LoadedModel load_model(const RunConfig& config_in, const std::optional<fs::path>& checkpoint) {
  RunConfig config = config_in.resolved();
  if (!checkpoint) {
    if (config.model.kind != ModelKind::Zero) {
      throw std::invalid_argument("model " + config.model.name() + " needs a checkpoint");
    }
    return {config, LearnedSimulator<double>(config.model), {}, NormalizationStats{}};
  }
  Checkpoint c = read_checkpoint(*checkpoint);
  RunConfig stored = RunConfig::from_json(c.config);
  LearnedSimulator<double> model(stored.model);
  if (!model.init_params(0).same_layout(c.params)) {
    throw std::invalid_argument("checkpoint " + checkpoint->string() + " does not match model " + stored.model.name());
  }
  config.model = stored.model;
  config.train.history = stored.train.history;
  config.train.radius_factor = stored.train.radius_factor;
  return {config.resolved(), std::move(model), std::move(c.params), c.stats};
}

Trajectory cmd_rollout(const RunConfig& config, const std::optional<fs::path>& checkpoint, const fs::path& trajectory,
                       const fs::path& output, std::ostream& log) {
  const LoadedModel m = load_model(config, checkpoint);
  const Trajectory ref = read_trajectory(trajectory);
  const double radius = connectivity_radius(ref, m.config.train.radius_factor);
  Trajectory pred;
  try {
    pred = rollout(m.accelerations(), ref, 0, m.config.eval.rollout_steps, m.config.train.history, radius);
  } catch (const RolloutDiverged& e) {
    log << e.what() << "; writing the partial rollout\n";
    pred = e.partial();
  }
  pred.metadata["model"] = m.config.model.name();
  write_trajectory(output, pred);
  log << "wrote " << pred.num_frames() << " frames to " << output.string() << "\n";
  return pred;
}

EvaluateResult evaluate_trajectories(const std::vector<Trajectory>& predicted, const std::vector<Trajectory>& reference,
                                     const RunConfig& config) {
  if (predicted.size() != reference.size()) throw std::invalid_argument("evaluate: prediction/reference count mismatch");
  EvalOptions opt;
  opt.history = config.train.history;
  opt.sinkhorn_stride = config.eval.sinkhorn_stride;
  opt.sinkhorn = config.eval.sinkhorn;
  EvaluateResult r;
  for (std::size_t i = 0; i < predicted.size(); ++i) r.reports.push_back(evaluate_rollout(predicted[i], reference[i], opt));
  const std::string dataset = reference.empty() ? to_string(config.scenario.scenario) : to_string(reference[0].scenario);
  r.summary = {{dataset, summary_json(r.reports)}};
  return r;
}

EvaluateResult cmd_evaluate(const RunConfig& config, const std::optional<fs::path>& checkpoint,
                            const fs::path& dataset_dir, const fs::path& report, std::ostream& log) {
  const LoadedModel m = load_model(config, checkpoint);
  const Dataset data = load_dataset(dataset_dir);
  if (data.test.empty()) throw std::runtime_error("evaluate: dataset has no test trajectories");
  check_compatible(m.config, data.test);
  std::vector<Trajectory> preds;
  std::vector<int> diverged;
  for (const auto& ref : data.test) {
    const double radius = connectivity_radius(ref, m.config.train.radius_factor);
    try {
      preds.push_back(rollout(m.accelerations(), ref, 0, m.config.eval.rollout_steps, m.config.train.history, radius));
      diverged.push_back(-1);
    } catch (const RolloutDiverged& e) {
      log << e.what() << "; keeping metrics up to that step\n";
      preds.push_back(e.partial());
      diverged.push_back(e.step());
    }
  }
  EvaluateResult r = evaluate_trajectories(preds, data.test, m.config);
  for (std::size_t i = 0; i < r.reports.size(); ++i) r.reports[i].diverged_at = diverged[i];
  write_text(report, r.summary.dump(2) + "\n");
  fs::path csv = report;
  csv.replace_extension(".csv");
  std::ostringstream os;
  write_eval_csv(os, r.reports);
  write_text(csv, os.str());
  log << r.summary.dump() << "\n";
  return r;
}

}  // namespace lagr
