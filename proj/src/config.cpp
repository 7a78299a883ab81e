#include "lagr/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace lagr {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw std::invalid_argument("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "' in " + (section.empty() ? "top level" : "section '" + section + "'"));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& field) {
  if (!obj.contains(key)) return;
  try {
    field = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json section(const json& j, const char* name) { return j.contains(name) ? j.at(name) : json::object(); }

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, "", {"scenario", "dataset", "model", "train", "eval", "seed"});
  RunConfig c;
  read(j, "seed", c.seed);

  const json s = section(j, "scenario");
  reject_unknown(s, "scenario", {"name", "dx", "reference_velocity", "reference_length", "viscosity", "rest_density",
                                 "dt", "frames", "stride", "rpf_force", "warmup_time", "jitter", "relaxation_steps", "sound_speed_factor"});
  std::string name = "tgv";
  read(s, "name", name);
  const Scenario kind = scenario_from_string(name);
  c.scenario = kind == Scenario::TaylorGreen ? sph::ScenarioConfig::taylor_green(20)
                                             : sph::ScenarioConfig::reverse_poiseuille(0.05);
  auto& sc = c.scenario;
  read(s, "dx", sc.dx);
  read(s, "reference_velocity", sc.reference_velocity);
  read(s, "reference_length", sc.reference_length);
  read(s, "viscosity", sc.viscosity);
  read(s, "rest_density", sc.rest_density);
  read(s, "dt", sc.dt);
  read(s, "frames", sc.frames);
  read(s, "stride", sc.stride);
  read(s, "rpf_force", sc.rpf_force);
  read(s, "warmup_time", sc.warmup_time);
  read(s, "jitter", sc.jitter);
  read(s, "relaxation_steps", sc.relaxation_steps);
  read(s, "sound_speed_factor", sc.sound_speed_factor);

  const json d = section(j, "dataset");
  reject_unknown(d, "dataset", {"train", "valid", "test", "rpf_train_fraction", "rpf_valid_fraction"});
  read(d, "train", c.dataset.train);
  read(d, "valid", c.dataset.valid);
  read(d, "test", c.dataset.test);
  read(d, "rpf_train_fraction", c.dataset.rpf_train_fraction);
  read(d, "rpf_valid_fraction", c.dataset.rpf_valid_fraction);

  const json m = section(j, "model");
  reject_unknown(m, "model", {"name", "layers", "hidden", "force_in_attributes"});
  std::string model_name = "segnn-avg";
  read(m, "name", model_name);
  c.model = ModelConfig::from_name(model_name);
  read(m, "layers", c.model.layers);
  read(m, "hidden", c.model.hidden);
  read(m, "force_in_attributes", c.model.force_in_attributes);

  const json t = section(j, "train");
  reject_unknown(t, "train", {"history", "noise_std", "pushforward_steps", "pushforward_base", "pushforward_warmup",
                              "batch_size", "steps",
                              "lr_start", "lr_end", "adam_beta1", "adam_beta2", "adam_eps", "radius_factor",
                              "eval_every", "checkpoint_every", "valid_rollout_steps"});
  auto& tc = c.train;
  read(t, "history", tc.history);
  read(t, "noise_std", tc.noise_std);
  read(t, "pushforward_steps", tc.pushforward_steps);
  read(t, "pushforward_base", tc.pushforward_base);
  read(t, "pushforward_warmup", tc.pushforward_warmup);
  read(t, "batch_size", tc.batch_size);
  read(t, "steps", tc.steps);
  read(t, "lr_start", tc.lr_start);
  read(t, "lr_end", tc.lr_end);
  read(t, "adam_beta1", tc.adam.beta1);
  read(t, "adam_beta2", tc.adam.beta2);
  read(t, "adam_eps", tc.adam.eps);
  read(t, "radius_factor", tc.radius_factor);
  read(t, "eval_every", tc.eval_every);
  read(t, "checkpoint_every", tc.checkpoint_every);
  read(t, "valid_rollout_steps", tc.valid_rollout_steps);

  const json e = section(j, "eval");
  reject_unknown(e, "eval", {"rollout_steps", "sinkhorn_stride", "sinkhorn_epsilon", "sinkhorn_max_iters",
                             "sinkhorn_tol", "sinkhorn_anneal"});
  read(e, "rollout_steps", c.eval.rollout_steps);
  read(e, "sinkhorn_stride", c.eval.sinkhorn_stride);
  read(e, "sinkhorn_epsilon", c.eval.sinkhorn.epsilon);
  read(e, "sinkhorn_max_iters", c.eval.sinkhorn.max_iters);
  read(e, "sinkhorn_tol", c.eval.sinkhorn.tol);
  read(e, "sinkhorn_anneal", c.eval.sinkhorn.anneal);
  return c.resolved();
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  const auto& sc = scenario;
  const auto& tc = train;
  return {
      {"seed", seed},
      {"scenario",
       {{"name", lagr::to_string(sc.scenario)},
        {"dx", sc.dx},
        {"reference_velocity", sc.reference_velocity},
        {"reference_length", sc.reference_length},
        {"viscosity", sc.viscosity},
        {"rest_density", sc.rest_density},
        {"dt", sc.dt},
        {"frames", sc.frames},
        {"stride", sc.stride},
        {"rpf_force", sc.rpf_force},
        {"warmup_time", sc.warmup_time},
        {"jitter", sc.jitter},
        {"relaxation_steps", sc.relaxation_steps},
        {"sound_speed_factor", sc.sound_speed_factor}}},
      {"dataset",
       {{"train", dataset.train},
        {"valid", dataset.valid},
        {"test", dataset.test},
        {"rpf_train_fraction", dataset.rpf_train_fraction},
        {"rpf_valid_fraction", dataset.rpf_valid_fraction}}},
      {"model",
       {{"name", model.name()},
        {"layers", model.layers},
        {"hidden", model.hidden},
        {"force_in_attributes", model.force_in_attributes}}},
      {"train",
       {{"history", tc.history},
        {"noise_std", tc.noise_std},
        {"pushforward_steps", tc.pushforward_steps},
        {"pushforward_base", tc.pushforward_base},
        {"pushforward_warmup", tc.pushforward_warmup},
        {"batch_size", tc.batch_size},
        {"steps", tc.steps},
        {"lr_start", tc.lr_start},
        {"lr_end", tc.lr_end},
        {"adam_beta1", tc.adam.beta1},
        {"adam_beta2", tc.adam.beta2},
        {"adam_eps", tc.adam.eps},
        {"radius_factor", tc.radius_factor},
        {"eval_every", tc.eval_every},
        {"checkpoint_every", tc.checkpoint_every},
        {"valid_rollout_steps", tc.valid_rollout_steps}}},
      {"eval",
       {{"rollout_steps", eval.rollout_steps},
        {"sinkhorn_stride", eval.sinkhorn_stride},
        {"sinkhorn_epsilon", eval.sinkhorn.epsilon},
        {"sinkhorn_max_iters", eval.sinkhorn.max_iters},
        {"sinkhorn_tol", eval.sinkhorn.tol},
        {"sinkhorn_anneal", eval.sinkhorn.anneal}}},
  };
}

RunConfig RunConfig::resolved() const {
  RunConfig c = *this;
  c.model.history = c.train.history;
  c.train.seed = c.seed;
  c.train.rollout_steps = c.eval.rollout_steps;
  return c;
}

void RunConfig::validate() const {
  scenario.validate();
  train.validate();
  if (dataset.train < 0 || dataset.valid < 0 || dataset.test < 0) {
    throw std::invalid_argument("config: dataset counts must be >= 0");
  }
  const double f = dataset.rpf_train_fraction + dataset.rpf_valid_fraction;
  if (!(dataset.rpf_train_fraction > 0) || !(dataset.rpf_valid_fraction >= 0) || !(f < 1)) {
    throw std::invalid_argument("config: RPF split fractions must be positive and sum to less than 1");
  }
  if (model.kind != ModelKind::Zero && (model.layers < 1 || model.hidden < 2)) {
    throw std::invalid_argument("config: model needs layers >= 1 and hidden >= 2");
  }
  if (eval.rollout_steps < 1 || eval.sinkhorn_stride < 1) {
    throw std::invalid_argument("config: eval.rollout_steps and eval.sinkhorn_stride must be >= 1");
  }
  if (!(eval.sinkhorn.epsilon > 0) || eval.sinkhorn.max_iters < 1 || !(eval.sinkhorn.tol > 0)) {
    throw std::invalid_argument("config: Sinkhorn epsilon, max_iters and tol must be positive");
  }
}

}  // namespace lagr
