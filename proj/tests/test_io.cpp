#include "io_fixtures.hpp"
#include "lagr/pipeline.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

using namespace lagr;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace lagr::test;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lagr_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_config() {
  RunConfig c = RunConfig::from_json(json{{"seed", 11},
                                          {"scenario", {{"name", "tgv"}, {"dx", 0.125}}},
                                          {"dataset", {{"train", 2}, {"valid", 1}, {"test", 1}}},
                                          {"model", {{"name", "segnn-lin"}, {"layers", 2}, {"hidden", 16}}},
                                          {"train", {{"steps", 20}, {"eval_every", 10}, {"checkpoint_every", 10},
                                                     {"valid_rollout_steps", 5}, {"batch_size", 1}}},
                                          {"eval", {{"rollout_steps", 20}, {"sinkhorn_stride", 5}}}});
  return c;
}

// One generated 2/1/1 dataset shared by the pipeline cases.
const fs::path& shared_dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("dataset");
    std::ostringstream log;
    cmd_generate(tiny_config(), d, log);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("trajectory files round-trip bitwise") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Trajectory t = random_trajectory(rng);
    const std::string bytes = bytes_of(t);
    std::istringstream is(bytes, std::ios::binary);
    const Trajectory back = read_trajectory(is);
    CHECK(bytes_of(back) == bytes);
    REQUIRE(back.num_frames() == t.num_frames());
    CHECK(back.has_velocities() == t.has_velocities());
    for (int f = 0; f < t.num_frames(); ++f) {
      CHECK(same_bits(back.positions[static_cast<std::size_t>(f)], t.positions[static_cast<std::size_t>(f)]));
      if (t.has_velocities()) {
        CHECK(same_bits(back.velocities[static_cast<std::size_t>(f)], t.velocities[static_cast<std::size_t>(f)]));
      }
    }
    CHECK(std::memcmp(&back.frame_dt, &t.frame_dt, sizeof(double)) == 0);
    CHECK(same_bits(back.domain.box, t.domain.box));
    CHECK(back.scenario == t.scenario);
    CHECK(back.metadata == t.metadata);
  }
}

TEST_CASE("trajectory header layout") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Trajectory t = random_trajectory(rng);
    const std::string s = bytes_of(t);
    CHECK(s.substr(0, 4) == "LGTR");
    CHECK(read_le<std::uint16_t>(s, 4) == kTrajectoryVersion);
    const auto n = read_le<std::uint32_t>(s, 6);
    const auto frames = read_le<std::uint32_t>(s, 10);
    CHECK(n == static_cast<std::uint32_t>(t.num_particles()));
    CHECK(frames == static_cast<std::uint32_t>(t.num_frames()));
    CHECK(read_le<double>(s, 14) == t.frame_dt);
    for (int k = 0; k < 3; ++k) CHECK(read_le<double>(s, 22 + 8 * static_cast<std::size_t>(k)) == t.domain.box[k]);
    CHECK(static_cast<int>(s[46]) == static_cast<int>(t.scenario));
    const int flag = s[47] & 1;
    CHECK(flag == (t.has_velocities() ? 1 : 0));
    const std::size_t header = 48;
    const std::size_t payload = std::size_t{frames} * n * 3 * 4 * (1 + static_cast<std::size_t>(flag));
    // First stored coordinate is the first position as f32.
    CHECK(read_le<float>(s, header) == static_cast<float>(t.positions[0](0, 0)));
    const auto meta_len = read_le<std::uint32_t>(s, header + payload);
    CHECK(s.size() == header + payload + 4 + meta_len);
    CHECK(json::parse(s.substr(header + payload + 4)) == t.metadata);
  }
}

TEST_CASE("trajectory reader refuses bad input") {
  std::mt19937_64 rng(3);
  const std::string good = bytes_of(random_trajectory(rng));
  auto read = [](const std::string& s) {
    std::istringstream is(s, std::ios::binary);
    return read_trajectory(is);
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(read(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 7;
  try {
    read(bad_version);
    FAIL("unknown version accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version 7") != std::string::npos);
  }
  CHECK_THROWS_AS(read(good.substr(0, good.size() / 2)), FormatError);
  CHECK_THROWS_AS(read(good.substr(0, 20)), FormatError);
  std::string bad_flags = good;
  bad_flags[47] = static_cast<char>(bad_flags[47] | 4);
  CHECK_THROWS_AS(read(bad_flags), FormatError);
}

TEST_CASE("checkpoint files round-trip bitwise") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Checkpoint c = random_checkpoint(rng);
    const std::string bytes = bytes_of(c);
    CHECK(bytes.substr(0, 4) == "LGCK");
    CHECK(read_le<std::uint16_t>(bytes, 4) == kCheckpointVersion);
    std::istringstream is(bytes, std::ios::binary);
    const Checkpoint back = read_checkpoint(is);
    CHECK(bytes_of(back) == bytes);
    REQUIRE(back.params.size() == c.params.size());
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      CHECK(back.params.name(i) == c.params.name(i));
      CHECK(same_bits(back.params.value(i), c.params.value(i)));
      CHECK(same_bits(back.optimizer.first.value(i), c.optimizer.first.value(i)));
      CHECK(same_bits(back.optimizer.second.value(i), c.optimizer.second.value(i)));
    }
    CHECK(back.optimizer.step == c.optimizer.step);
    CHECK(back.step == c.step);
    CHECK(std::memcmp(&back.best_valid, &c.best_valid, sizeof(double)) == 0);
    CHECK(back.config == c.config);
    CHECK(back.stats.mode == c.stats.mode);
    CHECK(same_bits(back.stats.velocity_mean, c.stats.velocity_mean));
    CHECK(same_bits(back.stats.velocity_std, c.stats.velocity_std));
    CHECK(same_bits(back.stats.accel_mean, c.stats.accel_mean));
    CHECK(same_bits(back.stats.accel_std, c.stats.accel_std));
    CHECK(back.stats.velocity_scale == c.stats.velocity_scale);
    CHECK(back.stats.accel_scale == c.stats.accel_scale);
  }
}

TEST_CASE("checkpoint reader refuses bad input") {
  std::mt19937_64 rng(5);
  Checkpoint c = random_checkpoint(rng);
  c.params.add("extra", Matrix<double>::Ones(2, 2));
  c.optimizer = ad::AdamState<double>::for_params(c.params);
  const std::string good = bytes_of(c);
  auto read = [](const std::string& s) {
    std::istringstream is(s, std::ios::binary);
    return read_checkpoint(is);
  };
  std::string bad_magic = good;
  bad_magic[3] = 'R';
  CHECK_THROWS_AS(read(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(read(bad_version), FormatError);
  CHECK_THROWS_AS(read(good.substr(0, good.size() - 8)), FormatError);

  Checkpoint mismatched = c;
  mismatched.optimizer.first.at("extra") = Matrix<double>::Ones(3, 2);
  std::ostringstream os;
  CHECK_THROWS_AS(write_checkpoint(os, mismatched), std::invalid_argument);
}

TEST_CASE("run configuration schema") {
  const RunConfig def;
  const json j = def.to_json();
  CHECK(RunConfig::from_json(j).to_json() == j);
  // Every section is fully written out.
  for (const char* key : {"noise_std", "pushforward_base", "adam_beta1", "adam_eps", "radius_factor"}) {
    CHECK(j.at("train").contains(key));
  }
  for (const char* key : {"sound_speed_factor", "warmup_time", "rpf_force", "jitter", "relaxation_steps"}) {
    CHECK(j.at("scenario").contains(key));
  }
  for (const char* key : {"sinkhorn_epsilon", "sinkhorn_max_iters", "sinkhorn_tol"}) CHECK(j.at("eval").contains(key));

  CHECK_THROWS_AS(RunConfig::from_json(json{{"sede", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"train", {{"histroy", 5}}}}), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"model", {{"name", "segnn-avg"}, {"width", 3}}}}), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"train", {{"history", "five"}}}}), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"model", {{"name", "transformer"}}}}), std::invalid_argument);

  const RunConfig r = RunConfig::from_json(json{{"seed", 9}, {"train", {{"history", 3}}}});
  CHECK(r.model.history == 3);
  CHECK(r.train.seed == 9);
  RunConfig bad = r;
  bad.dataset.rpf_train_fraction = 0.95;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generate writes the requested split and reruns bit-identically") {
  const fs::path& dir = shared_dataset();
  const std::vector<std::string> names{"train_000.lgtr", "train_001.lgtr", "valid_000.lgtr", "test_000.lgtr"};
  std::set<std::uint64_t> seeds;
  for (const auto& n : names) {
    CAPTURE(n);
    REQUIRE(fs::exists(dir / n));
    const Trajectory t = read_trajectory(dir / n);
    CHECK(t.num_frames() == 100);
    CHECK(t.num_particles() == 512);
    CHECK(t.has_velocities());
    // The embedded configuration regenerates the run.
    CHECK(RunConfig::from_json(t.metadata.at("config")).to_json() == tiny_config().to_json());
    seeds.insert(t.metadata.at("seed").get<std::uint64_t>());
  }
  CHECK(seeds.size() == names.size());
  CHECK(fs::exists(dir / "ekin.csv"));

  const fs::path again = scratch_dir("dataset_rerun");
  std::ostringstream log;
  cmd_generate(tiny_config(), again, log);
  for (const auto& n : names) {
    CAPTURE(n);
    CHECK(file_bytes(again / n) == file_bytes(dir / n));
  }
  CHECK(file_bytes(again / "ekin.csv") == file_bytes(dir / "ekin.csv"));
}

TEST_CASE("generate refuses an unstable time step") {
  RunConfig c = tiny_config();
  c.scenario.dt *= 50;
  const fs::path dir = scratch_dir("unstable");
  std::ostringstream log;
  try {
    cmd_generate(c, dir, log);
    FAIL("unstable dt accepted");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("dt") != std::string::npos);
  }
  CHECK(fs::is_empty(dir));
}

TEST_CASE("train writes checkpoints and resumes with the same losses") {
  const fs::path& data = shared_dataset();
  const RunConfig c = tiny_config();
  std::ostringstream log;

  const fs::path whole = scratch_dir("train_whole");
  const TrainSummary a = cmd_train(c, data, whole, log);
  REQUIRE(a.losses.size() == 20);
  CHECK(a.final_step == 20);
  CHECK(fs::exists(whole / "last.lgck"));
  CHECK(fs::exists(whole / "best.lgck"));
  for (double l : a.losses) CHECK(std::isfinite(l));

  const fs::path split = scratch_dir("train_split");
  const TrainSummary first = cmd_train(c, data, split, log, 7);
  CHECK(first.final_step == 7);
  const TrainSummary rest = cmd_train(c, data, split, log);
  CHECK(rest.final_step == 20);
  std::vector<double> joined = first.losses;
  joined.insert(joined.end(), rest.losses.begin(), rest.losses.end());
  REQUIRE(joined.size() == a.losses.size());
  for (std::size_t i = 0; i < joined.size(); ++i) CHECK(std::memcmp(&joined[i], &a.losses[i], sizeof(double)) == 0);
  CHECK(file_bytes(split / "last.lgck") == file_bytes(whole / "last.lgck"));
  CHECK(file_bytes(split / "curve.csv") == file_bytes(whole / "curve.csv"));

  // segnn-lin with H = 5: five named selector weights per attribute site.
  const Checkpoint ck = read_checkpoint(whole / "last.lgck");
  std::map<std::string, std::set<int>> sites;
  const std::regex pattern("hae/(.+)/w_h([0-9]+)");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    std::smatch m;
    const std::string& name = ck.params.name(i);
    if (std::regex_match(name, m, pattern)) {
      CHECK(ck.params.value(i).size() == 1);
      sites[m[1]].insert(std::stoi(m[2]));
    }
  }
  CHECK(sites.size() == 3);  // embed, layer0, layer1
  for (const auto& [site, ws] : sites) {
    CAPTURE(site);
    CHECK(ws == std::set<int>{1, 2, 3, 4, 5});
  }
}

TEST_CASE("train rejects a dataset that cannot supply the history") {
  RunConfig c = tiny_config();
  c.train.history = 150;
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(c, shared_dataset(), scratch_dir("bad_history"), log), std::invalid_argument);
  c = tiny_config();
  c.scenario = sph::ScenarioConfig::reverse_poiseuille(0.1);
  CHECK_THROWS_AS(cmd_train(c, shared_dataset(), scratch_dir("bad_box"), log), std::invalid_argument);
}

TEST_CASE("evaluate: ground truth, zero model and report schema") {
  const fs::path& data = shared_dataset();
  RunConfig c = tiny_config();
  const Dataset ds = load_dataset(data);

  const EvaluateResult self = evaluate_trajectories(ds.test, ds.test, c.resolved());
  REQUIRE(self.reports.size() == 1);
  CHECK(self.reports[0].mse_p_mean() == 0.0);
  CHECK(self.reports[0].mse_ekin == 0.0);
  CHECK(std::abs(self.reports[0].sinkhorn_mean) < 1e-9);

  c.model = ModelConfig::from_name("zero");
  c.eval.rollout_steps = 60;
  const fs::path out = scratch_dir("eval") / "report.json";
  std::ostringstream log;
  const EvaluateResult z = cmd_evaluate(c, std::nullopt, data, out, log);
  REQUIRE(z.reports.size() == 1);
  const auto& mse = z.reports[0].mse_p;
  REQUIRE(mse.size() == 60);
  for (std::size_t k = 1; k < mse.size(); ++k) CHECK(mse[k] > mse[k - 1]);

  std::ifstream is(out);
  const json report = json::parse(is);
  REQUIRE(report.size() == 1);
  const json& tgv = report.at("tgv");
  std::set<std::string> keys;
  for (const auto& [k, v] : tgv.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"mse_p", "mse_ekin", "sinkhorn_mean"});
  CHECK(tgv.at("mse_p").get<double>() == doctest::Approx(z.reports[0].mse_p_mean()));
  fs::path csv = out;
  csv.replace_extension(".csv");
  CHECK(fs::exists(csv));
}

TEST_CASE("cleanup") { fs::remove_all(fs::temp_directory_path() / ("lagr_io_" + std::to_string(::getpid()))); }
