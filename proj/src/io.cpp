#include "lagr/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace lagr {

namespace {

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError(std::string("truncated file reading ") + what);
  return value;
}

void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("truncated file reading ") + what);
  }
  return s;
}

void check_magic(std::istream& is, const char* magic, const char* kind) {
  const std::string m = get_bytes(is, 4, "magic");
  if (m != std::string(magic, 4)) throw FormatError(std::string("not a ") + kind + " file (bad magic)");
}

void check_version(std::uint16_t found, std::uint16_t supported, const char* kind) {
  if (found != supported) {
    throw FormatError(std::string("unsupported ") + kind + " version " + std::to_string(found) + " (this build reads " +
                      std::to_string(supported) + ")");
  }
}

void write_points_f32(std::ostream& os, const Points& p) {
  std::vector<float> buf(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(p.data()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Points read_points_f32(std::istream& is, std::uint32_t n) {
  std::vector<float> buf(static_cast<std::size_t>(n) * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw FormatError("truncated trajectory payload");
  }
  Points p(n, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) p.data()[i] = buf[i];
  return p;
}

template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    try {
      writer(os);
      os.flush();
      if (!os) throw std::runtime_error("write failed for " + tmp.string());
    } catch (...) {
      os.close();
      std::filesystem::remove(tmp);
      throw;
    }
  }
  std::filesystem::rename(tmp, path);
}

std::ifstream open_for_reading(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

void write_matrix_f64(std::ostream& os, const Matrix<double>& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void read_matrix_f64(std::istream& is, Matrix<double>& m) {
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw FormatError("truncated checkpoint payload");
  }
}

nlohmann::json vec_json(const Vec3& v) { return {v[0], v[1], v[2]}; }
Vec3 json_vec(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

void write_trajectory(std::ostream& os, const Trajectory& traj) {
  const auto n = static_cast<std::uint32_t>(traj.num_particles());
  const bool vel = traj.has_velocities();
  if (vel && traj.velocities.size() != traj.positions.size()) {
    throw std::invalid_argument("write_trajectory: velocities must cover every frame");
  }
  os.write("LGTR", 4);
  put<std::uint16_t>(os, kTrajectoryVersion);
  put<std::uint32_t>(os, n);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(traj.num_frames()));
  put<double>(os, traj.frame_dt);
  for (int k = 0; k < 3; ++k) put<double>(os, traj.domain.box[k]);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(traj.scenario));
  put<std::uint8_t>(os, vel ? 1 : 0);
  for (int f = 0; f < traj.num_frames(); ++f) {
    const auto i = static_cast<std::size_t>(f);
    if (traj.positions[i].rows() != n) throw std::invalid_argument("write_trajectory: ragged frames");
    write_points_f32(os, traj.positions[i]);
    if (vel) write_points_f32(os, traj.velocities[i]);
  }
  const std::string meta = traj.metadata.dump();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  put_bytes(os, meta);
}

Trajectory read_trajectory(std::istream& is) {
  check_magic(is, "LGTR", "trajectory");
  check_version(get<std::uint16_t>(is, "version"), kTrajectoryVersion, "trajectory");
  Trajectory traj;
  const auto n = get<std::uint32_t>(is, "particle count");
  const auto frames = get<std::uint32_t>(is, "frame count");
  traj.frame_dt = get<double>(is, "frame spacing");
  for (int k = 0; k < 3; ++k) traj.domain.box[k] = get<double>(is, "box");
  const auto scenario = get<std::uint8_t>(is, "scenario");
  if (scenario > 1) throw FormatError("unknown scenario tag " + std::to_string(scenario));
  traj.scenario = static_cast<Scenario>(scenario);
  const auto flags = get<std::uint8_t>(is, "flags");
  if (flags & ~1u) throw FormatError("unknown trajectory flags");
  for (std::uint32_t f = 0; f < frames; ++f) {
    traj.positions.push_back(read_points_f32(is, n));
    if (flags & 1u) traj.velocities.push_back(read_points_f32(is, n));
  }
  const auto len = get<std::uint32_t>(is, "metadata length");
  const std::string meta = get_bytes(is, len, "metadata");
  try {
    traj.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad trajectory metadata: ") + e.what());
  }
  return traj;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  write_atomically(path, [&](std::ostream& os) { write_trajectory(os, traj); });
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  auto is = open_for_reading(path);
  try {
    return read_trajectory(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

nlohmann::json stats_to_json(const NormalizationStats& s) {
  return {{"mode", s.mode == NormalizationStats::Mode::Magnitude ? "magnitude" : "per_component"},
          {"velocity_mean", vec_json(s.velocity_mean)},
          {"velocity_std", vec_json(s.velocity_std)},
          {"accel_mean", vec_json(s.accel_mean)},
          {"accel_std", vec_json(s.accel_std)},
          {"velocity_scale", s.velocity_scale},
          {"accel_scale", s.accel_scale}};
}

NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "magnitude") s.mode = NormalizationStats::Mode::Magnitude;
  else if (mode == "per_component") s.mode = NormalizationStats::Mode::PerComponent;
  else throw FormatError("unknown normalisation mode '" + mode + "'");
  s.velocity_mean = json_vec(j.at("velocity_mean"));
  s.velocity_std = json_vec(j.at("velocity_std"));
  s.accel_mean = json_vec(j.at("accel_mean"));
  s.accel_std = json_vec(j.at("accel_std"));
  s.velocity_scale = j.at("velocity_scale").get<double>();
  s.accel_scale = j.at("accel_scale").get<double>();
  return s;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const bool has_moments = ckpt.optimizer.first.size() == ckpt.params.size();
  if (has_moments && (!ckpt.params.same_layout(ckpt.optimizer.first) || !ckpt.params.same_layout(ckpt.optimizer.second))) {
    throw std::invalid_argument("write_checkpoint: optimiser state does not match parameters");
  }
  nlohmann::json header;
  header["config"] = ckpt.config;
  header["stats"] = stats_to_json(ckpt.stats);
  header["step"] = ckpt.step;
  header["best_valid"] = ckpt.best_valid;
  header["adam_step"] = ckpt.optimizer.step;
  header["has_moments"] = has_moments;
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    params.push_back({{"name", ckpt.params.name(i)},
                      {"rows", ckpt.params.value(i).rows()},
                      {"cols", ckpt.params.value(i).cols()}});
  }
  header["params"] = params;
  const std::string h = header.dump();
  os.write("LGCK", 4);
  put<std::uint16_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.size()));
  put_bytes(os, h);
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) write_matrix_f64(os, ckpt.params.value(i));
  if (has_moments) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) write_matrix_f64(os, ckpt.optimizer.first.value(i));
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) write_matrix_f64(os, ckpt.optimizer.second.value(i));
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  check_magic(is, "LGCK", "checkpoint");
  check_version(get<std::uint16_t>(is, "version"), kCheckpointVersion, "checkpoint");
  const auto len = get<std::uint32_t>(is, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(is, len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  Checkpoint c;
  c.config = header.at("config");
  c.stats = stats_from_json(header.at("stats"));
  c.step = header.at("step").get<long>();
  c.best_valid = header.at("best_valid").get<double>();
  for (const auto& p : header.at("params")) {
    c.params.add(p.at("name").get<std::string>(),
                 Matrix<double>(p.at("rows").get<Eigen::Index>(), p.at("cols").get<Eigen::Index>()));
  }
  for (std::size_t i = 0; i < c.params.size(); ++i) read_matrix_f64(is, c.params.value(i));
  c.optimizer = ad::AdamState<double>::for_params(c.params);
  c.optimizer.step = header.at("adam_step").get<long>();
  if (header.at("has_moments").get<bool>()) {
    for (std::size_t i = 0; i < c.params.size(); ++i) read_matrix_f64(is, c.optimizer.first.value(i));
    for (std::size_t i = 0; i < c.params.size(); ++i) read_matrix_f64(is, c.optimizer.second.value(i));
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_atomically(path, [&](std::ostream& os) { write_checkpoint(os, ckpt); });
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto is = open_for_reading(path);
  try {
    return read_checkpoint(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace lagr
