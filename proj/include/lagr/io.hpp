#pragma once

// On-disk formats. Little-endian throughout.
//
// Trajectory (.lgtr):
//   "LGTR" | u16 version | u32 N | u32 frames | f64 frame_dt | f64[3] box |
//   u8 scenario | u8 flags (bit0: velocities) |
//   frames x ( f32[N*3] positions [+ f32[N*3] velocities] ) |
//   u32 length | JSON metadata
//
// Checkpoint (.lgck):
//   "LGCK" | u16 version | u32 length | JSON header |
//   f64 parameters, then Adam first and second moments, in header order

#include "lagr/autodiff.hpp"
#include "lagr/graph.hpp"
#include "lagr/optim.hpp"
#include "lagr/trajectory.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

namespace lagr {

inline constexpr std::uint16_t kTrajectoryVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_trajectory(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory(std::istream& is);
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& path);

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();  // full run configuration
  NormalizationStats stats;
  long step = 0;
  double best_valid = -1.0;
  ad::ParamStore<double> params;
  ad::AdamState<double> optimizer;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const nlohmann::json& j);

}  // namespace lagr
