#pragma once

#include "lagr/neighbors.hpp"
#include "lagr/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lagr {

enum class Scenario : std::uint8_t { TaylorGreen = 0, ReversePoiseuille = 1 };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

/// Time-ordered particle frames at uniform spacing.
struct Trajectory {
  std::vector<Points> positions;
  std::vector<Points> velocities;  // empty, or one entry per frame
  double frame_dt = 0.0;
  DomainSpec domain;
  Scenario scenario = Scenario::TaylorGreen;
  nlohmann::json metadata = nlohmann::json::object();

  int num_frames() const { return static_cast<int>(positions.size()); }
  int num_particles() const { return positions.empty() ? 0 : static_cast<int>(positions.front().rows()); }
  bool has_velocities() const { return !velocities.empty(); }
};

}  // namespace lagr
