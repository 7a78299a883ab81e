#pragma once

#include "lagr/types.hpp"

#include <array>
#include <cmath>
#include <span>
#include <utility>

namespace lagr {

/// Axis-aligned box with per-axis periodicity.
struct DomainSpec {
  Vec3 box = Vec3::Ones();
  std::array<bool, 3> periodic{true, true, true};

  static DomainSpec taylor_green() { return {Vec3(1.0, 1.0, 1.0)}; }
  static DomainSpec reverse_poiseuille() { return {Vec3(1.0, 2.0, 0.5)}; }

  double volume() const { return box.prod(); }

  /// Shortest periodic image of a displacement.
  Vec3 minimum_image(Vec3 d) const {
    for (int k = 0; k < 3; ++k) {
      if (periodic[k]) d[k] -= box[k] * std::round(d[k] / box[k]);
    }
    return d;
  }

  Vec3 wrap(Vec3 p) const {
    for (int k = 0; k < 3; ++k) {
      if (!periodic[k]) continue;
      p[k] -= box[k] * std::floor(p[k] / box[k]);
      if (p[k] >= box[k]) p[k] -= box[k];  // floor rounding at the upper edge
    }
    return p;
  }

  void wrap_all(Points& points) const;
  void validate() const;
};

/// Directed edges sender -> receiver. `displacement` row e is the minimum-image
/// vector p[receiver] - p[sender].
struct EdgeList {
  IndexList senders;
  IndexList receivers;
  Points displacement;
  std::vector<double> distance;

  std::size_t size() const { return senders.size(); }
};

/// Unordered pairs i < j within the cutoff. `displacement` is p[i] - p[j].
struct PairList {
  std::vector<std::pair<int, int>> pairs;
  Points displacement;
  std::vector<double> distance;

  std::size_t size() const { return pairs.size(); }
};

/// All ordered pairs with minimum-image distance strictly below `radius`,
/// sorted by receiver then sender. Throws std::invalid_argument when the
/// radius exceeds half the smallest periodic box length or a position is
/// not finite.
EdgeList build_edges(const Points& positions, const DomainSpec& domain, double radius);

/// Half list of the same neighbourhood, in deterministic cell traversal order.
PairList build_pairs(const Points& positions, const DomainSpec& domain, double radius);

/// Per-node neighbour counts of an edge list.
IndexList in_degree(const EdgeList& edges, int num_nodes);

}  // namespace lagr
