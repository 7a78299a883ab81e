#include "lagr/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>

namespace lagr {

void DomainSpec::wrap_all(Points& points) const {
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    points.row(i) = wrap(points.row(i).transpose()).transpose();
  }
}

void DomainSpec::validate() const {
  for (int k = 0; k < 3; ++k) {
    if (!(box[k] > 0.0) || !std::isfinite(box[k])) {
      throw std::invalid_argument("domain: box lengths must be positive and finite");
    }
  }
}

namespace {

// Uniform grid with cell edge >= radius. Each cell lists its particles in
// ascending index order.
class CellGrid {
 public:
  CellGrid(const Points& positions, const DomainSpec& domain, double radius) {
    for (int k = 0; k < 3; ++k) {
      dims_[k] = std::max(1, static_cast<int>(std::floor(domain.box[k] / radius)));
    }
    const int n_cells = dims_[0] * dims_[1] * dims_[2];
    cell_of_.resize(positions.rows());
    std::vector<int> counts(n_cells + 1, 0);
    for (Eigen::Index i = 0; i < positions.rows(); ++i) {
      const Vec3 p = domain.wrap(positions.row(i).transpose());
      std::array<int, 3> c{};
      for (int k = 0; k < 3; ++k) {
        c[k] = std::clamp(static_cast<int>(p[k] / domain.box[k] * dims_[k]), 0, dims_[k] - 1);
      }
      cell_of_[i] = flat(c);
      ++counts[cell_of_[i] + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    start_ = counts;
    members_.resize(positions.rows());
    std::vector<int> cursor(counts.begin(), counts.end() - 1);
    for (Eigen::Index i = 0; i < positions.rows(); ++i) {
      members_[cursor[cell_of_[i]]++] = static_cast<int>(i);
    }
  }

  int num_cells() const { return static_cast<int>(start_.size()) - 1; }

  std::array<int, 3> unflat(int c) const {
    return {c % dims_[0], (c / dims_[0]) % dims_[1], c / (dims_[0] * dims_[1])};
  }
  int flat(const std::array<int, 3>& c) const { return c[0] + dims_[0] * (c[1] + dims_[1] * c[2]); }

  // Distinct cells of the periodic 27-stencil, ascending.
  std::vector<int> stencil(int c) const {
    const auto base = unflat(c);
    std::vector<int> out;
    out.reserve(27);
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::array<int, 3> o{dx, dy, dz};
          std::array<int, 3> n{};
          for (int k = 0; k < 3; ++k) n[k] = ((base[k] + o[k]) % dims_[k] + dims_[k]) % dims_[k];
          out.push_back(flat(n));
        }
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::span<const int> members(int c) const {
    return {members_.data() + start_[c], static_cast<std::size_t>(start_[c + 1] - start_[c])};
  }

 private:
  std::array<int, 3> dims_{};
  std::vector<int> cell_of_;
  std::vector<int> start_;
  std::vector<int> members_;
};

void check_inputs(const Points& positions, const DomainSpec& domain, double radius) {
  domain.validate();
  if (!(radius > 0.0)) throw std::invalid_argument("neighbors: radius must be positive");
  for (int k = 0; k < 3; ++k) {
    if (domain.periodic[k] && radius > 0.5 * domain.box[k]) {
      throw std::invalid_argument("neighbors: radius " + std::to_string(radius) +
                                  " exceeds half the box length on axis " + std::to_string(k));
    }
  }
  if (!positions.allFinite()) throw std::invalid_argument("neighbors: non-finite position");
}

}  // namespace

EdgeList build_edges(const Points& positions, const DomainSpec& domain, double radius) {
  check_inputs(positions, domain, radius);
  const CellGrid grid(positions, domain, radius);

  struct Hit {
    int receiver, sender;
    Vec3 d;
    double r;
  };
  std::vector<Hit> hits;
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto stencil = grid.stencil(c);
    for (int i : grid.members(c)) {
      const Vec3 pi = positions.row(i).transpose();
      for (int nc : stencil) {
        for (int j : grid.members(nc)) {
          if (j == i) continue;
          const Vec3 d = domain.minimum_image(pi - positions.row(j).transpose());
          const double r = d.norm();
          if (r < radius) hits.push_back({i, j, d, r});
        }
      }
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    return a.receiver != b.receiver ? a.receiver < b.receiver : a.sender < b.sender;
  });

  EdgeList edges;
  edges.senders.resize(hits.size());
  edges.receivers.resize(hits.size());
  edges.displacement.resize(static_cast<Eigen::Index>(hits.size()), 3);
  edges.distance.resize(hits.size());
  for (std::size_t e = 0; e < hits.size(); ++e) {
    edges.senders[e] = hits[e].sender;
    edges.receivers[e] = hits[e].receiver;
    edges.displacement.row(static_cast<Eigen::Index>(e)) = hits[e].d.transpose();
    edges.distance[e] = hits[e].r;
  }
  return edges;
}

PairList build_pairs(const Points& positions, const DomainSpec& domain, double radius) {
  check_inputs(positions, domain, radius);
  const CellGrid grid(positions, domain, radius);

  PairList out;
  std::vector<Vec3> disp;
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto stencil = grid.stencil(c);
    for (int i : grid.members(c)) {
      const Vec3 pi = positions.row(i).transpose();
      for (int nc : stencil) {
        for (int j : grid.members(nc)) {
          if (j <= i) continue;
          const Vec3 d = domain.minimum_image(pi - positions.row(j).transpose());
          const double r = d.norm();
          if (r < radius) {
            out.pairs.emplace_back(i, j);
            disp.push_back(d);
            out.distance.push_back(r);
          }
        }
      }
    }
  }
  out.displacement.resize(static_cast<Eigen::Index>(disp.size()), 3);
  for (std::size_t e = 0; e < disp.size(); ++e) {
    out.displacement.row(static_cast<Eigen::Index>(e)) = disp[e].transpose();
  }
  return out;
}

IndexList in_degree(const EdgeList& edges, int num_nodes) {
  IndexList deg(num_nodes, 0);
  for (int r : edges.receivers) ++deg[r];
  return deg;
}

}  // namespace lagr
