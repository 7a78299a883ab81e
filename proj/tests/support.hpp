#pragma once

#include "lagr/neighbors.hpp"

#include <Eigen/QR>

#include <random>
#include <set>
#include <utility>

namespace lagr::test {

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a.data()[i] = nd(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Vector3d d = qr.matrixQR().diagonal();
  for (int k = 0; k < 3; ++k) {
    if (d[k] < 0) q.col(k) *= -1.0;
  }
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

/// Rotation, or rotation composed with the inversion, with equal odds.
inline Eigen::Matrix3d random_orthogonal(std::mt19937_64& rng) {
  Eigen::Matrix3d q = random_rotation(rng);
  if (std::bernoulli_distribution(0.5)(rng)) q = -q;
  return q;
}

inline Points random_points(int n, const DomainSpec& domain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Points p(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) p(i, k) = u(rng) * domain.box[k];
  }
  return p;
}

inline Points random_normal(int n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Points p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = nd(rng);
  return p;
}

/// All (receiver, sender) pairs with minimum-image distance below radius.
inline std::set<std::pair<int, int>> brute_force_pairs(const Points& p, const DomainSpec& domain, double radius) {
  std::set<std::pair<int, int>> out;
  for (int i = 0; i < p.rows(); ++i) {
    for (int j = 0; j < p.rows(); ++j) {
      if (i == j) continue;
      if (domain.minimum_image((p.row(i) - p.row(j)).transpose()).norm() < radius) out.emplace(i, j);
    }
  }
  return out;
}

inline Points rotate_points(const Points& p, const Eigen::Matrix3d& r) { return p * r.transpose(); }

}  // namespace lagr::test
