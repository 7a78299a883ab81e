#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace lagr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vec3 = Eigen::Vector3d;

/// N x 3 particle coordinates, one particle per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

using IndexList = std::vector<int>;

}  // namespace lagr
