#pragma once

#include <Eigen/Core>

namespace pipetune {

// Row-major so that a sample's features are contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace pipetune
