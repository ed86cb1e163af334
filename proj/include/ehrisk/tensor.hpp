#pragma once

#include <Eigen/Dense>

namespace ehrisk {

/// Row-major so that one row is one token / one record.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace ehrisk
