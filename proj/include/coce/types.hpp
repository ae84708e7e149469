#pragma once

#include <Eigen/Dense>

namespace coce {

// All library arithmetic is double precision.
using Scalar = double;
using Vec = Eigen::VectorX<Scalar>;
using Mat = Eigen::MatrixX<Scalar>;

}  // namespace coce
