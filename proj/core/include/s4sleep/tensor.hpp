#pragma once

#include <Eigen/Core>

namespace s4sleep {

// Activations are (rows = batch * steps, cols = channels), row-major so one
// time step of one sequence is contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

}  // namespace s4sleep
