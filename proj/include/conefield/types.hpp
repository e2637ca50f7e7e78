#pragma once

#include <complex>

#include <Eigen/Dense>

namespace conefield {

using Complex = std::complex<double>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using CRowVec = Eigen::RowVectorXcd;

/// Largest state dimension supported by the forward-mode jets.
inline constexpr int kMaxDim = 16;

}  // namespace conefield
