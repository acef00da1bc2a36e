#pragma once

#include <Eigen/Core>

namespace lebm {

// Batched quantities are stored one example per row.
template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Scalar = double;
using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;

}  // namespace lebm
