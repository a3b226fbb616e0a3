#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace duc {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using Words = std::vector<std::string>;

// Activations are stored position-major: one row per token position.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixf = RowMatrix<float>;
using Vectorf = Vector<float>;

}  // namespace duc
