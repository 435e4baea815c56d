#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace cmbac::nn {

// Dense 2-D tensor of doubles in row-major order. Rows index the batch.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::vector<std::size_t> shape_of(const Tensor& t) {
  return {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())};
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

// Horizontal concatenation [a | b]; rows must agree.
Tensor hcat(const Tensor& a, const Tensor& b);

}  // namespace cmbac::nn
