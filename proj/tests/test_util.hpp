#pragma once

#include "sge/grad_check.hpp"
#include "sge/io_util.hpp"
#include "sge/tensor.hpp"

#include <utility>

namespace sge::test {

inline Tensor randn(Rng& rng, Shape shape, bool requires_grad = true, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i) t.values_mut()[i] = rng.normal() * scale;
  return t;
}

// Scalar loss with a fixed random cotangent so degenerate directions
// (e.g. the constant direction of softmax) still get exercised.
inline Tensor weighted_sum(const Tensor& x, const Tensor& w) {
  return sum_all(hadamard(x, w));
}

}  // namespace sge::test
