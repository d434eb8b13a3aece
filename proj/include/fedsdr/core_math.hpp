#pragma once

#include <functional>
#include <span>

#include "fedsdr/types.hpp"

namespace fedsdr {

// Shape-checked dense product. Throws std::invalid_argument naming both
// shapes on mismatch. Accumulation order is fixed by the (single-threaded)
// Eigen kernel, so repeated runs are bit-identical.
Matrix matmul(const Matrix& a, const Matrix& b);

struct CrossEntropy {
  double loss = 0.0;
  Matrix grad_logits;  // softmax(logits) - one_hot(target), same shape as logits
};

// Numerically stabilized softmax cross-entropy over a vector of logits
// (1xV or Vx1). Throws std::out_of_range if target is not a valid class.
CrossEntropy softmax_cross_entropy(const Matrix& logits, int target);

// Central finite differences against the analytic gradients. `loss_fn`
// re-evaluates the loss at the current parameter values; `params` point at
// the live storage that gets perturbed in place. Relative error per
// coordinate is |analytic - numeric| / max(1, |numeric|); the max over all
// coordinates is returned.
double grad_check(const std::function<double()>& loss_fn,
                  std::span<Matrix* const> params,
                  std::span<const Matrix* const> analytic,
                  double epsilon);

}  // namespace fedsdr
