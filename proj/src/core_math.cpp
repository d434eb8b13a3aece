#include "fedsdr/core_math.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedsdr {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_of(a) +
                                " * " + shape_of(b));
  }
  return a * b;
}

CrossEntropy softmax_cross_entropy(const Matrix& logits, int target) {
  if (logits.rows() != 1 && logits.cols() != 1) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be a vector, got " +
                                shape_of(logits));
  }
  const Eigen::Index n = logits.size();
  if (target < 0 || target >= n) {
    throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target) +
                            " out of range [0, " + std::to_string(n) + ")");
  }
  const Matrix shifted = logits.array() - logits.maxCoeff();
  const Matrix expd = shifted.array().exp();
  const double z = expd.sum();

  const double shifted_target =
      (logits.rows() == 1) ? shifted(0, target) : shifted(target, 0);
  CrossEntropy out;
  out.loss = std::log(z) - shifted_target;
  out.grad_logits = expd / z;
  if (logits.rows() == 1) {
    out.grad_logits(0, target) -= 1.0;
  } else {
    out.grad_logits(target, 0) -= 1.0;
  }
  return out;
}

double grad_check(const std::function<double()>& loss_fn,
                  std::span<Matrix* const> params,
                  std::span<const Matrix* const> analytic,
                  double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1e-3) {
    throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-3]");
  }
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: params/analytic length mismatch");
  }
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& theta = *params[p];
    const Matrix& grad = *analytic[p];
    if (theta.rows() != grad.rows() || theta.cols() != grad.cols()) {
      throw std::invalid_argument("grad_check: gradient shape mismatch at param " +
                                  std::to_string(p));
    }
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double saved = theta(i);
      theta(i) = saved + epsilon;
      const double plus = loss_fn();
      theta(i) = saved - epsilon;
      const double minus = loss_fn();
      theta(i) = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw std::runtime_error("grad_check: non-finite loss at param " +
                                 std::to_string(p) + " coordinate " + std::to_string(i));
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double rel = std::abs(grad(i) - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace fedsdr
