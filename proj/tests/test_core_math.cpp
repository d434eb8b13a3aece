#include <cmath>

#include "doctest.h"
#include "fedsdr/core_math.hpp"
#include "fedsdr/rng.hpp"
#include "test_util.hpp"

using namespace fedsdr;

namespace {

// independent oracle: naive triple loop, fixed accumulation order
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  return Matrix::NullaryExpr(rows, cols, [&] { return scale * rng.normal(); });
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(1);
  const Matrix m = random_matrix(3, 5, rng);
  const Matrix out = matmul(Matrix::Identity(3, 3), m);
  CHECK((out - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matmul hand arithmetic") {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix b(2, 1);
  b << 0, 1;
  const Matrix out = matmul(a, b);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == 4.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(42);
  const Matrix a = random_matrix(5, 4, rng);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix expect = matmul_oracle(a, b);
  CHECK((matmul(a, b) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Matrix a = Matrix::Zero(2, 3);
  const Matrix b = Matrix::Zero(4, 2);
  CHECK(throws_with_substring<std::invalid_argument>([&] { matmul(a, b); }, "2x3"));
  CHECK(throws_with_substring<std::invalid_argument>([&] { matmul(a, b); }, "4x2"));
}

TEST_CASE("matmul associativity against the oracle on bounded magnitudes") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(4, 3, rng, 10.0);
    const Matrix b = random_matrix(3, 5, rng, 10.0);
    const Matrix c = random_matrix(5, 2, rng, 10.0);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    const Matrix oracle = matmul_oracle(matmul_oracle(a, b), c);
    CHECK((left - oracle).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((left - right).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("matmul is bit-reproducible") {
  Rng rng(9);
  const Matrix a = random_matrix(6, 6, rng);
  const Matrix b = random_matrix(6, 6, rng);
  const Matrix first = matmul(a, b);
  const Matrix second = matmul(a, b);
  CHECK((first - second).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax cross-entropy uniform logits") {
  const Matrix logits = Matrix::Zero(1, 32);
  for (int target : {0, 13, 31}) {
    const CrossEntropy ce = softmax_cross_entropy(logits, target);
    CHECK(ce.loss == doctest::Approx(std::log(32.0)).epsilon(1e-12));
  }
}

TEST_CASE("softmax cross-entropy saturated correct class") {
  Matrix logits = Matrix::Zero(1, 8);
  logits(0, 3) = 30.0;
  const CrossEntropy ce = softmax_cross_entropy(logits, 3);
  CHECK(ce.loss >= 0.0);
  CHECK(ce.loss < 1e-9);
}

TEST_CASE("softmax cross-entropy two-class hand formula") {
  Matrix logits(1, 2);
  logits << 1.0, 2.0;
  const CrossEntropy ce = softmax_cross_entropy(logits, 0);
  // -log(e^1 / (e^1 + e^2)) = log(1 + e)
  const double expect = std::log(1.0 + std::exp(1.0));
  CHECK(std::abs(ce.loss - expect) < 1e-12);
  CHECK(expect == doctest::Approx(1.3133).epsilon(1e-4));
}

TEST_CASE("softmax gradient rows sum to zero and match softmax - onehot") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix logits = random_matrix(1, 16, rng, 3.0);
    const int target = rng.uniform_int(16);
    const CrossEntropy ce = softmax_cross_entropy(logits, target);
    CHECK(std::abs(ce.grad_logits.sum()) < 1e-12);
    // probabilities recovered from grad
    Matrix probs = ce.grad_logits;
    probs(0, target) += 1.0;
    CHECK(probs.minCoeff() >= 0.0);
    CHECK(probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax cross-entropy target range check") {
  const Matrix logits = Matrix::Zero(1, 4);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, 4), std::out_of_range);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, -1), std::out_of_range);
}

TEST_CASE("softmax cross-entropy accepts column vectors identically") {
  Rng rng(11);
  const Matrix row = random_matrix(1, 6, rng);
  const Matrix col = row.transpose();
  const CrossEntropy a = softmax_cross_entropy(row, 2);
  const CrossEntropy b = softmax_cross_entropy(col, 2);
  CHECK(a.loss == b.loss);
  CHECK((a.grad_logits.transpose() - b.grad_logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_check validates a quadratic form") {
  // f(W) = 0.5 * ||W x||^2, grad = (W x) x^T
  Rng rng(5);
  Matrix w = random_matrix(4, 3, rng);
  const Vector x = random_matrix(3, 1, rng);
  const auto loss = [&]() { return 0.5 * (w * x).squaredNorm(); };
  const Matrix analytic = (w * x) * x.transpose();

  Matrix* params[] = {&w};
  const Matrix* grads[] = {&analytic};
  const double err = grad_check(loss, params, grads, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check on a constant function") {
  Matrix w = Matrix::Ones(2, 2);
  const Matrix zero = Matrix::Zero(2, 2);
  const auto loss = []() { return 3.5; };
  Matrix* params[] = {&w};
  const Matrix* grads[] = {&zero};
  const double err = grad_check(loss, params, grads, 1e-5);
  CHECK(err == 0.0);
}

TEST_CASE("grad_check epsilon precondition") {
  Matrix w = Matrix::Ones(1, 1);
  const Matrix g = Matrix::Zero(1, 1);
  Matrix* params[] = {&w};
  const Matrix* grads[] = {&g};
  const auto loss = []() { return 0.0; };
  CHECK_THROWS_AS(grad_check(loss, params, grads, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(loss, params, grads, 1e-2), std::invalid_argument);
}

TEST_CASE("grad_check reports non-finite losses with the coordinate") {
  Matrix w = Matrix::Ones(1, 2);
  const Matrix g = Matrix::Zero(1, 2);
  Matrix* params[] = {&w};
  const Matrix* grads[] = {&g};
  const auto loss = [&]() { return w(0, 1) > 1.0 ? HUGE_VAL : 0.0; };
  CHECK(throws_with_substring<std::runtime_error>(
      [&] { grad_check(loss, params, grads, 1e-5); }, "coordinate 1"));
}
