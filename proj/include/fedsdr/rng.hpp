#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fedsdr/types.hpp"

namespace fedsdr {

// splitmix64 finalizer; combines a base seed with a stream tag so every
// client / round / stage gets an independent deterministic stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions are hand-rolled because std:: distribution algorithms are
// implementation-defined and would break byte-level reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53-bit resolution
  double u01();

  // standard normal via Box-Muller
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1), shape > 0 (Marsaglia-Tsang)
  double gamma(double shape);

  // uniform integer in [0, n), rejection-sampled (no modulo bias)
  int uniform_int(int n);

  // index draw proportional to probs (probs >= 0, sum > 0)
  int categorical(const Vector& probs);

  std::vector<double> dirichlet(double alpha, int dim);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fedsdr
