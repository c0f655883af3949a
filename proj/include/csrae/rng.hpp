#pragma once

#include <cstdint>
#include <random>

#include "csrae/matrix.hpp"

namespace csrae {

/// Seeded generator with portable variates: the engine is std::mt19937_64 and
/// every distribution is derived from its raw bits, so streams are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Standard Gumbel (location 0, scale 1).
  double gumbel();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Index drawn with probability proportional to weights.
  std::size_t categorical(std::span<const double> weights);

  Matrix normal_matrix(std::size_t rows, std::size_t cols);
  Matrix gumbel_matrix(std::size_t rows, std::size_t cols);

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer; used to derive independent seeds from tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

}  // namespace csrae
