#pragma once

#include <cstdint>
#include <random>

namespace confound_em {

/// Counter-addressed random stream.
///
/// Each (seed, stream) pair owns an independent std::mt19937_64 whose state is
/// derived by SplitMix64 mixing, so task k of a parallel job draws the same
/// numbers regardless of scheduling. Distributions are implemented here rather
/// than with <random>'s distribution classes, whose output is not specified
/// across standard library implementations.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Uniform integer on [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer on [lo, hi].
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace confound_em
