// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace physkit {

/// 64-bit FNV-1a. Stable across platforms; used for seed labels and the
/// caption tokenizer.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Seeded generator with platform-independent distributions.
///
/// std::normal_distribution and friends are implementation-defined, so the
/// transforms are done here on top of mt19937_64, whose output sequence is
/// fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Child generator for a named component. The same (root, label) pair
  /// always yields the same stream, regardless of what else was drawn.
  static Rng derive(std::uint64_t root_seed, std::string_view label);
  static std::uint64_t derive_seed(std::uint64_t root_seed,
                                   std::string_view label) noexcept;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace physkit
