// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "physkit/attention.hpp"

namespace physkit::aggregator {

struct LevelShape {
  std::size_t height = 1;
  std::size_t width = 1;
};

/// M backbone feature levels, level i shaped B x T x H_i x W_i. The last
/// level is the deepest one and acts as the query.
struct FeaturePyramid {
  std::vector<Tensor> levels;
};

struct AggregatorConfig {
  std::vector<LevelShape> levels;
  std::size_t frames = 128;
  std::size_t l_target = 32;
  std::size_t dim = 64;
  std::size_t heads = 4;
  /// When false the time axis is kept at `frames` tokens.
  bool compress_time = true;

  std::size_t tokens() const noexcept { return compress_time ? l_target : frames; }
};

/// Intermediates of one aggregate() call.
struct AggregateTrace {
  std::vector<Tensor> projected;
  Tensor cross;
  Tensor self;
};

/// Multi-scale vision aggregator: every level is projected to B x l_target x
/// D tokens, the deepest level cross-attends over the concatenated shallow
/// levels, the result self-attends, and two per-channel gates mix it back:
///   F_visual = F_M + gamma2 * (F_cross + gamma1 * F_self).
/// Both gates start at zero, so a fresh module passes F_M through unchanged.
class VisionAggregator {
 public:
  VisionAggregator(ParamStore& store, std::string prefix, AggregatorConfig cfg, Rng& rng);

  /// Flattens the spatial grid, maps it to D channels, then maps the T frames
  /// to l_target tokens. Linear in f, no bias.
  Var project_level(Tape& tape, ParamStore& store, std::size_t level, const Tensor& f) const;

  Var aggregate(Tape& tape, ParamStore& store, const FeaturePyramid& pyramid,
                AggregateTrace* trace = nullptr) const;

  const AggregatorConfig& config() const noexcept { return cfg_; }
  const std::string& prefix() const noexcept { return prefix_; }
  std::string gamma1_name() const { return prefix_ + ".gamma1"; }
  std::string gamma2_name() const { return prefix_ + ".gamma2"; }
  const attention::AttentionParams& cross_params() const noexcept { return cross_; }
  const attention::AttentionParams& self_params() const noexcept { return self_; }

 private:
  std::string prefix_;
  AggregatorConfig cfg_;
  attention::AttentionParams cross_;
  attention::AttentionParams self_;
};

}  // namespace physkit::aggregator
