// SPDX-License-Identifier: Apache-2.0
#include "physkit/aggregator.hpp"

#include <cmath>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::aggregator {

namespace {

// Row r averages frames [r*T/l, (r+1)*T/l).
Tensor average_pool_matrix(std::size_t out, std::size_t in) {
  Tensor m({out, in});
  for (std::size_t r = 0; r < out; ++r) {
    const std::size_t lo = r * in / out;
    const std::size_t hi = std::max(lo + 1, (r + 1) * in / out);
    for (std::size_t c = lo; c < hi; ++c) m[r * in + c] = 1.0 / static_cast<double>(hi - lo);
  }
  return m;
}

std::string level_name(const std::string& prefix, std::size_t i) {
  return prefix + ".level" + std::to_string(i);
}

}  // namespace

VisionAggregator::VisionAggregator(ParamStore& store, std::string prefix, AggregatorConfig cfg, Rng& rng)
    : prefix_(std::move(prefix)), cfg_(std::move(cfg)) {
  if (cfg_.levels.size() < 2) throw ContractError("vision aggregator needs at least 2 feature levels");
  if (cfg_.frames == 0 || cfg_.l_target == 0) throw ContractError("vision aggregator: frames and l_target must be positive");
  for (std::size_t i = 0; i < cfg_.levels.size(); ++i) {
    const std::size_t hw = cfg_.levels[i].height * cfg_.levels[i].width;
    if (hw == 0) throw ContractError("vision aggregator: empty spatial grid at level " + std::to_string(i));
    store.add(level_name(prefix_, i) + ".spatial",
              Tensor::randn({hw, cfg_.dim}, rng, 1.0 / std::sqrt(static_cast<double>(hw))));
    if (cfg_.compress_time) {
      store.add(level_name(prefix_, i) + ".temporal", average_pool_matrix(cfg_.l_target, cfg_.frames));
    }
  }
  cross_ = attention::AttentionParams::create(store, prefix_ + ".cross", cfg_.dim, cfg_.heads, rng);
  self_ = attention::AttentionParams::create(store, prefix_ + ".self", cfg_.dim, cfg_.heads, rng);
  store.add(gamma1_name(), Tensor({cfg_.dim}, 0.0));
  store.add(gamma2_name(), Tensor({cfg_.dim}, 0.0));
}

Var VisionAggregator::project_level(Tape& tape, ParamStore& store, std::size_t level, const Tensor& f) const {
  if (level >= cfg_.levels.size()) throw ShapeError("vision aggregator: no registered level " + std::to_string(level));
  const LevelShape& ls = cfg_.levels[level];
  const Shape& s = f.shape();
  if (s.size() != 4 || s[1] != cfg_.frames || s[2] != ls.height || s[3] != ls.width) {
    throw ShapeError("vision aggregator level " + std::to_string(level) + ": got " + shape_str(s) +
                     ", registered B x " + std::to_string(cfg_.frames) + " x " + std::to_string(ls.height) + " x " +
                     std::to_string(ls.width));
  }
  const Var flat = tape.constant(f.reshaped({s[0], s[1], s[2] * s[3]}));
  const Var channels = matmul(flat, tape.param(store.get(level_name(prefix_, level) + ".spatial")));
  if (!cfg_.compress_time) return channels;
  return matmul(tape.param(store.get(level_name(prefix_, level) + ".temporal")), channels);
}

Var VisionAggregator::aggregate(Tape& tape, ParamStore& store, const FeaturePyramid& pyramid,
                                AggregateTrace* trace) const {
  const std::size_t m = pyramid.levels.size();
  if (m < 2) throw ContractError("aggregate: need at least 2 pyramid levels, got " + std::to_string(m));
  if (m != cfg_.levels.size()) {
    throw ShapeError("aggregate: pyramid has " + std::to_string(m) + " levels, module registered " +
                     std::to_string(cfg_.levels.size()));
  }
  std::vector<Var> projected;
  for (std::size_t i = 0; i < m; ++i) projected.push_back(project_level(tape, store, i, pyramid.levels[i]));
  const Var deep = projected.back();
  const Var shallow = concat(std::span(projected.data(), m - 1), 1);

  const Var f_cross = attention::cross_attention(deep, shallow, attention::bind(tape, store, cross_));
  const Var f_self = attention::self_attention(f_cross, attention::bind(tape, store, self_));
  const Var g1 = tape.param(store.get(gamma1_name()));
  const Var g2 = tape.param(store.get(gamma2_name()));
  if (trace) {
    trace->projected.clear();
    for (const Var& p : projected) trace->projected.push_back(p.value());
    trace->cross = f_cross.value();
    trace->self = f_self.value();
  }
  return add(deep, mul(add(f_cross, mul(f_self, g1)), g2));
}

}  // namespace physkit::aggregator
