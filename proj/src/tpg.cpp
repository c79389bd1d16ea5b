// SPDX-License-Identifier: Apache-2.0
#include "physkit/tpg.hpp"

#include <algorithm>
#include <cmath>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::tpg {

namespace {

void check_prototype_count(std::size_t prototypes, std::size_t vocab) {
  if (prototypes == 0 || prototypes * 4 > vocab) {
    throw ContractError("prototype count " + std::to_string(prototypes) + " must be in [1, V/4] for V = " +
                        std::to_string(vocab));
  }
}

}  // namespace

Tensor derive_prototypes(const Tensor& vocab, const Tensor& probe) {
  if (vocab.rank() != 2 || probe.rank() != 2 || probe.dim(1) != vocab.dim(0)) {
    throw ShapeError("derive_prototypes: probe " + shape_str(probe.shape()) + " incompatible with vocabulary " +
                     shape_str(vocab.shape()));
  }
  check_prototype_count(probe.dim(0), vocab.dim(0));
  return matmul(probe, vocab);
}

Tensor resample_matrix(std::size_t out, std::size_t in) {
  if (out == 0 || in == 0) throw ShapeError("resample_matrix: empty axis");
  Tensor m({out, in});
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t j = 0; j < out; ++j) {
    const double pos = std::clamp((static_cast<double>(j) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = pos - static_cast<double>(lo);
    m[j * in + lo] += 1.0 - frac;
    m[j * in + hi] += frac;
  }
  return m;
}

TextPrototypeGuidance::TextPrototypeGuidance(ParamStore& store, std::string prefix, std::string vocab_name,
                                             TpgConfig cfg, Rng& rng)
    : prefix_(std::move(prefix)), vocab_name_(std::move(vocab_name)), cfg_(cfg) {
  const Parameter& vocab = store.get(vocab_name_);
  if (vocab.trainable) throw ContractError("TPG vocabulary '" + vocab_name_ + "' must be frozen");
  if (vocab.value.shape() != Shape{cfg_.vocab, cfg_.dim}) {
    throw ShapeError("TPG vocabulary has shape " + shape_str(vocab.value.shape()) + ", config expects " +
                     shape_str({cfg_.vocab, cfg_.dim}));
  }
  check_prototype_count(cfg_.prototypes, cfg_.vocab);
  store.add(probe_name(), Tensor::randn({cfg_.prototypes, cfg_.vocab}, rng,
                                        1.0 / std::sqrt(static_cast<double>(cfg_.vocab))));
  store.add(adapter_name(), Tensor::eye(cfg_.prototypes));
  self_ = attention::AttentionParams::create(store, prefix_ + ".self", cfg_.dim, cfg_.heads, rng);
  cross_ = attention::AttentionParams::create(store, prefix_ + ".cross", cfg_.dim, cfg_.heads, rng);
  ffn_ = attention::FfnParams::create(store, prefix_ + ".ffn", cfg_.dim, rng);
}

Var TextPrototypeGuidance::prototypes(Tape& tape, ParamStore& store) const {
  return matmul(tape.param(store.get(probe_name())), tape.param(store.get(vocab_name_)));
}

Var TextPrototypeGuidance::reprogram(Tape& tape, ParamStore& store, const Var& x) const {
  return reprogram(tape, store, x, prototypes(tape, store));
}

Var TextPrototypeGuidance::reprogram(Tape& tape, ParamStore& store, const Var& x, const Var& protos) const {
  if (x.shape().size() != 3 || x.dim(2) != cfg_.dim) {
    throw ShapeError("TPG expects B x L x " + std::to_string(cfg_.dim) + " tokens, got " + shape_str(x.shape()));
  }
  if (protos.shape() != Shape{cfg_.prototypes, cfg_.dim}) {
    throw ShapeError("TPG prototypes must be " + shape_str({cfg_.prototypes, cfg_.dim}));
  }
  const Var x_self = attention::self_attention(x, attention::bind(tape, store, self_));
  const Var resampled = matmul(tape.constant(resample_matrix(cfg_.prototypes, x.dim(1))), x_self);
  const Var adapted = matmul(tape.param(store.get(adapter_name())), resampled);
  const Var fused = add(adapted, protos);
  const Var output = add(fused, attention::cross_attention(fused, x, attention::bind(tape, store, cross_)));
  return attention::ffn(output, attention::bind(tape, store, ffn_));
}

}  // namespace physkit::tpg
