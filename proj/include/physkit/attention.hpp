// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "physkit/autodiff.hpp"

namespace physkit {
class Rng;
}

namespace physkit::attention {

/// Names of the four D x D projections of a multi-head attention block.
/// Tokens are row vectors: Q = X Wq, and the output is concat(heads) Wo.
struct AttentionParams {
  std::string prefix;
  std::size_t dim = 0;
  std::size_t heads = 1;

  /// Registers `<prefix>.wq/.wk/.wv/.wo` with N(0, 1/dim) entries; Wo is
  /// further scaled by `out_scale` (0 gives a block that starts silent).
  static AttentionParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, Rng& rng, double out_scale = 1.0);
  std::size_t head_dim() const noexcept { return dim / heads; }
};

struct AttentionWeights {
  Var wq, wk, wv, wo;
  std::size_t heads = 1;
};

AttentionWeights bind(Tape& tape, ParamStore& store, const AttentionParams& p);

/// softmax(Q K^T / sqrt(d)) V per head, then the output projection.
/// q_in is B x Lq x D, kv_in is B x Lk x D. When `weights` is non-null it
/// receives the B x h x Lq x Lk attention matrix.
Var cross_attention(const Var& q_in, const Var& kv_in, const AttentionWeights& w, Tensor* weights = nullptr);
Var self_attention(const Var& x, const AttentionWeights& w, Tensor* weights = nullptr);

/// Position-wise GELU feed-forward: gelu(x W1) W2, hidden width 4D.
struct FfnParams {
  std::string prefix;
  std::size_t dim = 0;
  std::size_t hidden = 0;

  static FfnParams create(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng,
                          double out_scale = 1.0);
};

struct FfnWeights {
  Var w1, w2;
};

FfnWeights bind(Tape& tape, ParamStore& store, const FfnParams& p);
Var ffn(const Var& x, const FfnWeights& w);

}  // namespace physkit::attention
