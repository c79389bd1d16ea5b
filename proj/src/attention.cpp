// SPDX-License-Identifier: Apache-2.0
#include "physkit/attention.hpp"

#include <cmath>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::attention {

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                        std::size_t heads, Rng& rng, double out_scale) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ContractError("attention: model dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  store.add(prefix + ".wq", Tensor::randn({dim, dim}, rng, sd));
  store.add(prefix + ".wk", Tensor::randn({dim, dim}, rng, sd));
  store.add(prefix + ".wv", Tensor::randn({dim, dim}, rng, sd));
  store.add(prefix + ".wo", Tensor::randn({dim, dim}, rng, sd * out_scale));
  return {prefix, dim, heads};
}

AttentionWeights bind(Tape& tape, ParamStore& store, const AttentionParams& p) {
  return {tape.param(store.get(p.prefix + ".wq")), tape.param(store.get(p.prefix + ".wk")),
          tape.param(store.get(p.prefix + ".wv")), tape.param(store.get(p.prefix + ".wo")), p.heads};
}

namespace {

// B x L x D -> B x h x L x d
Var split_heads(const Var& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), dm = x.dim(2);
  if (heads == 1) return reshape(x, {b, 1, l, dm});
  return permute(reshape(x, {b, l, heads, dm / heads}), {0, 2, 1, 3});
}

// B x h x L x d -> B x L x D
Var merge_heads(const Var& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), l = x.dim(2), d = x.dim(3);
  if (h == 1) return reshape(x, {b, l, d});
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * d});
}

}  // namespace

Var cross_attention(const Var& q_in, const Var& kv_in, const AttentionWeights& w, Tensor* weights) {
  const std::size_t dm = w.wq.dim(0);
  if (q_in.shape().size() != 3 || kv_in.shape().size() != 3) {
    throw ShapeError("attention expects B x L x D inputs, got " + shape_str(q_in.shape()) + " and " +
                     shape_str(kv_in.shape()));
  }
  if (q_in.dim(2) != dm || kv_in.dim(2) != dm) {
    throw ShapeError("attention model dim " + std::to_string(dm) + " does not match inputs " +
                     shape_str(q_in.shape()) + " / " + shape_str(kv_in.shape()));
  }
  if (q_in.dim(0) != kv_in.dim(0)) {
    throw ShapeError("attention batch mismatch: " + shape_str(q_in.shape()) + " vs " + shape_str(kv_in.shape()));
  }
  const std::size_t head_dim = dm / w.heads;
  const Var q = split_heads(matmul(q_in, w.wq), w.heads);
  const Var k = split_heads(matmul(kv_in, w.wk), w.heads);
  const Var v = split_heads(matmul(kv_in, w.wv), w.heads);
  const Var scores = affine(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  const Var attn = softmax_rows(scores);
  if (weights) *weights = attn.value();
  return matmul(merge_heads(matmul(attn, v)), w.wo);
}

Var self_attention(const Var& x, const AttentionWeights& w, Tensor* weights) {
  return cross_attention(x, x, w, weights);
}

FfnParams FfnParams::create(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng,
                            double out_scale) {
  if (dim == 0) throw ContractError("ffn: model dim must be positive");
  const std::size_t hidden = 4 * dim;
  store.add(prefix + ".w1", Tensor::randn({dim, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(dim))));
  store.add(prefix + ".w2",
            Tensor::randn({hidden, dim}, rng, out_scale / std::sqrt(static_cast<double>(hidden))));
  return {prefix, dim, hidden};
}

FfnWeights bind(Tape& tape, ParamStore& store, const FfnParams& p) {
  return {tape.param(store.get(p.prefix + ".w1")), tape.param(store.get(p.prefix + ".w2"))};
}

Var ffn(const Var& x, const FfnWeights& w) {
  const std::size_t dm = w.w1.dim(0);
  if (x.shape().back() != dm) {
    throw ShapeError("ffn: last dim of " + shape_str(x.shape()) + " does not match model dim " + std::to_string(dm));
  }
  return matmul(gelu(matmul(x, w.w1)), w.w2);
}

}  // namespace physkit::attention
