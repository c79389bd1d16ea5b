// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "physkit/attention.hpp"

namespace physkit::tpg {

struct TpgConfig {
  std::size_t vocab = 1024;
  std::size_t dim = 64;
  std::size_t prototypes = 64;
  std::size_t heads = 4;
};

/// E' = W_probe E. Requires V' <= V / 4 and matching inner dimensions.
Tensor derive_prototypes(const Tensor& vocab, const Tensor& probe);

/// Fixed linear-interpolation matrix (out x in) that resamples a token axis
/// of length `in` to `out` positions, aligning cell centers.
Tensor resample_matrix(std::size_t out, std::size_t in);

/// Text prototype guidance: reprograms a token sequence of any length into
/// V' tokens anchored on prototypes derived from a frozen vocabulary.
///
///   X_self   = SelfAttention(X)
///   E'_fuse  = E' + Adapter(X_self)          (Adapter: L -> V' over tokens)
///   Output   = E'_fuse + CrossAttention(E'_fuse, X, X)
///   T_out    = FFN(Output)
///
/// One instance serves every modality; all parameters are shared.
class TextPrototypeGuidance {
 public:
  /// `vocab_name` must name a frozen V x D parameter already in `store`.
  TextPrototypeGuidance(ParamStore& store, std::string prefix, std::string vocab_name, TpgConfig cfg, Rng& rng);

  Var prototypes(Tape& tape, ParamStore& store) const;
  /// X: B x L x D -> B x V' x D.
  Var reprogram(Tape& tape, ParamStore& store, const Var& x) const;
  /// Same, with E' already computed by prototypes() on this tape.
  Var reprogram(Tape& tape, ParamStore& store, const Var& x, const Var& protos) const;

  const TpgConfig& config() const noexcept { return cfg_; }
  const std::string& prefix() const noexcept { return prefix_; }
  const std::string& vocab_name() const noexcept { return vocab_name_; }
  std::string probe_name() const { return prefix_ + ".probe"; }
  std::string adapter_name() const { return prefix_ + ".adapter"; }
  const attention::AttentionParams& self_params() const noexcept { return self_; }
  const attention::AttentionParams& cross_params() const noexcept { return cross_; }
  const attention::FfnParams& ffn_params() const noexcept { return ffn_; }

 private:
  std::string prefix_;
  std::string vocab_name_;
  TpgConfig cfg_;
  attention::AttentionParams self_;
  attention::AttentionParams cross_;
  attention::FfnParams ffn_;
};

}  // namespace physkit::tpg
