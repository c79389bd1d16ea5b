// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "physkit/autodiff.hpp"

namespace physkit {
class Rng;
}

namespace physkit::cue {

/// Statistical cue of an encoder waveform.
struct StatSummary {
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  /// Sum of first differences.
  double trend = 0.0;
  /// sign(trend) in {-1, 0, +1}.
  int direction = 0;
  /// Lags in [1, T/2] with the largest normalized autocorrelation, best
  /// first, ties to the smaller lag. Holds min(5, T/2) entries.
  std::vector<std::size_t> top_lags;
};

inline constexpr std::size_t kTopLags = 5;

double median(std::span<const double> x);
/// sum_{i>=1} (x[i] - x[i-1])
double trend(std::span<const double> x);
int direction(std::span<const double> x);
/// r(tau) = sum_t (x_t - m)(x_{t+tau} - m) / sum_t (x_t - m)^2 for
/// tau = 1..max_lag; all zeros for a constant series.
std::vector<double> normalized_autocorrelation(std::span<const double> x, std::size_t max_lag);

/// Requires at least 4 samples.
StatSummary signal_stats(std::span<const double> x);

/// Synthetic stand-in for what a captioning model would report about a clip.
struct SceneMeta {
  std::string lighting = "normal";  // dim | normal | bright
  bool motion = false;
  std::string skin_tone = "III";    // Fitzpatrick type I..VI
};

enum class CueKind { task, vision, stats };

std::string_view kind_name(CueKind kind) noexcept;

struct CueText {
  CueKind kind = CueKind::task;
  std::string text;
};

/// Fills the fixed template of `kind`. Vision needs `scene`, stats needs
/// `stats`; a missing input is a ContractError.
CueText render_caption(CueKind kind, const SceneMeta* scene = nullptr, const StatSummary* stats = nullptr);

/// Lower-cased alphanumeric runs; everything else separates pieces.
std::vector<std::string> split_pieces(std::string_view text);

struct TokenSeq {
  std::vector<std::size_t> ids;
};

/// Each piece maps to fnv1a64(piece) mod vocab.
TokenSeq tokenize(const CueText& caption, std::size_t vocab);

/// Gathers vocabulary rows: n x D.
Tensor embed_tokens(const TokenSeq& tokens, const Tensor& vocab);

/// Attentive compressor: L learned queries attend over a caption of any
/// length, softmax((Q0 Wq)(C Wk)^T / sqrt(D)) (C Wv), giving L tokens.
class AttentiveCompressor {
 public:
  AttentiveCompressor() = default;
  AttentiveCompressor(ParamStore& store, std::string prefix, std::size_t prompt_len, std::size_t dim, Rng& rng);

  /// B x n x D -> B x L x D.
  Var compress(Tape& tape, ParamStore& store, const Var& caption, Tensor* weights = nullptr) const;

  const std::string& prefix() const noexcept { return prefix_; }
  std::size_t prompt_len() const noexcept { return prompt_len_; }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::string prefix_;
  std::size_t prompt_len_ = 0;
  std::size_t dim_ = 0;
};

/// sum_k W_k * E_k with each W_k an L x D tensor broadcast over the batch.
Var fuse_cues(const Var& e_task, const Var& e_vision, const Var& e_stats, const Var& w_task, const Var& w_vision,
              const Var& w_stats);

/// Owns the three compressors and fusion weights of the prompt branch.
class CuePrompt {
 public:
  CuePrompt() = default;
  CuePrompt(ParamStore& store, std::string prefix, std::size_t prompt_len, std::size_t dim, Rng& rng);

  const AttentiveCompressor& compressor(CueKind kind) const { return compressors_[static_cast<int>(kind)]; }
  std::string weight_name(CueKind kind) const;
  std::size_t prompt_len() const noexcept { return prompt_len_; }

  /// `captions[k]` holds one embedded caption (n_b x D) per batch element.
  Var forward(Tape& tape, ParamStore& store, const std::array<std::vector<Tensor>, 3>& captions) const;

 private:
  std::string prefix_;
  std::size_t prompt_len_ = 0;
  std::array<AttentiveCompressor, 3> compressors_;
};

}  // namespace physkit::cue
