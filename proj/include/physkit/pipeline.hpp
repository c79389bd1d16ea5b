// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "physkit/aggregator.hpp"
#include "physkit/cue.hpp"
#include "physkit/dds.hpp"
#include "physkit/gradcheck.hpp"
#include "physkit/optim.hpp"
#include "physkit/signal.hpp"
#include "physkit/tpg.hpp"

namespace physkit::pipeline {

enum class HeadKind {
  /// Mean over all LM output tokens, then a D -> T linear map.
  mean_pool,
  /// Each token gets its own D -> T map and the results are summed.
  per_token,
};

struct ModelConfig {
  std::size_t frames = 128;
  double fs = 30.0;
  std::size_t dim = 64;
  std::size_t heads = 4;
  double alpha = 0.8;
  double beta_init = 0.5;
  int level = 3;
  std::string basis = "haar";
  std::vector<aggregator::LevelShape> levels{{8, 8}, {4, 4}, {2, 2}};
  std::size_t l_target = 32;
  bool compress_time = true;
  std::size_t vocab = 1024;
  std::size_t prototypes = 64;
  std::size_t prompt_len = 16;
  std::size_t patch = 16;
  std::size_t stride = 8;
  std::size_t lm_layers = 2;
  HeadKind head = HeadKind::per_token;

  /// Small dimensions for gradient checks and fast tests.
  static ModelConfig tiny();
  void validate() const;
  std::size_t signal_tokens() const noexcept { return (frames - patch) / stride + 1; }
  /// L + 2 V'.
  std::size_t lm_tokens() const noexcept { return prompt_len + 2 * prototypes; }
};

/// One model input. Pyramid levels are 1 x T x H x W.
struct Sample {
  std::vector<double> x_enc;
  aggregator::FeaturePyramid pyramid;
  cue::SceneMeta scene;
};

Sample sample_from_clip(const signal::SyntheticClip& clip);

/// Embedded captions of one sample; depends only on the input and the
/// frozen vocabulary, so it can be computed once per sample.
struct CueInputs {
  std::array<Tensor, 3> captions;
};

/// Intermediates of a forward pass, one entry per batch element where
/// applicable.
struct ForwardTrace {
  std::vector<dds::DdsTrace> dds;
  Shape signal_tokens;
  Shape t_signal;
  Shape t_vision;
  Shape t_cue;
  Shape lm_input;
};

/// The end-to-end model: DDS, signal patch tokenizer, vision aggregator,
/// shared text-prototype guidance, cue prompt and a small transformer that
/// regresses the waveform.
class PhysModel {
 public:
  PhysModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }

  CueInputs cue_inputs(const Sample& s) const;

  /// B x T prediction for a batch of samples.
  Var forward(Tape& tape, std::span<const Sample* const> batch, std::span<const CueInputs* const> cues,
              ForwardTrace* trace = nullptr);
  /// Convenience overload that embeds the captions itself.
  Var forward(Tape& tape, std::span<const Sample* const> batch, ForwardTrace* trace = nullptr);

  /// Inference without recording a tape.
  std::vector<double> predict(const Sample& s);

  const aggregator::VisionAggregator& aggregator() const { return *agg_; }
  const tpg::TextPrototypeGuidance& tpg() const { return *tpg_; }
  const cue::CuePrompt& cue_prompt() const { return *cue_; }

  static constexpr const char* kVocab = "vocab";
  static constexpr const char* kBetaRaw = "dds.beta_raw";

 private:
  Var lm_forward(Tape& tape, const Var& tokens);

  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<aggregator::VisionAggregator> agg_;
  std::unique_ptr<tpg::TextPrototypeGuidance> tpg_;
  std::unique_ptr<cue::CuePrompt> cue_;
  std::vector<attention::AttentionParams> lm_attn_;
  std::vector<attention::FfnParams> lm_ffn_;
};

/// (1/n) sum (y - y_hat)^2 over equally shaped tensors.
Var mse_loss(const Var& prediction, const Var& target);

struct Example {
  Sample input;
  std::vector<double> target;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  std::size_t batch = 4;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  /// Losses averaged for the initial and final running loss.
  std::size_t window = 10;
};

struct TrainLog {
  std::vector<double> losses;
  double initial_running_loss = 0.0;
  double final_running_loss = 0.0;
};

/// Mini-batch Adam on the MSE loss; batches come from seeded per-epoch
/// shuffles of `data`.
TrainLog train(PhysModel& model, const std::vector<Example>& data, const TrainConfig& cfg);

struct HrEvaluation {
  std::vector<double> predicted_bpm;
  std::vector<double> reference_bpm;
  signal::MetricsReport report;
};

/// Heart rates of the predicted and target waveforms, both through the same
/// PSD estimator.
HrEvaluation evaluate_hr(PhysModel& model, const std::vector<Example>& data);

struct ModuleCheck {
  std::string module;
  GradCheckResult result;
};

/// Gradient checks of dds (beta), aggregator, tpg, cue and the full model at
/// tiny dimensions. Gates that start at zero are opened first so that every
/// branch carries gradient.
std::vector<ModuleCheck> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

/// Clips for training and evaluation with HR drawn uniformly from
/// [hr_lo, hr_hi], clip i seeded from (seed, i).
std::vector<signal::SyntheticClip> make_clips(std::size_t count, const signal::SynthConfig& cfg, std::uint64_t seed,
                                              double hr_lo = 45.0, double hr_hi = 150.0);
std::vector<Example> to_examples(const std::vector<signal::SyntheticClip>& clips);

}  // namespace physkit::pipeline
