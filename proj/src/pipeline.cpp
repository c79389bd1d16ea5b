// SPDX-License-Identifier: Apache-2.0
#include "physkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::pipeline {

namespace {

// Runs one forward stage and prefixes any contract, shape or numeric error
// with the stage name, keeping the error type.
template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(name) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(name) + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(std::string(name) + ": " + e.what());
  }
}

std::string layer_prefix(std::size_t i) { return "lm.layer" + std::to_string(i); }

aggregator::AggregatorConfig agg_config(const ModelConfig& c) {
  aggregator::AggregatorConfig a;
  a.levels = c.levels;
  a.frames = c.frames;
  a.l_target = c.l_target;
  a.dim = c.dim;
  a.heads = c.heads;
  a.compress_time = c.compress_time;
  return a;
}

// Stacks 1 x ... tensors along a new leading batch axis.
Tensor stack_batch(std::span<const Tensor* const> parts) {
  Shape shape = parts.front()->shape();
  const std::size_t per = parts.front()->numel();
  shape[0] = parts.size();
  std::vector<double> data;
  data.reserve(per * parts.size());
  for (const Tensor* t : parts) {
    if (t->shape() != parts.front()->shape()) {
      throw ShapeError("batch elements have shapes " + shape_str(parts.front()->shape()) + " and " +
                       shape_str(t->shape()));
    }
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) { return Tensor::randn(std::move(shape), rng, sd); }

void open_gates(ParamStore& store, const std::string& prefix, Rng& rng) {
  for (const char* g : {".gamma1", ".gamma2"}) {
    Parameter& p = store.get(prefix + g);
    p.value = Tensor::randn(p.value.shape(), rng, 0.5);
  }
  // Average pooling makes the compressed rows nearly equal, which leaves the
  // self-attention query/key gradients close to zero.
  for (auto& [name, p] : store) {
    if (name.starts_with(prefix + ".level") && name.ends_with(".temporal")) {
      p.value = Tensor::randn(p.value.shape(), rng, 1.0 / std::sqrt(static_cast<double>(p.value.dim(1))));
    }
  }
}

}  // namespace

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.frames = 32;
  c.dim = 8;
  c.heads = 2;
  c.level = 2;
  c.levels = {{4, 4}, {2, 2}};
  c.l_target = 8;
  c.vocab = 64;
  c.prototypes = 8;
  c.prompt_len = 4;
  c.patch = 8;
  c.stride = 4;
  c.lm_layers = 2;
  return c;
}

void ModelConfig::validate() const {
  if (frames == 0 || dim == 0 || heads == 0) throw ContractError("frames, dim and heads must be positive");
  if (dim % heads != 0) throw ContractError("dim must be divisible by heads");
  if (!(fs > 0.0)) throw ContractError("sample rate must be positive");
  if (patch == 0 || stride == 0 || stride > patch) throw ContractError("signal tokenizer needs patch >= stride >= 1");
  if (patch > frames) throw ContractError("patch longer than the clip");
  if (prototypes == 0 || prototypes * 4 > vocab) throw ContractError("prototypes must lie in [1, vocab / 4]");
  if (levels.size() < 2) throw ContractError("the vision aggregator needs at least two pyramid levels");
  if (prompt_len == 0 || l_target == 0 || lm_layers == 0) throw ContractError("prompt_len, l_target, lm_layers must be positive");
  if (!(beta_init >= 0.0 && beta_init <= 1.0)) throw ContractError("beta_init must lie in [0, 1]");
  dds::DdsParams p;
  p.alpha = alpha;
  p.level = level;
  p.basis = wavelet::WaveletBasis::from_name(basis);
  p.validate();
}

Sample sample_from_clip(const signal::SyntheticClip& clip) {
  return Sample{clip.x_enc, clip.pyramid, clip.scene};
}

PhysModel::PhysModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.dim;

  Rng vocab_rng = Rng::derive(seed, "vocab");
  store_.add(kVocab, Tensor::randn({cfg_.vocab, d}, vocab_rng), /*trainable=*/false);
  store_.add(kBetaRaw, Tensor({1}, dds::DdsParams::raw_for_beta(cfg_.beta_init)));

  Rng tok_rng = Rng::derive(seed, "signal_tokenizer");
  store_.add("sigtok.weight", Tensor::randn({cfg_.patch, d}, tok_rng, 1.0 / std::sqrt(static_cast<double>(cfg_.patch))));
  store_.add("sigtok.bias", Tensor({d}));

  Rng agg_rng = Rng::derive(seed, "aggregator");
  agg_ = std::make_unique<aggregator::VisionAggregator>(store_, "agg", agg_config(cfg_), agg_rng);

  Rng tpg_rng = Rng::derive(seed, "tpg");
  tpg::TpgConfig tc;
  tc.vocab = cfg_.vocab;
  tc.dim = d;
  tc.prototypes = cfg_.prototypes;
  tc.heads = cfg_.heads;
  tpg_ = std::make_unique<tpg::TextPrototypeGuidance>(store_, "tpg", kVocab, tc, tpg_rng);

  Rng cue_rng = Rng::derive(seed, "cue");
  cue_ = std::make_unique<cue::CuePrompt>(store_, "cue", cfg_.prompt_len, d, cue_rng);

  Rng lm_rng = Rng::derive(seed, "lm");
  const std::size_t n = cfg_.lm_tokens();
  store_.add("lm.pos", Tensor::randn({n, d}, lm_rng, 0.1));
  for (std::size_t i = 0; i < cfg_.lm_layers; ++i) {
    const std::string p = layer_prefix(i);
    store_.add(p + ".ln1.gain", Tensor({d}, 1.0));
    store_.add(p + ".ln1.bias", Tensor({d}));
    store_.add(p + ".ln2.gain", Tensor({d}, 1.0));
    store_.add(p + ".ln2.bias", Tensor({d}));
    lm_attn_.push_back(attention::AttentionParams::create(store_, p + ".attn", d, cfg_.heads, lm_rng));
    lm_ffn_.push_back(attention::FfnParams::create(store_, p + ".ffn", d, lm_rng));
  }
  store_.add("lm.ln_f.gain", Tensor({d}, 1.0));
  store_.add("lm.ln_f.bias", Tensor({d}));
  const std::size_t fan_in = cfg_.head == HeadKind::mean_pool ? d : n * d;
  store_.add("lm.head.weight",
             Tensor::randn({fan_in, cfg_.frames}, lm_rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
  store_.add("lm.head.bias", Tensor({cfg_.frames}));
}

CueInputs PhysModel::cue_inputs(const Sample& s) const {
  const Tensor& vocab = store_.get(kVocab).value;
  const cue::StatSummary stats = cue::signal_stats(s.x_enc);
  CueInputs in;
  const cue::CueText texts[3] = {cue::render_caption(cue::CueKind::task),
                                 cue::render_caption(cue::CueKind::vision, &s.scene),
                                 cue::render_caption(cue::CueKind::stats, nullptr, &stats)};
  for (int k = 0; k < 3; ++k) in.captions[k] = cue::embed_tokens(cue::tokenize(texts[k], cfg_.vocab), vocab);
  return in;
}

Var PhysModel::lm_forward(Tape& tape, const Var& tokens) {
  Var h = add(tokens, tape.param(store_.get("lm.pos")));
  for (std::size_t i = 0; i < cfg_.lm_layers; ++i) {
    const std::string p = layer_prefix(i);
    const Var a_in = layer_norm(h, tape.param(store_.get(p + ".ln1.gain")), tape.param(store_.get(p + ".ln1.bias")));
    h = add(h, attention::self_attention(a_in, attention::bind(tape, store_, lm_attn_[i])));
    const Var f_in = layer_norm(h, tape.param(store_.get(p + ".ln2.gain")), tape.param(store_.get(p + ".ln2.bias")));
    h = add(h, attention::ffn(f_in, attention::bind(tape, store_, lm_ffn_[i])));
  }
  h = layer_norm(h, tape.param(store_.get("lm.ln_f.gain")), tape.param(store_.get("lm.ln_f.bias")));
  const std::size_t b = h.dim(0);
  const Var features = cfg_.head == HeadKind::mean_pool ? mean_axis(h, 1)
                                                        : reshape(h, {b, cfg_.lm_tokens() * cfg_.dim});
  return add(matmul(features, tape.param(store_.get("lm.head.weight"))), tape.param(store_.get("lm.head.bias")));
}

Var PhysModel::forward(Tape& tape, std::span<const Sample* const> batch, std::span<const CueInputs* const> cues,
                       ForwardTrace* trace) {
  if (batch.empty()) throw ContractError("forward: empty batch");
  if (cues.size() != batch.size()) throw ContractError("forward: one cue input per sample required");
  const std::size_t b = batch.size();
  const std::size_t t = cfg_.frames;

  const Var beta_raw = tape.param(store_.get(kBetaRaw));
  const Var z = stage("dds", [&] {
    dds::DdsParams p;
    p.alpha = cfg_.alpha;
    p.beta_raw = beta_raw.value()[0];
    p.level = cfg_.level;
    p.basis = wavelet::WaveletBasis::from_name(cfg_.basis);
    Tensor zt({b, t});
    Tensor zf({b, t});
    for (std::size_t i = 0; i < b; ++i) {
      if (batch[i]->x_enc.size() != t) {
        throw ShapeError("x_enc has " + std::to_string(batch[i]->x_enc.size()) + " samples, model expects " +
                         std::to_string(t));
      }
      dds::DdsTrace tr = dds::dds_forward(batch[i]->x_enc, p);
      std::copy(tr.z_time.begin(), tr.z_time.end(), zt.data().begin() + static_cast<std::ptrdiff_t>(i * t));
      std::copy(tr.z_fre.begin(), tr.z_fre.end(), zf.data().begin() + static_cast<std::ptrdiff_t>(i * t));
      if (trace) trace->dds.push_back(std::move(tr));
    }
    return dds::blend(beta_raw, zt, zf);
  });

  const Var tokens = stage("signal tokenizer", [&] {
    const Var patches = unfold(z, cfg_.patch, cfg_.stride);
    return add(matmul(patches, tape.param(store_.get("sigtok.weight"))), tape.param(store_.get("sigtok.bias")));
  });

  const Var protos = stage("tpg", [&] { return tpg_->prototypes(tape, store_); });
  const Var t_signal = stage("tpg", [&] { return tpg_->reprogram(tape, store_, tokens, protos); });

  const Var f_visual = stage("aggregator", [&] {
    aggregator::FeaturePyramid pyr;
    for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
      std::vector<const Tensor*> parts;
      for (const Sample* s : batch) {
        if (s->pyramid.levels.size() != cfg_.levels.size()) {
          throw ShapeError("pyramid has " + std::to_string(s->pyramid.levels.size()) + " levels, model expects " +
                           std::to_string(cfg_.levels.size()));
        }
        parts.push_back(&s->pyramid.levels[l]);
      }
      pyr.levels.push_back(stack_batch(parts));
    }
    return agg_->aggregate(tape, store_, pyr);
  });
  const Var t_vision = stage("tpg", [&] { return tpg_->reprogram(tape, store_, f_visual, protos); });

  const Var t_cue = stage("cue", [&] {
    std::array<std::vector<Tensor>, 3> caps;
    for (const CueInputs* c : cues) {
      for (int k = 0; k < 3; ++k) caps[k].push_back(c->captions[k]);
    }
    return cue_->forward(tape, store_, caps);
  });

  const Var all[3] = {t_cue, t_vision, t_signal};
  const Var lm_in = concat(all, 1);
  if (trace) {
    trace->signal_tokens = tokens.shape();
    trace->t_signal = t_signal.shape();
    trace->t_vision = t_vision.shape();
    trace->t_cue = t_cue.shape();
    trace->lm_input = lm_in.shape();
  }
  return stage("lm", [&] { return lm_forward(tape, lm_in); });
}

Var PhysModel::forward(Tape& tape, std::span<const Sample* const> batch, ForwardTrace* trace) {
  std::vector<CueInputs> owned;
  owned.reserve(batch.size());
  for (const Sample* s : batch) owned.push_back(cue_inputs(*s));
  std::vector<const CueInputs*> ptrs;
  for (const CueInputs& c : owned) ptrs.push_back(&c);
  return forward(tape, batch, ptrs, trace);
}

std::vector<double> PhysModel::predict(const Sample& s) {
  Tape tape(/*recording=*/false);
  const Sample* one[] = {&s};
  return forward(tape, one).value().vec();
}

Var mse_loss(const Var& prediction, const Var& target) { return mse(prediction, target); }

TrainLog train(PhysModel& model, const std::vector<Example>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ContractError("train: empty dataset");
  if (cfg.batch == 0 || cfg.window == 0) throw ContractError("train: batch and window must be positive");
  if (!(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0)) throw ContractError("train: lr and weight decay must be >= 0");
  const std::size_t t = model.config().frames;
  for (const Example& e : data) {
    if (e.target.size() != t) throw ShapeError("train: target length must equal the clip length");
  }

  std::vector<CueInputs> cues;
  cues.reserve(data.size());
  for (const Example& e : data) cues.push_back(model.cue_inputs(e.input));

  const std::size_t batch = std::min(cfg.batch, data.size());
  Rng shuffle_rng = Rng::derive(cfg.seed, "shuffle");
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = data.size();

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  TrainLog log;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (cursor + batch > data.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      cursor = 0;
    }
    std::vector<const Sample*> xs;
    std::vector<const CueInputs*> cs;
    Tensor y({batch, t});
    for (std::size_t j = 0; j < batch; ++j) {
      const std::size_t idx = order[cursor + j];
      xs.push_back(&data[idx].input);
      cs.push_back(&cues[idx]);
      std::copy(data[idx].target.begin(), data[idx].target.end(),
                y.data().begin() + static_cast<std::ptrdiff_t>(j * t));
    }
    cursor += batch;

    Tape tape;
    const Var pred = model.forward(tape, xs, cs);
    const Var loss = mse_loss(pred, tape.constant(std::move(y)));
    backward(loss, model.store());
    adam_step(model.store(), adam, static_cast<long>(step));
    log.losses.push_back(loss.value().item());
  }

  if (!log.losses.empty()) {
    const std::size_t w = std::min(cfg.window, log.losses.size());
    log.initial_running_loss = std::accumulate(log.losses.begin(), log.losses.begin() + static_cast<std::ptrdiff_t>(w), 0.0) /
                               static_cast<double>(w);
    log.final_running_loss = std::accumulate(log.losses.end() - static_cast<std::ptrdiff_t>(w), log.losses.end(), 0.0) /
                             static_cast<double>(w);
  }
  return log;
}

HrEvaluation evaluate_hr(PhysModel& model, const std::vector<Example>& data) {
  if (data.empty()) throw ContractError("evaluate_hr: empty dataset");
  HrEvaluation ev;
  const double fs = model.config().fs;
  for (const Example& e : data) {
    const std::vector<double> y_hat = model.predict(e.input);
    ev.predicted_bpm.push_back(signal::estimate_hr(y_hat, fs).bpm);
    ev.reference_bpm.push_back(signal::estimate_hr(e.target, fs).bpm);
  }
  ev.report = signal::metrics(ev.predicted_bpm, ev.reference_bpm);
  return ev;
}

std::vector<signal::SyntheticClip> make_clips(std::size_t count, const signal::SynthConfig& cfg, std::uint64_t seed,
                                              double hr_lo, double hr_hi) {
  if (count == 0) throw ContractError("make_clips: clip count must be positive");
  if (!(hr_lo >= 45.0 && hr_hi <= 150.0 && hr_lo <= hr_hi)) throw ContractError("make_clips: HR range outside [45, 150]");
  Rng hr_rng = Rng::derive(seed, "hr");
  std::vector<signal::SyntheticClip> clips;
  clips.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double hr = hr_rng.uniform(hr_lo, hr_hi);
    clips.push_back(signal::gen_clip(hr, cfg, Rng::derive_seed(seed, "clip" + std::to_string(i))));
  }
  return clips;
}

std::vector<Example> to_examples(const std::vector<signal::SyntheticClip>& clips) {
  std::vector<Example> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(Example{sample_from_clip(c), c.bvp});
  return out;
}

std::vector<ModuleCheck> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opts) {
  const ModelConfig cfg = ModelConfig::tiny();
  const std::size_t d = cfg.dim;
  const std::size_t b = 2;
  std::vector<ModuleCheck> out;

  {
    ParamStore store;
    store.add(PhysModel::kBetaRaw, Tensor({1}, 0.3));
    Rng rng = Rng::derive(seed, "gradcheck.dds");
    Tensor zt({b, cfg.frames});
    Tensor zf({b, cfg.frames});
    dds::DdsParams p;
    p.level = cfg.level;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> x(cfg.frames);
      for (double& v : x) v = rng.normal();
      const dds::DdsTrace tr = dds::dds_forward(x, p);
      std::copy(tr.z_time.begin(), tr.z_time.end(), zt.data().begin() + static_cast<std::ptrdiff_t>(i * cfg.frames));
      std::copy(tr.z_fre.begin(), tr.z_fre.end(), zf.data().begin() + static_cast<std::ptrdiff_t>(i * cfg.frames));
    }
    const Tensor target = random_tensor({b, cfg.frames}, rng);
    const ScalarFn f = [&](Tape& tape) {
      return mse(dds::blend(tape.param(store.get(PhysModel::kBetaRaw)), zt, zf), tape.constant(target));
    };
    out.push_back({"dds", grad_check(f, store, opts)});
  }

  {
    ParamStore store;
    Rng rng = Rng::derive(seed, "gradcheck.aggregator");
    const aggregator::VisionAggregator agg(store, "agg", agg_config(cfg), rng);
    open_gates(store, "agg", rng);
    aggregator::FeaturePyramid pyr;
    for (const auto& l : cfg.levels) pyr.levels.push_back(random_tensor({b, cfg.frames, l.height, l.width}, rng));
    const Tensor target = random_tensor({b, cfg.l_target, d}, rng);
    const ScalarFn f = [&](Tape& tape) { return mse(agg.aggregate(tape, store, pyr), tape.constant(target)); };
    out.push_back({"aggregator", grad_check(f, store, opts)});
  }

  {
    ParamStore store;
    Rng rng = Rng::derive(seed, "gradcheck.tpg");
    store.add(PhysModel::kVocab, random_tensor({cfg.vocab, d}, rng), false);
    tpg::TpgConfig tc{cfg.vocab, d, cfg.prototypes, cfg.heads};
    const tpg::TextPrototypeGuidance tpg(store, "tpg", PhysModel::kVocab, tc, rng);
    const Tensor x = random_tensor({b, 5, d}, rng);
    const Tensor target = random_tensor({b, cfg.prototypes, d}, rng);
    const ScalarFn f = [&](Tape& tape) {
      return mse(tpg.reprogram(tape, store, tape.constant(x)), tape.constant(target));
    };
    out.push_back({"tpg", grad_check(f, store, opts)});
  }

  {
    ParamStore store;
    Rng rng = Rng::derive(seed, "gradcheck.cue");
    const cue::CuePrompt prompt(store, "cue", cfg.prompt_len, d, rng);
    for (cue::CueKind k : {cue::CueKind::task, cue::CueKind::vision, cue::CueKind::stats}) {
      Parameter& w = store.get(prompt.weight_name(k));
      w.value = random_tensor(w.value.shape(), rng, 0.5);
    }
    std::array<std::vector<Tensor>, 3> caps;
    const std::size_t lengths[3][2] = {{3, 7}, {1, 4}, {6, 2}};
    for (int k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < b; ++i) caps[k].push_back(random_tensor({lengths[k][i], d}, rng));
    }
    const Tensor target = random_tensor({b, cfg.prompt_len, d}, rng);
    const ScalarFn f = [&](Tape& tape) { return mse(prompt.forward(tape, store, caps), tape.constant(target)); };
    out.push_back({"cue", grad_check(f, store, opts)});
  }

  {
    PhysModel model(cfg, Rng::derive_seed(seed, "gradcheck.model"));
    Rng rng = Rng::derive(seed, "gradcheck.pipeline");
    open_gates(model.store(), "agg", rng);
    const char* lighting[] = {"dim", "bright"};
    std::vector<Sample> samples(b);
    for (std::size_t i = 0; i < b; ++i) {
      samples[i].x_enc.resize(cfg.frames);
      for (double& v : samples[i].x_enc) v = rng.normal();
      for (const auto& l : cfg.levels) samples[i].pyramid.levels.push_back(random_tensor({1, cfg.frames, l.height, l.width}, rng));
      samples[i].scene.lighting = lighting[i];
      samples[i].scene.motion = i == 1;
    }
    const Sample* ptrs[] = {&samples[0], &samples[1]};
    const Tensor target = random_tensor({b, cfg.frames}, rng);
    const ScalarFn f = [&](Tape& tape) { return mse(model.forward(tape, ptrs), tape.constant(target)); };
    GradCheckOptions po = opts;
    if (po.max_per_param == 0) po.max_per_param = 4;
    out.push_back({"pipeline", grad_check(f, model.store(), po)});
  }
  return out;
}

}  // namespace physkit::pipeline
