// SPDX-License-Identifier: Apache-2.0
#include "physkit/cue.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::cue {

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Fixed preamble describing the estimation task.
constexpr std::string_view kTaskPreamble =
    "Task: remote photoplethysmography. Estimate the blood volume pulse waveform of the subject "
    "from facial video. The pulse is quasi periodic with a heart rate between 45 and 150 beats per "
    "minute; illumination changes and head motion add noise.";

constexpr std::array<std::string_view, 3> kKindNames = {"task", "vision", "stats"};

}  // namespace

double median(std::span<const double> x) {
  if (x.empty()) throw ContractError("median of an empty sequence");
  std::vector<double> v(x.begin(), x.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double trend(std::span<const double> x) {
  double g = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) g += x[i] - x[i - 1];
  return g;
}

int direction(std::span<const double> x) {
  const double g = trend(x);
  return (g > 0.0) - (g < 0.0);
}

std::vector<double> normalized_autocorrelation(std::span<const double> x, std::size_t max_lag) {
  std::vector<double> r(max_lag, 0.0);
  if (x.empty()) return r;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> c(x.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    c[i] = x[i] - mean;
    denom += c[i] * c[i];
  }
  if (!(denom > 0.0)) return r;
  for (std::size_t tau = 1; tau <= max_lag && tau < x.size(); ++tau) {
    double acc = 0.0;
    for (std::size_t t = 0; t + tau < x.size(); ++t) acc += c[t] * c[t + tau];
    r[tau - 1] = acc / denom;
  }
  return r;
}

StatSummary signal_stats(std::span<const double> x) {
  if (x.size() < 4) throw ContractError("signal_stats needs at least 4 samples, got " + std::to_string(x.size()));
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("signal_stats: non-finite sample");
  }
  StatSummary s;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  s.min = *lo;
  s.max = *hi;
  s.median = median(x);
  s.trend = trend(x);
  s.direction = (s.trend > 0.0) - (s.trend < 0.0);

  const std::size_t max_lag = x.size() / 2;
  const std::vector<double> r = normalized_autocorrelation(x, max_lag);
  std::vector<std::size_t> lags(max_lag);
  std::iota(lags.begin(), lags.end(), std::size_t{1});
  const std::size_t k = std::min(kTopLags, max_lag);
  std::partial_sort(lags.begin(), lags.begin() + static_cast<std::ptrdiff_t>(k), lags.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (r[a - 1] != r[b - 1]) return r[a - 1] > r[b - 1];
                      return a < b;
                    });
  s.top_lags.assign(lags.begin(), lags.begin() + static_cast<std::ptrdiff_t>(k));
  return s;
}

std::string_view kind_name(CueKind kind) noexcept { return kKindNames[static_cast<int>(kind)]; }

CueText render_caption(CueKind kind, const SceneMeta* scene, const StatSummary* stats) {
  CueText c;
  c.kind = kind;
  switch (kind) {
    case CueKind::task:
      c.text = std::string(kTaskPreamble);
      break;
    case CueKind::vision:
      if (!scene) throw ContractError("vision caption needs scene metadata");
      c.text = "The face is under " + scene->lighting + " lighting. The subject is " +
               (scene->motion ? "moving the head" : "holding still") + ". Skin tone is Fitzpatrick type " +
               scene->skin_tone + ".";
      break;
    case CueKind::stats: {
      if (!stats) throw ContractError("stats caption needs a StatSummary");
      const char* dir = stats->direction > 0 ? "upward" : (stats->direction < 0 ? "downward" : "flat");
      c.text = "Input statistics: min value " + fixed3(stats->min) + ", max value " + fixed3(stats->max) +
               ", median value " + fixed3(stats->median) + ", trend " + fixed3(stats->trend) + " " + dir +
               ", top lags";
      for (std::size_t lag : stats->top_lags) c.text += " " + std::to_string(lag);
      c.text += ".";
      break;
    }
  }
  return c;
}

std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenSeq tokenize(const CueText& caption, std::size_t vocab) {
  if (vocab == 0) throw ContractError("tokenize: vocabulary size must be positive");
  if (caption.text.empty()) throw ContractError("tokenize: empty caption text");
  TokenSeq seq;
  for (const std::string& piece : split_pieces(caption.text)) seq.ids.push_back(fnv1a64(piece) % vocab);
  if (seq.ids.empty()) throw ContractError("tokenize: caption contains no word pieces");
  return seq;
}

Tensor embed_tokens(const TokenSeq& tokens, const Tensor& vocab) {
  if (vocab.rank() != 2) throw ShapeError("embed_tokens: vocabulary must be V x D");
  if (tokens.ids.empty()) throw ContractError("embed_tokens: empty token sequence");
  const std::size_t d = vocab.dim(1);
  Tensor out({tokens.ids.size(), d});
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const std::size_t id = tokens.ids[i];
    if (id >= vocab.dim(0)) throw ContractError("embed_tokens: token id out of range");
    std::copy_n(vocab.data().data() + id * d, d, out.data().data() + i * d);
  }
  return out;
}

AttentiveCompressor::AttentiveCompressor(ParamStore& store, std::string prefix, std::size_t prompt_len,
                                         std::size_t dim, Rng& rng)
    : prefix_(std::move(prefix)), prompt_len_(prompt_len), dim_(dim) {
  if (prompt_len == 0 || dim == 0) throw ContractError("attentive compressor: prompt length and dim must be positive");
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  store.add(prefix_ + ".queries", Tensor::randn({prompt_len, dim}, rng));
  store.add(prefix_ + ".wq", Tensor::randn({dim, dim}, rng, sd));
  store.add(prefix_ + ".wk", Tensor::randn({dim, dim}, rng, sd));
  store.add(prefix_ + ".wv", Tensor::randn({dim, dim}, rng, sd));
}

Var AttentiveCompressor::compress(Tape& tape, ParamStore& store, const Var& caption, Tensor* weights) const {
  if (caption.shape().size() != 3 || caption.dim(2) != dim_) {
    throw ShapeError("attentive compressor expects B x n x " + std::to_string(dim_) + ", got " +
                     shape_str(caption.shape()));
  }
  const Var q = matmul(tape.param(store.get(prefix_ + ".queries")), tape.param(store.get(prefix_ + ".wq")));
  const Var k = matmul(caption, tape.param(store.get(prefix_ + ".wk")));
  const Var v = matmul(caption, tape.param(store.get(prefix_ + ".wv")));
  const Var scores = affine(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dim_)));
  const Var attn = softmax_rows(scores);
  if (weights) *weights = attn.value();
  return matmul(attn, v);
}

Var fuse_cues(const Var& e_task, const Var& e_vision, const Var& e_stats, const Var& w_task, const Var& w_vision,
              const Var& w_stats) {
  const Shape& s = e_task.shape();
  if (s.size() != 3 || e_vision.shape() != s || e_stats.shape() != s) {
    throw ShapeError("fuse_cues: cue embeddings must share a B x L x D shape");
  }
  const Shape w{s[1], s[2]};
  if (w_task.shape() != w || w_vision.shape() != w || w_stats.shape() != w) {
    throw ShapeError("fuse_cues: fusion weights must be " + shape_str(w));
  }
  return add(add(mul(e_task, w_task), mul(e_vision, w_vision)), mul(e_stats, w_stats));
}

CuePrompt::CuePrompt(ParamStore& store, std::string prefix, std::size_t prompt_len, std::size_t dim, Rng& rng)
    : prefix_(std::move(prefix)), prompt_len_(prompt_len) {
  for (CueKind kind : {CueKind::task, CueKind::vision, CueKind::stats}) {
    compressors_[static_cast<int>(kind)] =
        AttentiveCompressor(store, prefix_ + "." + std::string(kind_name(kind)), prompt_len, dim, rng);
    store.add(weight_name(kind), Tensor({prompt_len, dim}, 1.0 / 3.0));
  }
}

std::string CuePrompt::weight_name(CueKind kind) const {
  return prefix_ + ".fusion_" + std::string(kind_name(kind));
}

Var CuePrompt::forward(Tape& tape, ParamStore& store, const std::array<std::vector<Tensor>, 3>& captions) const {
  std::array<Var, 3> compressed;
  for (int k = 0; k < 3; ++k) {
    if (captions[k].empty()) throw ContractError("cue prompt: empty batch");
    std::vector<Var> per_sample;
    for (const Tensor& c : captions[k]) {
      const Var one = tape.constant(c.reshaped({1, c.dim(0), c.dim(1)}));
      per_sample.push_back(compressors_[k].compress(tape, store, one));
    }
    compressed[k] = per_sample.size() == 1 ? per_sample[0] : concat(per_sample, 0);
  }
  return fuse_cues(compressed[0], compressed[1], compressed[2],
                   tape.param(store.get(weight_name(CueKind::task))),
                   tape.param(store.get(weight_name(CueKind::vision))),
                   tape.param(store.get(weight_name(CueKind::stats))));
}

}  // namespace physkit::cue
