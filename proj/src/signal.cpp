// SPDX-License-Identifier: Apache-2.0
#include "physkit/signal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::signal {

namespace {

using nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHarmonicAmp = 0.3;
constexpr double kArCoefficient = 0.9;
constexpr double kMotionAmp = 0.5;

constexpr const char* kLighting[] = {"dim", "normal", "bright"};
constexpr double kLightingGain[] = {0.6, 1.0, 1.4};
constexpr const char* kSkinTones[] = {"I", "II", "III", "IV", "V", "VI"};

double lighting_gain(const std::string& lighting) {
  for (int i = 0; i < 3; ++i) {
    if (lighting == kLighting[i]) return kLightingGain[i];
  }
  throw ContractError("unknown lighting level '" + lighting + "'");
}

double skin_gain(const std::string& tone) {
  for (int i = 0; i < 6; ++i) {
    if (tone == kSkinTones[i]) return 1.0 - 0.06 * i;
  }
  throw ContractError("unknown skin tone '" + tone + "'");
}

// Rescales `noise` in place to mean power `target`. A zero target or an
// all-zero draw gives silence.
void scale_to_power(std::vector<double>& noise, double target) {
  const double p = power(noise);
  const double k = (p > 0.0 && target > 0.0) ? std::sqrt(target / p) : 0.0;
  for (double& v : noise) v *= k;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Average periodogram of Hann-windowed segments at bins k_lo..k_hi of an
// nfft-point grid.
std::vector<double> welch_bins(const std::vector<double>& x, std::size_t seg, std::size_t nfft, std::size_t k_lo,
                               std::size_t k_hi) {
  const std::size_t step = std::max<std::size_t>(1, seg / 2);
  std::vector<double> window(seg);
  double wsum2 = 0.0;
  for (std::size_t n = 0; n < seg; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(seg));
    wsum2 += window[n] * window[n];
  }
  std::vector<double> cos_t(nfft);
  std::vector<double> sin_t(nfft);
  for (std::size_t i = 0; i < nfft; ++i) {
    const double a = kTwoPi * static_cast<double>(i) / static_cast<double>(nfft);
    cos_t[i] = std::cos(a);
    sin_t[i] = std::sin(a);
  }
  std::vector<double> out(k_hi - k_lo + 1, 0.0);
  std::vector<double> buf(seg);
  std::size_t segments = 0;
  for (std::size_t start = 0; start + seg <= x.size(); start += step) {
    for (std::size_t n = 0; n < seg; ++n) buf[n] = x[start + n] * window[n];
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
      double re = 0.0;
      double im = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < seg; ++n) {
        re += buf[n] * cos_t[idx];
        im -= buf[n] * sin_t[idx];
        idx += k;
        if (idx >= nfft) idx -= nfft;
      }
      out[k - k_lo] += re * re + im * im;
    }
    ++segments;
  }
  for (double& v : out) v /= static_cast<double>(segments) * wsum2;
  return out;
}

struct Prepared {
  std::vector<double> x;
  std::size_t seg = 0;
  std::size_t nfft = 0;
};

Prepared prepare(std::span<const double> w, double fs) {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw ContractError("sample rate must be positive and finite");
  const auto min_len = static_cast<std::size_t>(std::ceil(4.0 * fs));
  if (w.size() < min_len) {
    throw ContractError("heart-rate estimation needs at least 4 s of samples (" + std::to_string(min_len) +
                        "), got " + std::to_string(w.size()));
  }
  Prepared p;
  double raw = 0.0;
  double mean = 0.0;
  for (double v : w) {
    if (!std::isfinite(v)) throw EstimationError("waveform contains a non-finite sample");
    mean += v;
    raw += v * v;
  }
  mean /= static_cast<double>(w.size());
  p.x.resize(w.size());
  double detrended = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    p.x[i] = w[i] - mean;
    detrended += p.x[i] * p.x[i];
  }
  if (!(detrended > 1e-20 * raw) || detrended == 0.0) {
    throw EstimationError("waveform has no variation after mean removal");
  }
  p.seg = std::min(w.size(), static_cast<std::size_t>(std::floor(256.0 * fs / 30.0)));
  p.seg = std::max<std::size_t>(p.seg, 2);
  p.nfft = 4 * p.seg;
  return p;
}

}  // namespace

double power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double measured_snr_db(std::span<const double> signal, std::span<const double> noisy) {
  if (signal.size() != noisy.size()) throw ShapeError("measured_snr_db: length mismatch");
  double pn = 0.0;
  for (std::size_t i = 0; i < signal.size(); ++i) pn += (noisy[i] - signal[i]) * (noisy[i] - signal[i]);
  pn /= static_cast<double>(signal.size());
  if (pn == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(power(signal) / pn);
}

SyntheticClip gen_clip(double hr_bpm, const SynthConfig& cfg, std::uint64_t seed) {
  if (!(hr_bpm >= 45.0 && hr_bpm <= 150.0)) {
    throw ContractError("heart rate must be within [45, 150] bpm, got " + fmt17(hr_bpm));
  }
  if (cfg.frames < 64) throw ContractError("clips need at least 64 frames, got " + std::to_string(cfg.frames));
  const double f = hr_bpm / 60.0;
  if (!(cfg.fs > 4.0 * f)) throw ContractError("sample rate too low for the second harmonic");
  if (cfg.levels.size() != cfg.windows.size()) throw ContractError("one backbone window per pyramid level");
  if (std::isnan(cfg.snr_db)) throw ContractError("snr must not be NaN");

  const std::size_t n = cfg.frames;
  const bool noiseless = std::isinf(cfg.snr_db) && cfg.snr_db > 0.0;
  const double noise_ratio = noiseless ? 0.0 : std::pow(10.0, -cfg.snr_db / 10.0);

  SyntheticClip c;
  c.hr_bpm = hr_bpm;
  c.fs = cfg.fs;
  c.seed = seed;

  // The clip is a window of a longer recording, so it starts at a random
  // point of the cardiac cycle.
  Rng phase_rng = Rng::derive(seed, "phase");
  const double t0 = phase_rng.uniform() / f;
  const double phi = phase_rng.uniform(0.0, kTwoPi);
  c.clean.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t0 + static_cast<double>(i) / cfg.fs;
    c.clean[i] = std::sin(kTwoPi * f * t) + kHarmonicAmp * std::sin(2.0 * kTwoPi * f * t + phi);
  }

  Rng white_rng = Rng::derive(seed, "bvp_noise");
  std::vector<double> white(n);
  for (double& v : white) v = white_rng.normal();
  scale_to_power(white, power(c.clean) * noise_ratio);
  c.bvp.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.bvp[i] = c.clean[i] + white[i];

  Rng ar_rng = Rng::derive(seed, "enc_noise");
  std::vector<double> colored(n);
  double prev = 0.0;
  for (double& v : colored) {
    prev = kArCoefficient * prev + ar_rng.normal();
    v = prev;
  }
  scale_to_power(colored, power(c.bvp) * noise_ratio);
  c.x_enc.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.x_enc[i] = c.bvp[i] + colored[i];

  Rng scene_rng = Rng::derive(seed, "scene");
  c.scene.lighting = kLighting[scene_rng.below(3)];
  c.scene.motion = scene_rng.uniform() < 0.3;
  c.scene.skin_tone = kSkinTones[scene_rng.below(6)];
  const double gain = lighting_gain(c.scene.lighting) * skin_gain(c.scene.skin_tone);
  const double motion_hz = scene_rng.uniform(0.1, 0.4);
  const double motion_phase = scene_rng.uniform(0.0, kTwoPi);

  Rng backbone = Rng(cfg.backbone_seed);
  Rng pixel_rng = Rng::derive(seed, "pyramid");
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    const std::size_t hw = cfg.levels[l].height * cfg.levels[l].width;
    const std::size_t win = cfg.windows[l];
    if (win == 0) throw ContractError("backbone window must be positive");
    std::vector<double> proj(hw * win);
    for (double& v : proj) v = backbone.normal() / std::sqrt(static_cast<double>(win));
    Tensor level({1, n, cfg.levels[l].height, cfg.levels[l].width});
    auto out = level.data();
    for (std::size_t t = 0; t < n; ++t) {
      const double drift = c.scene.motion ? kMotionAmp * std::sin(kTwoPi * motion_hz * static_cast<double>(t) / cfg.fs +
                                                                  motion_phase)
                                          : 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < win; ++k) {
          const auto src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(win / 2);
          const auto idx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(n - 1)));
          acc += proj[p * win + k] * c.bvp[idx];
        }
        const double noise = noiseless ? 0.0 : cfg.spatial_noise * pixel_rng.normal();
        out[t * hw + p] = gain * acc + drift + noise;
      }
    }
    c.pyramid.levels.push_back(std::move(level));
  }
  return c;
}

Psd welch_psd(std::span<const double> w, double fs) {
  const Prepared p = prepare(w, fs);
  Psd out;
  out.df = fs / static_cast<double>(p.nfft);
  out.segment = p.seg;
  out.power = welch_bins(p.x, p.seg, p.nfft, 0, p.nfft / 2);
  return out;
}

HrEstimate estimate_hr(std::span<const double> w, double fs) {
  const Prepared p = prepare(w, fs);
  const double df = fs / static_cast<double>(p.nfft);
  const auto k_lo = static_cast<std::size_t>(std::ceil(kBandLowHz / df));
  const auto k_hi = std::min(p.nfft / 2, static_cast<std::size_t>(std::floor(kBandHighHz / df)));
  if (k_lo > k_hi) throw EstimationError("sample rate leaves no bins inside the heart-rate band");
  const std::vector<double> psd = welch_bins(p.x, p.seg, p.nfft, k_lo, k_hi);
  std::size_t best = 0;
  for (std::size_t i = 1; i < psd.size(); ++i) {
    if (psd[i] > psd[best]) best = i;
  }
  if (!std::isfinite(psd[best]) || !(psd[best] > 0.0)) throw EstimationError("no finite spectral peak in band");
  HrEstimate e;
  e.peak_hz = static_cast<double>(k_lo + best) * df;
  e.bpm = 60.0 * e.peak_hz;
  e.resolution_hz = fs / static_cast<double>(p.seg);
  return e;
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ContractError("pearson_r needs equal-length non-empty lists");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw EstimationError("Pearson R is undefined for a zero-variance list");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MetricsReport metrics(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) {
    throw ContractError("metrics: " + std::to_string(pred.size()) + " predictions for " + std::to_string(gt.size()) +
                        " references");
  }
  if (pred.empty()) throw ContractError("metrics: empty lists");
  MetricsReport m;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(pred.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  // Rounding can leave sqrt(mean d^2) a hair under mean |d| when all |d| agree.
  m.rmse = std::max(m.rmse, m.mae);
  try {
    m.pearson_r = pearson_r(pred, gt);
  } catch (const EstimationError&) {
    m.pearson_r.reset();
  }
  return m;
}

std::string format_waveform_csv(const Waveform& w) {
  std::string out = "fs=" + fmt17(w.fs) + "\n";
  for (double v : w.samples) {
    out += fmt17(v);
    out += '\n';
  }
  return out;
}

Waveform parse_waveform_csv(const std::string& text) {
  Waveform w;
  bool have_header = false;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (!have_header) {
      if (line.substr(0, 3) != "fs=") {
        throw ParseError("waveform line " + std::to_string(line_no) + ": expected header 'fs=<rate>'");
      }
      if (!parse_double(trim(line.substr(3)), w.fs) || !(w.fs > 0.0) || !std::isfinite(w.fs)) {
        throw ParseError("waveform line " + std::to_string(line_no) + ": invalid sample rate");
      }
      have_header = true;
      continue;
    }
    double v = 0.0;
    if (!parse_double(line, v) || !std::isfinite(v)) {
      throw ParseError("waveform line " + std::to_string(line_no) + ": invalid sample '" + std::string(line) + "'");
    }
    w.samples.push_back(v);
  }
  if (!have_header) throw ParseError("waveform: missing 'fs=<rate>' header");
  if (w.samples.empty()) throw ParseError("waveform: no samples");
  return w;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_waveform(const std::filesystem::path& path, const Waveform& w) { write_text(path, format_waveform_csv(w)); }

Waveform read_waveform(const std::filesystem::path& path) {
  try {
    return parse_waveform_csv(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_pyramid(const std::filesystem::path& path, const aggregator::FeaturePyramid& p) {
  std::string out;
  for (const Tensor& level : p.levels) {
    json rec;
    rec["shape"] = level.shape();
    rec["values"] = level.vec();
    out += rec.dump();
    out += '\n';
  }
  write_text(path, out);
}

aggregator::FeaturePyramid read_pyramid(const std::filesystem::path& path) {
  aggregator::FeaturePyramid p;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json rec = json::parse(line);
      p.levels.emplace_back(rec.at("shape").get<Shape>(), rec.at("values").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return p;
}

std::string format_manifest(const std::vector<ClipRecord>& records) {
  std::string out;
  for (const ClipRecord& r : records) {
    json rec;
    rec["id"] = r.id;
    rec["bvp"] = r.bvp;
    rec["x_enc"] = r.x_enc;
    rec["pyramid"] = r.pyramid;
    rec["hr_bpm"] = r.hr_bpm;
    // JSON has no infinity; null stands for a noiseless clip.
    rec["snr_db"] = std::isfinite(r.snr_db) ? json(r.snr_db) : json(nullptr);
    rec["lighting"] = r.scene.lighting;
    rec["motion"] = r.scene.motion;
    rec["skin_tone"] = r.scene.skin_tone;
    rec["seed"] = r.seed;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<ClipRecord> parse_manifest(const std::string& text) {
  std::vector<ClipRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json rec = json::parse(line);
      ClipRecord r;
      r.id = rec.at("id").get<std::string>();
      r.bvp = rec.value("bvp", std::string());
      r.x_enc = rec.value("x_enc", std::string());
      r.pyramid = rec.value("pyramid", std::string());
      r.hr_bpm = rec.value("hr_bpm", 0.0);
      const json& snr = rec.contains("snr_db") ? rec.at("snr_db") : json(nullptr);
      r.snr_db = snr.is_null() ? std::numeric_limits<double>::infinity() : snr.get<double>();
      r.scene.lighting = rec.value("lighting", std::string("normal"));
      r.scene.motion = rec.value("motion", false);
      r.scene.skin_tone = rec.value("skin_tone", std::string("III"));
      r.seed = rec.value("seed", std::uint64_t{0});
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records) {
  write_text(path, format_manifest(records));
}

std::vector<ClipRecord> read_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace physkit::signal
