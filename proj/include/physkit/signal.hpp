// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physkit/aggregator.hpp"
#include "physkit/cue.hpp"

namespace physkit::signal {

/// Sampled waveform.
struct Waveform {
  double fs = 30.0;
  std::vector<double> samples;
};

/// Generator settings shared by every clip of a dataset.
struct SynthConfig {
  double fs = 30.0;
  std::size_t frames = 128;
  /// Signal-to-noise ratio in dB; +infinity disables all additive noise.
  double snr_db = 10.0;
  std::vector<aggregator::LevelShape> levels{{8, 8}, {4, 4}, {2, 2}};
  /// Sliding-window length of the backbone stub, one per level.
  std::vector<std::size_t> windows{9, 5, 3};
  /// Standard deviation of the per-pixel noise in the feature pyramid.
  double spatial_noise = 0.3;
  /// Seed of the backbone stub's fixed projection weights. Shared by all
  /// clips so the stub behaves like one pretrained network.
  std::uint64_t backbone_seed = 0x6261636b626f6e65ULL;
};

struct SyntheticClip {
  double hr_bpm = 0.0;
  double fs = 30.0;
  std::uint64_t seed = 0;
  std::vector<double> clean;  // noiseless two-harmonic pulse
  std::vector<double> bvp;    // ground-truth waveform y
  std::vector<double> x_enc;  // noisy backbone estimate
  cue::SceneMeta scene;
  /// One level per SynthConfig::levels entry, each 1 x T x H x W.
  aggregator::FeaturePyramid pyramid;
};

/// Requires hr_bpm in [45, 150], T >= 64 and fs above twice the second
/// harmonic. Deterministic in (hr_bpm, cfg, seed).
SyntheticClip gen_clip(double hr_bpm, const SynthConfig& cfg, std::uint64_t seed);

/// Mean power of a sequence.
double power(std::span<const double> x);
/// 10 log10(P(signal) / P(noisy - signal)).
double measured_snr_db(std::span<const double> signal, std::span<const double> noisy);

inline constexpr double kBandLowHz = 0.75;
inline constexpr double kBandHighHz = 2.5;

struct HrEstimate {
  double bpm = 0.0;
  double peak_hz = 0.0;
  /// Physical frequency resolution fs / segment length.
  double resolution_hz = 0.0;
};

/// PSD-peak heart rate: mean removal, Welch PSD with a periodic Hann window
/// (segment min(N, 256 fs / 30), 50% overlap, 4x zero padding), argmax of
/// the bins inside [0.75, 2.5] Hz. Needs at least 4 s of samples.
HrEstimate estimate_hr(std::span<const double> w, double fs);

/// Welch PSD on the zero-padded grid, bins k * fs / nfft for k < nfft / 2 + 1.
struct Psd {
  double df = 0.0;
  std::size_t segment = 0;
  std::vector<double> power;
};
Psd welch_psd(std::span<const double> w, double fs);

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  /// Empty when either list has zero variance.
  std::optional<double> pearson_r;
};

/// MAE and RMSE always; R when defined. Lists must be equal-length and
/// non-empty.
MetricsReport metrics(std::span<const double> pred, std::span<const double> gt);
/// Sample Pearson correlation; EstimationError when a list has zero variance.
double pearson_r(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Files.

/// `fs=<rate>` header, then one decimal sample per line.
std::string format_waveform_csv(const Waveform& w);
Waveform parse_waveform_csv(const std::string& text);
void write_waveform(const std::filesystem::path& path, const Waveform& w);
Waveform read_waveform(const std::filesystem::path& path);

/// Pyramid file: one JSON record per level with "shape" and "values".
void write_pyramid(const std::filesystem::path& path, const aggregator::FeaturePyramid& p);
aggregator::FeaturePyramid read_pyramid(const std::filesystem::path& path);

/// One manifest line. Paths are relative to the manifest's directory.
struct ClipRecord {
  std::string id;
  std::string bvp;
  std::string x_enc;
  std::string pyramid;
  double hr_bpm = 0.0;
  double snr_db = 0.0;
  cue::SceneMeta scene;
  std::uint64_t seed = 0;
};

std::string format_manifest(const std::vector<ClipRecord>& records);
std::vector<ClipRecord> parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path);

/// Reads the text of a file; IoError when it cannot be opened.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace physkit::signal
