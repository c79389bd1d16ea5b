// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "physkit/autodiff.hpp"
#include "physkit/wavelet.hpp"

namespace physkit::dds {

/// Dual-domain stationarization settings. The blend weight is stored
/// unconstrained and mapped through a sigmoid, so beta() is always in [0, 1];
/// beta_raw = -inf / +inf forces beta to exactly 0 / 1.
struct DdsParams {
  double alpha = 0.8;
  double beta_raw = 0.0;
  double epsilon = 1e-5;
  int level = 3;
  wavelet::WaveletBasis basis = wavelet::WaveletBasis::haar();

  double beta() const noexcept;
  /// Inverse of the sigmoid: the beta_raw that yields `beta` exactly at the
  /// endpoints 0 and 1.
  static double raw_for_beta(double beta);
  void validate() const;
};

struct Standardized {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // population (1/N) standard deviation
};

/// (x - mean) / (stddev + eps). Requires at least two samples.
Standardized standardize(std::span<const double> x, double eps = 1e-5);

/// z[0] = x[0], z[i] = alpha x[i] + (1 - alpha) z[i-1]; alpha in (0, 1].
std::vector<double> ema_smooth(std::span<const double> x, double alpha);

struct DdsTrace {
  double mean = 0.0;
  double stddev = 0.0;
  double beta = 0.0;
  std::vector<double> standardized;
  std::vector<double> z_time;
  std::vector<double> z_fre;
  std::vector<double> z;
};

/// Time path: ema(standardize(x)). Frequency path: the input is edge-padded
/// to a multiple of 2^level, decomposed, each band is standardized and
/// smoothed on its own, then reconstructed and trimmed. The two paths are
/// blended as (1 - beta) z_time + beta z_fre.
DdsTrace dds_forward(std::span<const double> x, const DdsParams& p);

/// Differentiable blend for batched use: `beta_raw` is a one-element Var,
/// `z_time` and `z_fre` are equally shaped data tensors.
Var blend(const Var& beta_raw, const Tensor& z_time, const Tensor& z_fre);

struct StationarityReport {
  std::size_t length = 0;
  double mean = 0.0;
  double variance = 0.0;
  /// alpha / (2 - alpha): variance of an EMA of unit-variance white noise.
  double theoretical_variance = 0.0;
  /// Normalized autocorrelation at lags 1..K (index 0 is lag 1).
  std::vector<double> autocorr;
  std::vector<double> autocorr_first_half;
  std::vector<double> autocorr_second_half;
  /// max_k |first_half[k] - second_half[k]|
  double half_disagreement = 0.0;
  /// Set when the series has (numerically) zero variance; autocorrelations
  /// are reported as 0 in that case.
  bool degenerate = false;
};

/// Requires z.size() >= 8 * max_lag and max_lag >= 1.
StationarityReport stationarity_report(std::span<const double> z, std::size_t max_lag, double alpha = 0.8);

}  // namespace physkit::dds
