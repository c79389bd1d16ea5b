// SPDX-License-Identifier: Apache-2.0
#include "physkit/dds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "physkit/error.hpp"

namespace physkit::dds {

namespace {

// No length precondition: wavelet bands may be a single coefficient.
Standardized standardize_any(std::span<const double> x, double eps) {
  Standardized s;
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  s.mean = mu;
  s.stddev = std::sqrt(var);
  s.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s.values[i] = (x[i] - mu) / (s.stddev + eps);
  return s;
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ContractError("smoothing factor alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

struct HalfStats {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> autocorr;
  bool degenerate = false;
};

HalfStats lag_stats(std::span<const double> z, std::size_t max_lag) {
  HalfStats h;
  const double n = static_cast<double>(z.size());
  for (double v : z) h.mean += v;
  h.mean /= n;
  double ss = 0.0;
  for (double v : z) ss += (v - h.mean) * (v - h.mean);
  h.variance = ss / n;
  h.degenerate = h.variance <= 1e-24 * std::max(1.0, h.mean * h.mean);
  h.autocorr.assign(max_lag, 0.0);
  if (h.degenerate) return h;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i + k < z.size(); ++i) acc += (z[i] - h.mean) * (z[i + k] - h.mean);
    h.autocorr[k - 1] = acc / ss;
  }
  return h;
}

}  // namespace

double DdsParams::beta() const noexcept { return 1.0 / (1.0 + std::exp(-beta_raw)); }

double DdsParams::raw_for_beta(double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("beta must lie in [0, 1]");
  if (beta == 0.0) return -std::numeric_limits<double>::infinity();
  if (beta == 1.0) return std::numeric_limits<double>::infinity();
  return std::log(beta / (1.0 - beta));
}

void DdsParams::validate() const {
  check_alpha(alpha);
  if (!(epsilon > 0.0)) throw ContractError("dds epsilon must be positive");
  if (level < 1) throw ContractError("dds decomposition level must be >= 1");
  if (std::isnan(beta_raw)) throw ContractError("dds beta_raw is NaN");
}

Standardized standardize(std::span<const double> x, double eps) {
  if (x.size() < 2) throw ContractError("standardize needs at least 2 samples, got " + std::to_string(x.size()));
  return standardize_any(x, eps);
}

std::vector<double> ema_smooth(std::span<const double> x, double alpha) {
  check_alpha(alpha);
  std::vector<double> z(x.size());
  if (x.empty()) return z;
  z[0] = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) z[i] = alpha * x[i] + (1.0 - alpha) * z[i - 1];
  return z;
}

DdsTrace dds_forward(std::span<const double> x, const DdsParams& p) {
  p.validate();
  if (x.empty()) throw ContractError("dds_forward: empty input");
  const std::size_t block = std::size_t{1} << p.level;
  if (x.size() < std::max<std::size_t>(block, 2)) {
    throw ContractError("dds_forward: length " + std::to_string(x.size()) + " shorter than 2^level = " +
                        std::to_string(block));
  }
  DdsTrace tr;
  Standardized s = standardize(x, p.epsilon);
  tr.mean = s.mean;
  tr.stddev = s.stddev;
  tr.z_time = ema_smooth(s.values, p.alpha);
  tr.standardized = std::move(s.values);

  std::vector<double> padded(x.begin(), x.end());
  padded.resize((x.size() + block - 1) / block * block, x.back());
  wavelet::Decomposition d = wavelet::dwt(padded, p.basis, p.level);
  d.ac = ema_smooth(standardize_any(d.ac, p.epsilon).values, p.alpha);
  for (auto& band : d.dc) band = ema_smooth(standardize_any(band, p.epsilon).values, p.alpha);
  tr.z_fre = wavelet::idwt(d, p.basis);
  tr.z_fre.resize(x.size());

  tr.beta = p.beta();
  const double keep = 1.0 - tr.beta;
  tr.z.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) tr.z[i] = tr.z_time[i] * keep + tr.z_fre[i] * tr.beta;
  return tr;
}

Var blend(const Var& beta_raw, const Tensor& z_time, const Tensor& z_fre) {
  if (beta_raw.value().numel() != 1) throw ShapeError("dds blend: beta_raw must hold one element");
  if (z_time.shape() != z_fre.shape()) {
    throw ShapeError("dds blend: z_time " + shape_str(z_time.shape()) + " vs z_fre " + shape_str(z_fre.shape()));
  }
  Tape& tape = beta_raw.tape();
  const Var beta = sigmoid(beta_raw);
  const Var keep = affine(beta, -1.0, 1.0);
  return add(mul(tape.constant(z_time), keep), mul(tape.constant(z_fre), beta));
}

StationarityReport stationarity_report(std::span<const double> z, std::size_t max_lag, double alpha) {
  check_alpha(alpha);
  if (max_lag < 1) throw ContractError("stationarity_report: max lag must be >= 1");
  if (z.size() < 8 * max_lag) {
    throw ContractError("stationarity_report: need at least 8*K = " + std::to_string(8 * max_lag) +
                        " samples, got " + std::to_string(z.size()));
  }
  StationarityReport r;
  r.length = z.size();
  r.theoretical_variance = alpha / (2.0 - alpha);
  const HalfStats full = lag_stats(z, max_lag);
  const std::size_t half = z.size() / 2;
  const HalfStats first = lag_stats(z.subspan(0, half), max_lag);
  const HalfStats second = lag_stats(z.subspan(half, half), max_lag);
  r.mean = full.mean;
  r.variance = full.variance;
  r.degenerate = full.degenerate;
  r.autocorr = full.autocorr;
  r.autocorr_first_half = first.autocorr;
  r.autocorr_second_half = second.autocorr;
  for (std::size_t k = 0; k < max_lag; ++k) {
    r.half_disagreement = std::max(r.half_disagreement, std::abs(first.autocorr[k] - second.autocorr[k]));
  }
  return r;
}

}  // namespace physkit::dds
