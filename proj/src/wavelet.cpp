// SPDX-License-Identifier: Apache-2.0
#include "physkit/wavelet.hpp"

#include <cmath>
#include <numbers>

#include "physkit/error.hpp"

namespace physkit::wavelet {

namespace {

// Quadrature mirror: hi[n] = (-1)^n lo[L-1-n].
std::vector<double> mirror(const std::vector<double>& lo) {
  const std::size_t n = lo.size();
  std::vector<double> hi(n);
  for (std::size_t i = 0; i < n; ++i) hi[i] = (i % 2 == 0 ? 1.0 : -1.0) * lo[n - 1 - i];
  return hi;
}

WaveletBasis orthogonal(std::string name, std::vector<double> lo) {
  WaveletBasis b;
  b.name = std::move(name);
  b.dec_hi = mirror(lo);
  b.dec_lo = std::move(lo);
  b.rec_lo = b.dec_lo;
  b.rec_hi = b.dec_hi;
  return b;
}

void analysis_step(std::span<const double> x, const WaveletBasis& b, std::vector<double>& lo,
                   std::vector<double>& hi) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  lo.assign(half, 0.0);
  hi.assign(half, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t t = 0; t < b.dec_lo.size(); ++t) {
      const double v = x[(2 * k + t) % n];
      a += b.dec_lo[t] * v;
      d += b.dec_hi[t] * v;
    }
    lo[k] = a;
    hi[k] = d;
  }
}

std::vector<double> synthesis_step(const std::vector<double>& lo, const std::vector<double>& hi,
                                   const WaveletBasis& b) {
  const std::size_t half = lo.size();
  const std::size_t n = 2 * half;
  std::vector<double> x(n, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    for (std::size_t t = 0; t < b.rec_lo.size(); ++t) {
      x[(2 * k + t) % n] += b.rec_lo[t] * lo[k] + b.rec_hi[t] * hi[k];
    }
  }
  return x;
}

}  // namespace

WaveletBasis WaveletBasis::haar() {
  const double s = 1.0 / std::numbers::sqrt2;
  return orthogonal("haar", {s, s});
}

WaveletBasis WaveletBasis::db4() {
  const double r3 = std::sqrt(3.0);
  const double norm = 4.0 * std::numbers::sqrt2;
  return orthogonal("db4", {(1.0 + r3) / norm, (3.0 + r3) / norm, (3.0 - r3) / norm, (1.0 - r3) / norm});
}

WaveletBasis WaveletBasis::from_name(std::string_view name) {
  if (name == "haar") return haar();
  if (name == "db4") return db4();
  throw ContractError("unknown wavelet basis '" + std::string(name) + "' (expected haar or db4)");
}

Decomposition dwt(std::span<const double> x, const WaveletBasis& basis, int level) {
  if (level < 1) throw ContractError("dwt: level must be >= 1, got " + std::to_string(level));
  const std::size_t block = std::size_t{1} << level;
  if (x.empty() || x.size() % block != 0) {
    throw ShapeError("dwt: length " + std::to_string(x.size()) + " is not a positive multiple of 2^" +
                     std::to_string(level));
  }
  Decomposition d;
  d.level = level;
  d.length = x.size();
  std::vector<double> approx(x.begin(), x.end());
  for (int j = 0; j < level; ++j) {
    std::vector<double> lo, hi;
    analysis_step(approx, basis, lo, hi);
    d.dc.push_back(std::move(hi));
    approx = std::move(lo);
  }
  d.ac = std::move(approx);
  return d;
}

std::vector<double> idwt(const Decomposition& d, const WaveletBasis& basis) {
  if (d.level < 1 || d.dc.size() != static_cast<std::size_t>(d.level)) {
    throw ShapeError("idwt: decomposition has " + std::to_string(d.dc.size()) + " detail bands for level " +
                     std::to_string(d.level));
  }
  const std::size_t block = std::size_t{1} << d.level;
  if (d.length == 0 || d.length % block != 0 || d.ac.size() != d.length / block) {
    throw ShapeError("idwt: approximation band length " + std::to_string(d.ac.size()) +
                     " inconsistent with length " + std::to_string(d.length));
  }
  for (int j = 0; j < d.level; ++j) {
    if (d.dc[j].size() != d.length >> (j + 1)) {
      throw ShapeError("idwt: detail band " + std::to_string(j + 1) + " has length " +
                       std::to_string(d.dc[j].size()) + ", expected " + std::to_string(d.length >> (j + 1)));
    }
  }
  std::vector<double> approx = d.ac;
  for (int j = d.level; j-- > 0;) approx = synthesis_step(approx, d.dc[j], basis);
  return approx;
}

}  // namespace physkit::wavelet
