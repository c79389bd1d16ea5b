// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace physkit::wavelet {

/// Orthogonal two-channel filter bank.
///
/// Analysis computes a[k] = sum_n lo[n] x[(2k+n) mod N] (likewise for hi);
/// synthesis scatters each coefficient back through the synthesis filters at
/// the same positions, which is the exact inverse for orthogonal banks.
struct WaveletBasis {
  std::string name;
  std::vector<double> dec_lo;
  std::vector<double> dec_hi;
  std::vector<double> rec_lo;
  std::vector<double> rec_hi;

  static WaveletBasis haar();
  /// Four-tap Daubechies filter (two vanishing moments).
  static WaveletBasis db4();
  /// "haar" or "db4"; anything else is a ContractError.
  static WaveletBasis from_name(std::string_view name);
};

/// Multi-level coefficients. dc[0] is the finest band (length N/2), dc[J-1]
/// the coarsest (length N/2^J); ac has length N/2^J.
struct Decomposition {
  std::vector<double> ac;
  std::vector<std::vector<double>> dc;
  int level = 0;
  std::size_t length = 0;
};

/// Periodic-extension DWT. N must be divisible by 2^level and level >= 1.
Decomposition dwt(std::span<const double> x, const WaveletBasis& basis, int level);

/// Inverse cascade; band lengths must agree with level and length.
std::vector<double> idwt(const Decomposition& d, const WaveletBasis& basis);

}  // namespace physkit::wavelet
