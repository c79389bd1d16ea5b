// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "physkit/autodiff.hpp"

namespace physkit {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Denominator floor for the relative error, so entries whose true
  /// gradient is ~0 are judged by absolute error instead.
  double floor = 1e-6;
  /// Elements checked per parameter; 0 checks every element.
  std::size_t max_per_param = 0;
  /// Only parameters whose name starts with this prefix are perturbed.
  std::string prefix;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

using ScalarFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `f` with central differences,
/// element by element, and reports the worst relative error.
///
/// `f` must be deterministic: it is evaluated twice at the base point and a
/// bitwise mismatch raises ContractError.
GradCheckResult grad_check(const ScalarFn& f, ParamStore& store, const GradCheckOptions& opts = {});

}  // namespace physkit
