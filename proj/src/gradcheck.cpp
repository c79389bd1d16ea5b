// SPDX-License-Identifier: Apache-2.0
#include "physkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape(false);
  return f(tape).value().item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, ParamStore& store, const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  double base = 0.0;
  {
    Tape tape;
    const Var loss = f(tape);
    base = loss.value().item();
    backward(loss, store);
  }
  if (const double again = evaluate(f); again != base) {
    throw ContractError("grad_check: function is not deterministic (fix its seed)");
  }

  GradCheckResult result;
  Rng rng = Rng::derive(opts.sample_seed, "grad_check");
  for (auto& [name, p] : store) {
    if (!p.trainable || !name.starts_with(opts.prefix)) continue;
    const Tensor analytic = p.grad;
    std::vector<std::size_t> indices(p.value.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (opts.max_per_param != 0 && indices.size() > opts.max_per_param) {
      for (std::size_t i = 0; i < opts.max_per_param; ++i) {
        std::swap(indices[i], indices[i + rng.below(indices.size() - i)]);
      }
      indices.resize(opts.max_per_param);
    }
    for (std::size_t idx : indices) {
      const double orig = p.value[idx];
      p.value[idx] = orig + opts.eps;
      const double up = evaluate(f);
      p.value[idx] = orig - opts.eps;
      const double down = evaluate(f);
      p.value[idx] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (!(rel <= result.max_rel_error)) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = idx;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace physkit
