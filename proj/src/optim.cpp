// SPDX-License-Identifier: Apache-2.0
#include "physkit/optim.hpp"

#include <cmath>

#include "physkit/error.hpp"

namespace physkit {

void adam_step(ParamStore& store, const AdamConfig& cfg, long step) {
  if (step < 1) throw ContractError("adam_step: step index must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (auto& [_, p] : store) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.adam_m[i] / bc1;
      const double v_hat = p.adam_v[i] / bc2;
      if (cfg.weight_decay != 0.0) p.value[i] *= decay;
      p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace physkit
