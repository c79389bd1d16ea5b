// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "physkit/params.hpp"

namespace physkit {

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update over every trainable parameter, with decoupled weight
/// decay (the value is scaled by 1 - lr*wd before the moment step).
/// `step` is the 1-based update count used for bias correction.
void adam_step(ParamStore& store, const AdamConfig& cfg, long step);

}  // namespace physkit
