// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hiertag/autodiff.hpp"

namespace hiertag {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators, one pair per registered parameter, in
// registration order.
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

AdamState make_adam_state(std::span<Parameter* const> params, AdamOptions options = {});

// One bias-corrected ADAM update using each parameter's current grad.
void adam_step(std::span<Parameter* const> params, AdamState& state);

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

double grad_norm(std::span<Parameter* const> params);

}  // namespace hiertag
