// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checker.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hiertag/autodiff.hpp"

namespace hiertag {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Entries with both gradients below this magnitude are compared on an
  // absolute scale of `denominator_floor` instead of relative to themselves.
  double denominator_floor = 1e-6;
  std::size_t max_samples_per_param = 64;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Records the forward pass on the given tape and returns the scalar loss.
using LossClosure = std::function<Var(Tape&)>;

double relative_error(double analytic, double numeric, double floor);

GradCheckReport gradient_check(const LossClosure& forward, std::span<Parameter* const> params,
                               const GradCheckOptions& options = {});

}  // namespace hiertag
