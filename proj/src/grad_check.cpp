// SPDX-License-Identifier: Apache-2.0

#include "hiertag/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hiertag {

namespace {

double evaluate(const LossClosure& forward) {
  Tape tape;
  return forward(tape).value()[0];
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t max_samples,
                                        std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_samples) return idx;
  // Partial Fisher-Yates; integer-only so the sample is stable across stdlibs.
  for (std::size_t i = 0; i < max_samples; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_samples);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const LossClosure& forward, std::span<Parameter* const> params,
                               const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(forward(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckEntry entry;
    entry.name = p.name;
    for (std::size_t i : sample_indices(p.value.size(), options.max_samples_per_param, rng)) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = evaluate(forward);
      p.value[i] = saved - options.step;
      const double down = evaluate(forward);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = relative_error(analytic[k][i], numeric, options.denominator_floor);
      ++entry.checked;
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.worst_analytic = analytic[k][i];
        entry.worst_numeric = numeric;
      }
    }
    entry.passed = entry.max_rel_error < options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hiertag
