#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epg/tensor.hpp"

namespace epg {

/// Adam moments for an ordered parameter list. Buffers are laid out in the
/// same order as the parameters passed to adam_step.
struct AdamState {
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update. Every parameter must carry a gradient;
/// moment buffers are created on the first call.
void adam_step(std::vector<Tensor>& params, AdamState& state);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares backward() gradients of `loss_fn` against central differences
/// (f(w+e) - f(w-e)) / 2e for every element of every parameter. Relative error
/// uses max(|analytic|, |numeric|, 1e-8) as the denominator. `loss_fn` must
/// rebuild its graph from the current parameter values on every call.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::vector<Tensor>& params, double epsilon, double tolerance);

}  // namespace epg
