#include "epg/optim.hpp"

#include <algorithm>
#include <cmath>

#include "epg/error.hpp"

namespace epg {

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].has_grad())
      throw UsageError("adam_step: parameter " + std::to_string(i) +
                       (params[i].name().empty() ? "" : " (" + params[i].name() + ")") +
                       " has no gradient");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw UsageError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, given " + std::to_string(params.size()));

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const auto g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != w.size())
      throw UsageError("adam_step: moment buffer for parameter " + std::to_string(i) +
                       " does not match its shape");
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::vector<Tensor>& params, double epsilon, double tolerance) {
  for (auto& p : params) p.zero_grad();
  const Tensor base = loss_fn();
  if (!std::isfinite(base.item())) throw NumericError("gradient check: non-finite base loss");
  base.backward();

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    GradCheckEntry entry{p.name().empty() ? "param" + std::to_string(pi) : p.name(), 0.0, 0.0};
    auto w = p.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double saved = w[k];
      w[k] = saved + epsilon;
      const double up = loss_fn().item();
      w[k] = saved - epsilon;
      const double down = loss_fn().item();
      w[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("gradient check: non-finite loss perturbing parameter " +
                           std::to_string(pi) + " element " + std::to_string(k));
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic[k] - numeric) / denom);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(analytic[k]));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace epg
