#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "epg/multigraph.hpp"
#include "epg/rng.hpp"
#include "epg/scene.hpp"
#include "epg/tensor.hpp"

namespace epg::test {

inline double random_value(Rng& rng, double lo, double hi) { return uniform(rng, lo, hi); }

/// Multiple of 2^-20 in [lo, hi]; sums and differences of such values with
/// magnitudes below 2^32 are exact in double precision.
inline double dyadic(Rng& rng, double lo, double hi) {
  return std::round(uniform(rng, lo, hi) * 1048576.0) / 1048576.0;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), random_values(rng, n), requires_grad);
}

/// Ego-plus-neighbors sample with `n` agents, all fully observed, straight-line
/// motion given by per-agent positions at the last observed frame and
/// per-frame displacement.
inline Sample straight_line_sample(const std::vector<Vec2>& now, const std::vector<Vec2>& step,
                                   const std::vector<Category>& categories, std::size_t obs_points,
                                   std::size_t pred_frames) {
  Sample s;
  s.recording = "fixture";
  s.frame_rate = 2.0;
  s.obs_points = obs_points;
  s.pred_frames = pred_frames;
  const std::size_t n = now.size();
  s.categories = categories;
  for (std::size_t i = 0; i < n; ++i) s.agent_ids.push_back(static_cast<std::int64_t>(i));
  s.observed.assign(n * obs_points, Vec2{});
  s.future.assign(n * pred_frames, Vec2{});
  s.obs_mask.assign(n * obs_points, 1);
  s.fut_mask.assign(n * pred_frames, 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < obs_points; ++t) {
      const double back = static_cast<double>(obs_points - 1 - t);
      s.obs(i, t) = now[i] - back * step[i];
    }
    for (std::size_t t = 0; t < pred_frames; ++t)
      s.fut(i, t) = now[i] + static_cast<double>(t + 1) * step[i];
  }
  s.plan.assign(s.future.begin(), s.future.begin() + static_cast<std::ptrdiff_t>(pred_frames));
  return s;
}

struct SceneOptions {
  std::size_t max_agents = 20;
  std::size_t obs_points = 6;
  std::size_t pred_frames = 6;
  double extent = 30.0;
  bool dyadic = false;
};

/// Random scene for graph tests: some agents stationary, some absent at the
/// last frame, random categories and a random plan endpoint.
inline Sample random_scene(Rng& rng, const SceneOptions& o = {}) {
  const std::size_t n = 1 + static_cast<std::size_t>(rng() % o.max_agents);
  auto coord = [&](double lo, double hi) { return o.dyadic ? dyadic(rng, lo, hi) : uniform(rng, lo, hi); };
  Sample s;
  s.recording = "random";
  s.frame_rate = 2.0;
  s.obs_points = o.obs_points;
  s.pred_frames = o.pred_frames;
  s.observed.assign(n * o.obs_points, Vec2{});
  s.future.assign(n * o.pred_frames, Vec2{});
  s.obs_mask.assign(n * o.obs_points, 0);
  s.fut_mask.assign(n * o.pred_frames, 0);
  for (std::size_t i = 0; i < n; ++i) {
    s.agent_ids.push_back(static_cast<std::int64_t>(i));
    s.categories.push_back(i == 0 ? Category::Vehicle : static_cast<Category>(rng() % 4));
    const bool absent_now = i > 0 && rng() % 8 == 0;
    const bool stationary = rng() % 6 == 0;
    const Vec2 now{coord(-o.extent, o.extent), coord(-o.extent, o.extent)};
    const Vec2 step = stationary ? Vec2{} : Vec2{coord(-2.0, 2.0), coord(-2.0, 2.0)};
    for (std::size_t t = 0; t < o.obs_points; ++t) {
      if (absent_now && t == o.obs_points - 1) continue;
      const double back = static_cast<double>(o.obs_points - 1 - t);
      s.obs(i, t) = now - back * step;
      s.obs_mask[i * o.obs_points + t] = 1;
    }
    for (std::size_t t = 0; t < o.pred_frames; ++t) {
      s.fut(i, t) = now + static_cast<double>(t + 1) * step;
      s.fut_mask[i * o.pred_frames + t] = 1;
    }
  }
  for (std::size_t t = 0; t < o.pred_frames; ++t)
    s.plan.push_back({coord(-o.extent, o.extent), coord(-o.extent, o.extent)});
  return s;
}

// ---- graph oracles: pairwise loops written from the geometric definitions --

inline bool oracle_present(const Sample& s, std::size_t i) {
  return s.obs_mask[i * s.obs_points + s.obs_points - 1] != 0;
}

inline bool oracle_heading(const Sample& s, std::size_t i, double& hx, double& hy) {
  const std::size_t t = s.obs_points - 1;
  if (!s.obs_mask[i * s.obs_points + t] || !s.obs_mask[i * s.obs_points + t - 1]) return false;
  hx = s.observed[i * s.obs_points + t].x - s.observed[i * s.obs_points + t - 1].x;
  hy = s.observed[i * s.obs_points + t].y - s.observed[i * s.obs_points + t - 1].y;
  return std::hypot(hx, hy) >= 1e-4;
}

inline std::vector<double> oracle_distance(const Sample& s, double threshold) {
  const std::size_t n = s.agent_count(), t = s.obs_points - 1;
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !oracle_present(s, i) || !oracle_present(s, j)) continue;
      const double dx = s.observed[i * s.obs_points + t].x - s.observed[j * s.obs_points + t].x;
      const double dy = s.observed[i * s.obs_points + t].y - s.observed[j * s.obs_points + t].y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < 1e-9)
        e[i * n + j] = 1e9;
      else if (d <= threshold)
        e[i * n + j] = 1.0 / d;
    }
  return e;
}

/// Bearing-angle form: cos of the angle between heading and the direction to
/// j, over the distance, for agents in the front half-plane.
inline std::vector<double> oracle_visibility(const Sample& s) {
  const std::size_t n = s.agent_count(), t = s.obs_points - 1;
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double hx = 0, hy = 0;
    if (!oracle_heading(s, i, hx, hy)) continue;
    const double heading = std::atan2(hy, hx);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !oracle_present(s, j)) continue;
      const double rx = s.observed[j * s.obs_points + t].x - s.observed[i * s.obs_points + t].x;
      const double ry = s.observed[j * s.obs_points + t].y - s.observed[i * s.obs_points + t].y;
      const double d = std::hypot(rx, ry);
      if (d < 1e-9) continue;
      const double c = std::cos(std::atan2(ry, rx) - heading);
      if (c > 0.0) e[i * n + j] = c / d;
    }
  }
  return e;
}

/// Angle test with acos, edges only into the ego column.
inline std::vector<double> oracle_planning(const Sample& s, double beta_degrees) {
  const std::size_t n = s.agent_count(), t = s.obs_points - 1;
  std::vector<double> e(n * n, 0.0);
  const Vec2 goal = s.plan.back();
  for (std::size_t i = 1; i < n; ++i) {
    double hx = 0, hy = 0;
    if (!oracle_heading(s, i, hx, hy)) continue;
    const double rx = goal.x - s.observed[i * s.obs_points + t].x;
    const double ry = goal.y - s.observed[i * s.obs_points + t].y;
    const double d = std::hypot(rx, ry);
    if (d < 1e-9) continue;
    const double c = std::clamp((hx * rx + hy * ry) / (std::hypot(hx, hy) * d), -1.0, 1.0);
    const double alpha = std::acos(c) * 180.0 / std::numbers::pi;
    if (alpha <= beta_degrees) e[i * n + 0] = 1.0;
  }
  return e;
}

inline std::vector<double> oracle_category(const Sample& s) {
  const std::size_t n = s.agent_count();
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && oracle_present(s, i) && oracle_present(s, j) && s.categories[i] == s.categories[j])
        e[i * n + j] = 1.0;
  return e;
}

inline double max_abs_diff(const Matrix& m, const std::vector<double>& oracle) {
  double worst = 0.0;
  for (std::size_t k = 0; k < oracle.size(); ++k)
    worst = std::max(worst, std::abs(m.values()[k] - oracle[k]));
  return worst;
}

inline bool equals_exactly(const Matrix& m, const std::vector<double>& oracle) {
  return std::equal(m.values().begin(), m.values().end(), oracle.begin(), oracle.end());
}

/// Applies p -> R p + c to every unmasked position and the plan.
inline Sample transform_sample(const Sample& in, double angle, Vec2 shift) {
  Sample s = in;
  const double c = std::cos(angle), sn = std::sin(angle);
  auto f = [&](Vec2 p) { return Vec2{c * p.x - sn * p.y + shift.x, sn * p.x + c * p.y + shift.y}; };
  for (std::size_t i = 0; i < s.agent_count(); ++i) {
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (s.obs_present(i, t)) s.obs(i, t) = f(s.obs(i, t));
    for (std::size_t t = 0; t < s.pred_frames; ++t)
      if (s.fut_present(i, t)) s.fut(i, t) = f(s.fut(i, t));
  }
  for (auto& p : s.plan) p = f(p);
  return s;
}

inline Sample translate_sample(const Sample& in, Vec2 shift) {
  Sample s = in;
  for (std::size_t i = 0; i < s.agent_count(); ++i) {
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (s.obs_present(i, t)) s.obs(i, t) = s.obs(i, t) + shift;
    for (std::size_t t = 0; t < s.pred_frames; ++t)
      if (s.fut_present(i, t)) s.fut(i, t) = s.fut(i, t) + shift;
  }
  for (auto& p : s.plan) p = p + shift;
  return s;
}

/// Reorders agents 1..N-1 by `perm` (perm[0] must be 0).
inline Sample permute_agents(const Sample& in, const std::vector<std::size_t>& perm) {
  Sample s = in;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const std::size_t src = perm[k];
    s.agent_ids[k] = in.agent_ids[src];
    s.categories[k] = in.categories[src];
    for (std::size_t t = 0; t < in.obs_points; ++t) {
      s.obs(k, t) = in.obs(src, t);
      s.obs_mask[k * in.obs_points + t] = in.obs_mask[src * in.obs_points + t];
    }
    for (std::size_t t = 0; t < in.pred_frames; ++t) {
      s.fut(k, t) = in.fut(src, t);
      s.fut_mask[k * in.pred_frames + t] = in.fut_mask[src * in.pred_frames + t];
    }
  }
  return s;
}

// ---- recurrent reference -------------------------------------------------

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline GruParams random_gru(Rng& rng, std::size_t cx, std::size_t ch, bool requires_grad) {
  GruParams p;
  p.w_z = random_tensor(rng, {ch, cx}, requires_grad);
  p.w_r = random_tensor(rng, {ch, cx}, requires_grad);
  p.w_h = random_tensor(rng, {ch, cx}, requires_grad);
  p.u_z = random_tensor(rng, {ch, ch}, requires_grad);
  p.u_r = random_tensor(rng, {ch, ch}, requires_grad);
  p.u_h = random_tensor(rng, {ch, ch}, requires_grad);
  p.b_z = random_tensor(rng, {ch}, requires_grad);
  p.b_r = random_tensor(rng, {ch}, requires_grad);
  p.b_h = random_tensor(rng, {ch}, requires_grad);
  return p;
}

// Scalar-by-scalar reference for the GRU convention.
inline std::vector<double> gru_reference(const std::vector<double>& x, const std::vector<double>& h,
                                  const GruParams& p) {
  const std::size_t cx = x.size(), ch = h.size();
  auto w = [&](const Tensor& t, std::size_t i, std::size_t j, std::size_t cols) { return t.data()[i * cols + j]; };
  std::vector<double> r(ch), out(ch);
  for (std::size_t i = 0; i < ch; ++i) {
    double a = p.b_r.data()[i];
    for (std::size_t j = 0; j < cx; ++j) a += w(p.w_r, i, j, cx) * x[j];
    for (std::size_t j = 0; j < ch; ++j) a += w(p.u_r, i, j, ch) * h[j];
    r[i] = sigmoid(a);
  }
  for (std::size_t i = 0; i < ch; ++i) {
    double az = p.b_z.data()[i], ah = p.b_h.data()[i];
    for (std::size_t j = 0; j < cx; ++j) {
      az += w(p.w_z, i, j, cx) * x[j];
      ah += w(p.w_h, i, j, cx) * x[j];
    }
    for (std::size_t j = 0; j < ch; ++j) {
      az += w(p.u_z, i, j, ch) * h[j];
      ah += w(p.u_h, i, j, ch) * r[j] * h[j];
    }
    const double z = sigmoid(az);
    out[i] = (1.0 - z) * h[i] + z * std::tanh(ah);
  }
  return out;
}

}  // namespace epg::test
