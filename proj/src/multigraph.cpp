#include "epg/multigraph.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace epg {

std::string_view graph_name(GraphKind g) {
  switch (g) {
    case GraphKind::Distance: return "distance";
    case GraphKind::Visibility: return "visibility";
    case GraphKind::Planning: return "planning";
    case GraphKind::Category: return "category";
  }
  return "unknown";
}

const Matrix& AdjacencySet::get(GraphKind g) const {
  switch (g) {
    case GraphKind::Distance: return distance;
    case GraphKind::Visibility: return visibility;
    case GraphKind::Planning: return planning;
    case GraphKind::Category: break;
  }
  return category;
}

Matrix& AdjacencySet::get(GraphKind g) {
  return const_cast<Matrix&>(static_cast<const AdjacencySet&>(*this).get(g));
}

namespace {
bool present_now(const Sample& s, std::size_t i) { return s.obs_present(i, s.last_obs()); }
}  // namespace

std::vector<MotionDirection> motion_directions(const Sample& s) {
  const std::size_t t = s.last_obs();
  std::vector<MotionDirection> out(s.agent_count());
  for (std::size_t i = 0; i < s.agent_count(); ++i) {
    if (t == 0 || !s.obs_present(i, t) || !s.obs_present(i, t - 1)) continue;
    out[i].d = s.obs(i, t) - s.obs(i, t - 1);
    out[i].valid = norm(out[i].d) >= kMotionEpsilon;
  }
  return out;
}

Matrix build_distance_graph(const Sample& s, double threshold, bool* coincident) {
  const std::size_t n = s.agent_count(), t = s.last_obs();
  Matrix e(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!present_now(s, i)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !present_now(s, j)) continue;
      const double dist = norm(s.obs(i, t) - s.obs(j, t));
      if (dist < kCoincidentDistance) {
        e(i, j) = kCoincidentWeightCap;
        if (coincident) *coincident = true;
      } else if (dist <= threshold) {
        e(i, j) = 1.0 / dist;
      }
    }
  }
  return e;
}

Matrix build_visibility_graph(const Sample& s) {
  const std::size_t n = s.agent_count(), t = s.last_obs();
  const auto dirs = motion_directions(s);
  Matrix e(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!dirs[i].valid) continue;
    const double dnorm = norm(dirs[i].d);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !present_now(s, j)) continue;
      const Vec2 rel = s.obs(j, t) - s.obs(i, t);
      const double dist = norm(rel);
      if (dist < kCoincidentDistance) continue;
      const double proj = dot(dirs[i].d, rel);
      if (proj > 0.0) e(i, j) = proj / (dnorm * dist) / dist;
    }
  }
  return e;
}

Matrix build_planning_graph(const Sample& s, double beta_degrees) {
  const std::size_t n = s.agent_count(), t = s.last_obs();
  const auto dirs = motion_directions(s);
  const double cos_beta = std::cos(beta_degrees * std::numbers::pi / 180.0);
  const Vec2 goal = s.plan.back();
  Matrix e(n);
  for (std::size_t i = 1; i < n; ++i) {
    if (!dirs[i].valid) continue;
    const Vec2 rel = goal - s.obs(i, t);
    const double dist = norm(rel);
    if (dist < kCoincidentDistance) continue;
    const double cos_alpha = dot(dirs[i].d, rel) / (norm(dirs[i].d) * dist);
    if (cos_alpha >= cos_beta) e(i, 0) = 1.0;
  }
  return e;
}

Matrix build_category_graph(const Sample& s) {
  const std::size_t n = s.agent_count();
  Matrix e(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && present_now(s, i) && present_now(s, j) && s.categories[i] == s.categories[j])
        e(i, j) = 1.0;
  return e;
}

AdjacencySet build_graphs(const Sample& s, double distance_threshold, double beta_degrees) {
  AdjacencySet a;
  a.distance = build_distance_graph(s, distance_threshold, &a.coincident_warning);
  a.visibility = build_visibility_graph(s);
  a.planning = build_planning_graph(s, beta_degrees);
  a.category = build_category_graph(s);
  return a;
}

std::vector<AdjacencySet> build_graphs_serial(std::span<const Sample> samples,
                                              double distance_threshold, double beta_degrees) {
  std::vector<AdjacencySet> out(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k)
    out[k] = build_graphs(samples[k], distance_threshold, beta_degrees);
  return out;
}

std::vector<AdjacencySet> build_graphs_parallel(std::span<const Sample> samples,
                                                double distance_threshold, double beta_degrees) {
  std::vector<AdjacencySet> out(samples.size());
  const auto count = static_cast<std::int64_t>(samples.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t k = 0; k < count; ++k)
    out[static_cast<std::size_t>(k)] =
        build_graphs(samples[static_cast<std::size_t>(k)], distance_threshold, beta_degrees);
  return out;
}

Matrix normalize_adjacency(const Matrix& e) {
  const std::size_t n = e.size();
  Matrix out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += e(i, j) + (i == j ? 1.0 : 0.0);
    for (std::size_t i = 0; i < n; ++i) out(i, j) = (e(i, j) + (i == j ? 1.0 : 0.0)) / col;
  }
  return out;
}

void write_matrix(const Matrix& m, std::ostream& out) {
  char buf[32];
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? " " : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace epg
