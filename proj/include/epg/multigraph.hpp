#pragma once

// The four interaction graphs built from a sample at its last observed frame,
// and their column normalization. Matrices are dense N x N, row-major, node
// order equal to the sample's agent order (ego at 0).

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "epg/scene.hpp"

namespace epg {

inline constexpr double kMotionEpsilon = 1e-4;       // m; shorter displacements have no heading
inline constexpr double kCoincidentDistance = 1e-9;  // m
inline constexpr double kCoincidentWeightCap = 1e9;

class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n) : n_(n), v_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  std::span<const double> values() const { return v_; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

struct MotionDirection {
  Vec2 d;
  bool valid = false;
};

enum class GraphKind : std::uint8_t { Distance = 0, Visibility = 1, Planning = 2, Category = 3 };
inline constexpr std::size_t kGraphKinds = 4;
std::string_view graph_name(GraphKind g);

struct AdjacencySet {
  Matrix distance, visibility, planning, category;
  bool coincident_warning = false;  // a distance weight was capped

  const Matrix& get(GraphKind g) const;
  Matrix& get(GraphKind g);
};

/// Backward difference p^t - p^{t-1} at the last observed frame.
std::vector<MotionDirection> motion_directions(const Sample& s);

/// Reciprocal distance for pairs within `threshold`; capped for coincident agents.
Matrix build_distance_graph(const Sample& s, double threshold, bool* coincident = nullptr);
/// cos(angle to j) / distance for agents j ahead of agent i.
Matrix build_visibility_graph(const Sample& s);
/// Column 0 edge from agent i when the ego plan endpoint is within +-beta of i's heading.
Matrix build_planning_graph(const Sample& s, double beta_degrees);
/// 1 for distinct agents of equal category.
Matrix build_category_graph(const Sample& s);

AdjacencySet build_graphs(const Sample& s, double distance_threshold, double beta_degrees);

/// Graph construction over many samples. The OpenMP variant distributes
/// samples across threads; output order and values match the serial one.
std::vector<AdjacencySet> build_graphs_serial(std::span<const Sample> samples,
                                              double distance_threshold, double beta_degrees);
std::vector<AdjacencySet> build_graphs_parallel(std::span<const Sample> samples,
                                                double distance_threshold, double beta_degrees);

/// E + I with every entry divided by its column sum.
Matrix normalize_adjacency(const Matrix& e);

/// Dense decimal-text dump (17 significant digits), one row per line.
void write_matrix(const Matrix& m, std::ostream& out);

}  // namespace epg
