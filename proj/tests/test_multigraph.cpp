#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "epg/multigraph.hpp"
#include "support.hpp"

using namespace epg;
using test::straight_line_sample;

namespace {

const std::vector<Category> kTwoVehicles{Category::Vehicle, Category::Vehicle};

}  // namespace

TEST_CASE("motion directions") {
  const Sample s = straight_line_sample({{0, 0}, {4, 4}}, {{1, 0}, {0, 0}}, kTwoVehicles, 6, 6);
  const auto d = motion_directions(s);
  CHECK(d[0].valid);
  CHECK(d[0].d == Vec2{1.0, 0.0});
  CHECK_FALSE(d[1].valid);

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Sample r = test::random_scene(rng);
    const auto dirs = motion_directions(r);
    for (std::size_t i = 0; i < r.agent_count(); ++i) {
      if (!r.obs_present(i, r.last_obs())) {
        CHECK_FALSE(dirs[i].valid);
        continue;
      }
      const Vec2 expected{r.obs(i, 5).x - r.obs(i, 4).x, r.obs(i, 5).y - r.obs(i, 4).y};
      CHECK(dirs[i].d == expected);
    }
  }
}

TEST_CASE("distance graph") {
  const Sample s = straight_line_sample({{0, 0}, {3, 4}}, {{1, 0}, {1, 0}}, kTwoVehicles, 6, 6);
  const Matrix e = build_distance_graph(s, 10.0);
  CHECK(e(0, 1) == 0.2);
  CHECK(e(1, 0) == 0.2);
  CHECK(e(0, 0) == 0.0);

  const Sample far = straight_line_sample({{0, 0}, {11, 0}}, {{1, 0}, {1, 0}}, kTwoVehicles, 6, 6);
  CHECK(build_distance_graph(far, 10.0)(0, 1) == 0.0);

  bool coincident = false;
  const Sample same = straight_line_sample({{2, 2}, {2, 2}}, {{1, 0}, {0, 1}}, kTwoVehicles, 6, 6);
  CHECK(build_distance_graph(same, 10.0, &coincident)(0, 1) == kCoincidentWeightCap);
  CHECK(coincident);

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    test::SceneOptions o;
    o.max_agents = 20;
    const Sample r = test::random_scene(rng, o);
    CHECK(test::equals_exactly(build_distance_graph(r, 10.0), test::oracle_distance(r, 10.0)));
  }
}

TEST_CASE("distance graph is monotone as agents approach") {
  for (double gap = 9.5; gap > 0.05; gap *= 0.8) {
    const Sample a = straight_line_sample({{0, 0}, {gap, 0}}, {{1, 0}, {1, 0}}, kTwoVehicles, 6, 6);
    const Sample b = straight_line_sample({{0, 0}, {gap * 0.8, 0}}, {{1, 0}, {1, 0}}, kTwoVehicles, 6, 6);
    CHECK(build_distance_graph(b, 10.0)(0, 1) >= build_distance_graph(a, 10.0)(0, 1));
  }
}

TEST_CASE("visibility graph") {
  const Sample ahead = straight_line_sample({{0, 0}, {2, 0}}, {{1, 0}, {0, 0}}, kTwoVehicles, 6, 6);
  CHECK(build_visibility_graph(ahead)(0, 1) == 0.5);
  CHECK(build_visibility_graph(ahead)(1, 0) == 0.0);  // stationary agent sees nothing

  const Sample behind = straight_line_sample({{0, 0}, {-1, 0}}, {{1, 0}, {0, 0}}, kTwoVehicles, 6, 6);
  CHECK(build_visibility_graph(behind)(0, 1) == 0.0);

  const Sample diag = straight_line_sample({{0, 0}, {1, 1}}, {{1, 0}, {0, 0}}, kTwoVehicles, 6, 6);
  CHECK(std::abs(build_visibility_graph(diag)(0, 1) - 0.5) <= 1e-15);

  SUBCASE("asymmetry: j ahead of i, i behind j") {
    const Sample s = straight_line_sample({{0, 0}, {5, 0}}, {{1, 0}, {1, 0}}, kTwoVehicles, 6, 6);
    const Matrix e = build_visibility_graph(s);
    CHECK(e(0, 1) > 0.0);
    CHECK(e(1, 0) == 0.0);
  }

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Sample r = test::random_scene(rng);
    const Matrix e = build_visibility_graph(r);
    CHECK(test::max_abs_diff(e, test::oracle_visibility(r)) <= 1e-12);
    // front/back partition
    const auto dirs = motion_directions(r);
    for (std::size_t i = 0; i < r.agent_count(); ++i) {
      if (!dirs[i].valid) continue;
      for (std::size_t j = 0; j < r.agent_count(); ++j) {
        if (i == j || !r.obs_present(j, r.last_obs())) continue;
        const double side = dot(dirs[i].d, r.obs(j, r.last_obs()) - r.obs(i, r.last_obs()));
        CHECK((e(i, j) > 0.0) == (side > 0.0));
      }
    }
  }
}

TEST_CASE("planning graph") {
  Sample s = straight_line_sample({{0, 0}, {0, 0}}, {{0, 1}, {1, 0}}, kTwoVehicles, 6, 6);
  s.plan.back() = {10, 0};
  CHECK(build_planning_graph(s, 20.0)(1, 0) == 1.0);
  s.plan.back() = {10, 10};
  CHECK(build_planning_graph(s, 20.0)(1, 0) == 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Sample r = test::random_scene(rng);
    const Matrix e = build_planning_graph(r, 20.0);
    CHECK(test::equals_exactly(e, test::oracle_planning(r, 20.0)));
    for (std::size_t i = 0; i < r.agent_count(); ++i)
      for (std::size_t j = 1; j < r.agent_count(); ++j) CHECK(e(i, j) == 0.0);
    CHECK(e(0, 0) == 0.0);
  }
}

TEST_CASE("category graph") {
  const Sample peds = straight_line_sample({{0, 0}, {1, 0}, {2, 0}}, {{1, 0}, {1, 0}, {1, 0}},
                                           {Category::Vehicle, Category::Pedestrian, Category::Pedestrian}, 6, 6);
  const Matrix e = build_category_graph(peds);
  CHECK(e(1, 2) == 1.0);
  CHECK(e(0, 1) == 0.0);
  CHECK(e(1, 1) == 0.0);

  const Sample mixed = straight_line_sample(
      {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}}, std::vector<Vec2>(6, Vec2{1, 0}),
      {Category::Vehicle, Category::Pedestrian, Category::Bicyclist, Category::Vehicle, Category::Pedestrian,
       Category::Others},
      6, 6);
  const Matrix m = build_category_graph(mixed);
  CHECK(test::equals_exactly(m, test::oracle_category(mixed)));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(m(i, j) == m(j, i));
}

TEST_CASE("normalization") {
  CHECK(normalize_adjacency(Matrix(3)) == [] {
    Matrix eye(3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
    return eye;
  }());
  Matrix e(3);
  e(0, 0) = 0.0;
  e(1, 0) = 1.0;
  const Matrix n = normalize_adjacency(e);
  CHECK(n(0, 0) == 0.5);
  CHECK(n(1, 0) == 0.5);
  CHECK(n(2, 0) == 0.0);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t size = 1 + rng() % 20;
    Matrix r(size);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) r(i, j) = rng() % 3 == 0 ? 0.0 : uniform(rng, 0.0, 5.0);
    const Matrix out = normalize_adjacency(r);
    for (std::size_t j = 0; j < size; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < size; ++i) col += out(i, j);
      CHECK(std::abs(col - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("serial and parallel batch construction agree") {
  Rng rng(6);
  std::vector<Sample> scenes;
  for (int k = 0; k < 64; ++k) scenes.push_back(test::random_scene(rng));
  const auto a = build_graphs_serial(scenes, 10.0, 20.0);
  const auto b = build_graphs_parallel(scenes, 10.0, 20.0);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t g = 0; g < kGraphKinds; ++g)
      CHECK(a[k].get(static_cast<GraphKind>(g)) == b[k].get(static_cast<GraphKind>(g)));
}

TEST_CASE("graphs are invariant under rigid motions") {
  Rng rng(7);
  test::SceneOptions o;
  o.dyadic = true;
  for (int trial = 0; trial < 30; ++trial) {
    const Sample s = test::random_scene(rng, o);
    const AdjacencySet base = build_graphs(s, 10.0, 20.0);
    const Vec2 shift{static_cast<double>(static_cast<int>(rng() % 2001) - 1000),
                     static_cast<double>(static_cast<int>(rng() % 2001) - 1000)};
    const AdjacencySet moved = build_graphs(test::translate_sample(s, shift), 10.0, 20.0);
    for (std::size_t g = 0; g < kGraphKinds; ++g)
      CHECK(moved.get(static_cast<GraphKind>(g)) == base.get(static_cast<GraphKind>(g)));
    const AdjacencySet rotated =
        build_graphs(test::transform_sample(s, uniform(rng, 0.0, 2.0 * std::numbers::pi), {3.5, -7.25}), 10.0, 20.0);
    for (std::size_t g = 0; g < kGraphKinds; ++g) {
      const auto& m = base.get(static_cast<GraphKind>(g));
      const auto& r = rotated.get(static_cast<GraphKind>(g));
      CHECK(test::max_abs_diff(r, std::vector<double>(m.values().begin(), m.values().end())) <= 1e-9);
    }
  }
}

TEST_CASE("graphs permute with the agents") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Sample s = test::random_scene(rng);
    const std::size_t n = s.agent_count();
    std::vector<std::size_t> perm(n);
    for (std::size_t k = 0; k < n; ++k) perm[k] = k;
    for (std::size_t k = n - 1; k > 1; --k) std::swap(perm[k], perm[1 + rng() % k]);
    const AdjacencySet a = build_graphs(s, 10.0, 20.0);
    const AdjacencySet b = build_graphs(test::permute_agents(s, perm), 10.0, 20.0);
    for (std::size_t g = 0; g < kGraphKinds; ++g)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          CHECK(b.get(static_cast<GraphKind>(g))(i, j) == a.get(static_cast<GraphKind>(g))(perm[i], perm[j]));
  }
}

TEST_CASE("matrix dump is exact") {
  Matrix m(2);
  m(0, 1) = 0.1;
  m(1, 0) = 1.0 / 3.0;
  std::ostringstream os;
  write_matrix(m, os);
  CHECK(os.str() == "0 0.10000000000000001\n0.33333333333333331 0\n");
}
