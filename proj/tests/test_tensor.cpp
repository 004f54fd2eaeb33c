#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "epg/error.hpp"
#include "epg/optim.hpp"
#include "epg/tensor.hpp"
#include "support.hpp"

using namespace epg;
using epg::test::random_tensor;
using epg::test::random_values;
using epg::test::gru_reference;
using epg::test::random_gru;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

// Weighted sum of every output element with a fixed random probe.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, Tensor::from(y.shape(), random_values(rng, y.numel()))));
}

void check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params, double tol = 1e-6) {
  const GradCheckReport r = finite_diff_check(f, params, 1e-5, tol);
  for (const auto& e : r.entries) INFO(e.name, " rel error ", e.max_rel_error);
  CHECK(r.passed);
  CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  const Tensor proj = Tensor::from({2, 2}, {1, 0, 0, 0});
  CHECK(values(matmul(proj, Tensor::from({2, 2}, {5, 6, 7, 8}))) == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  try {
    matmul(a, b);
  } catch (const DimensionError& e) {
    const std::string w = e.what();
    CHECK(w.find("[2x3]") != std::string::npos);
    CHECK(w.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("temporal conv examples") {
  SUBCASE("center tap is the identity") {
    Rng rng(3);
    const Tensor x = random_tensor(rng, {2, 3, 5});
    std::vector<double> w(3 * 3 * 3, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w[(c * 3 + c) * 3 + 1] = 1.0;
    CHECK(values(temporal_conv(x, Tensor::from({3, 3, 3}, w))) == values(x));
  }
  SUBCASE("all-ones kernel with zero padding") {
    const Tensor x = Tensor::from({1, 1, 3}, {1, 2, 3});
    CHECK(values(temporal_conv(x, Tensor::from({1, 1, 3}, {1, 1, 1}))) == std::vector<double>{3, 6, 5});
  }
  SUBCASE("sliding-window reference") {
    Rng rng(4);
    const std::size_t N = 3, Ci = 4, Co = 5, T = 6;
    const Tensor x = random_tensor(rng, {N, Ci, T}), w = random_tensor(rng, {Co, Ci, 3});
    const auto y = values(temporal_conv(x, w));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t t = 0; t < T; ++t) {
          double s = 0.0;
          for (std::size_t i = 0; i < Ci; ++i)
            for (int k = -1; k <= 1; ++k) {
              const long tt = static_cast<long>(t) + k;
              if (tt < 0 || tt >= static_cast<long>(T)) continue;
              s += w.data()[(o * Ci + i) * 3 + static_cast<std::size_t>(k + 1)] *
                   x.data()[(n * Ci + i) * T + static_cast<std::size_t>(tt)];
            }
          CHECK(std::abs(y[(n * Co + o) * T + t] - s) <= 1e-12);
        }
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(temporal_conv(Tensor::zeros({1, 2, 4}), Tensor::zeros({3, 3, 3})), DimensionError);
  }
}

TEST_CASE("pointwise conv examples") {
  SUBCASE("identity weights over a stack of one") {
    Rng rng(5);
    const Tensor x = random_tensor(rng, {1, 1, 12});
    CHECK(values(pointwise_conv(x, Tensor::from({1, 1}, {1.0}))) == values(x));
  }
  SUBCASE("half-half weights average two maps") {
    const Tensor x = Tensor::from({1, 2, 3}, {1, 2, 3, 5, 8, 13});
    CHECK(values(pointwise_conv(x, Tensor::from({1, 2}, {0.5, 0.5}))) == std::vector<double>{3, 5, 8});
  }
  SUBCASE("per-position dot product reference") {
    Rng rng(6);
    const std::size_t B = 2, Ci = 3, Co = 4, T = 5;
    const Tensor x = random_tensor(rng, {B, Ci, T}), w = random_tensor(rng, {Co, Ci}),
                 b = random_tensor(rng, {Co});
    const auto y = values(pointwise_conv(x, w, b));
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t t = 0; t < T; ++t) {
          double s = b.data()[o];
          for (std::size_t i = 0; i < Ci; ++i) s += w.data()[o * Ci + i] * x.data()[(n * Ci + i) * T + t];
          CHECK(std::abs(y[(n * Co + o) * T + t] - s) <= 1e-12);
        }
  }
  SUBCASE("two-dimensional input") {
    const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(values(pointwise_conv(x, Tensor::from({1, 2}, {1, 1}), Tensor::from({1}, {10}))) ==
          std::vector<double>{14, 16});
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(pointwise_conv(Tensor::zeros({1, 3, 2}), Tensor::zeros({2, 2})), DimensionError);
  }
}

TEST_CASE("gru cell examples") {
  Rng rng(7);
  GruParams zero;
  zero.w_z = zero.w_r = zero.w_h = Tensor::zeros({3, 2});
  zero.u_z = zero.u_r = zero.u_h = Tensor::zeros({3, 3});
  zero.b_z = zero.b_r = zero.b_h = Tensor::zeros({3});
  const Tensor x = random_tensor(rng, {2});
  const Tensor h = Tensor::from({3}, {0.4, -1.2, 3.0});
  CHECK(values(gru_cell(x, h, zero)) == std::vector<double>{0.2, -0.6, 1.5});
  CHECK(values(gru_cell(x, Tensor::zeros({3}), zero)) == std::vector<double>{0, 0, 0});

  for (int trial = 0; trial < 5; ++trial) {
    const GruParams p = random_gru(rng, 4, 3, false);
    const Tensor xi = random_tensor(rng, {4}), hi = random_tensor(rng, {3});
    CHECK(max_abs(values(gru_cell(xi, hi, p)), gru_reference(values(xi), values(hi), p)) <= 1e-12);
  }
  CHECK_THROWS_AS(gru_cell(Tensor::zeros({3}), h, zero), DimensionError);
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(8);
  SUBCASE("matmul") {
    Tensor a = random_tensor(rng, {3, 4}, true), b = random_tensor(rng, {4, 2}, true);
    check_gradients([&] { return probe(matmul(a, b), 1); }, {a, b});
  }
  SUBCASE("reshape") {
    Tensor a = random_tensor(rng, {3, 4}, true);
    check_gradients([&] { return probe(reshape(a, {2, 6}), 2); }, {a});
  }
  SUBCASE("relu") {
    Tensor a = random_tensor(rng, {10}, true);
    check_gradients([&] { return probe(relu(a), 3); }, {a});
  }
  SUBCASE("add sub mul scale") {
    Tensor a = random_tensor(rng, {2, 3}, true), b = random_tensor(rng, {2, 3}, true);
    check_gradients([&] { return probe(scale(mul(add(a, b), sub(a, b)), -1.7), 4); }, {a, b});
  }
  SUBCASE("pointwise conv with bias") {
    Tensor x = random_tensor(rng, {2, 3, 4}, true), w = random_tensor(rng, {5, 3}, true),
           b = random_tensor(rng, {5}, true);
    check_gradients([&] { return probe(pointwise_conv(x, w, b), 5); }, {x, w, b});
  }
  SUBCASE("temporal conv") {
    Tensor x = random_tensor(rng, {2, 3, 5}, true), w = random_tensor(rng, {4, 3, 3}, true);
    check_gradients([&] { return probe(temporal_conv(x, w), 6); }, {x, w});
  }
  SUBCASE("stack expand select") {
    Tensor a = random_tensor(rng, {2, 3, 4}, true), b = random_tensor(rng, {2, 3, 4}, true),
           h = random_tensor(rng, {3}, true);
    check_gradients(
        [&] {
          Tensor s = reshape(stack({a, b}), {4, 3, 4});
          return add(probe(s, 7), add(probe(expand_channels(h, 2, 4), 8), probe(select_column(a, 1, 2), 9)));
        },
        {a, b, h});
  }
  SUBCASE("linear") {
    Tensor x = random_tensor(rng, {4}, true), w = random_tensor(rng, {3, 4}, true), b = random_tensor(rng, {3}, true);
    check_gradients([&] { return probe(linear(x, w, b), 10); }, {x, w, b});
  }
  SUBCASE("gru cell") {
    const GruParams p = random_gru(rng, 3, 4, true);
    Tensor x = random_tensor(rng, {3}, true), h = random_tensor(rng, {4}, true);
    std::vector<Tensor> params = p.tensors();
    params.push_back(x);
    params.push_back(h);
    check_gradients([&] { return probe(gru_cell(x, h, p), 11); }, params);
  }
  SUBCASE("masked squared error") {
    Tensor pred = random_tensor(rng, {2, 3, 2}, true), target = random_tensor(rng, {2, 3, 2}, true);
    const Tensor mask = Tensor::from({2, 3}, {1, 0, 1, 1, 1, 0});
    check_gradients([&] { return masked_squared_error(pred, target, mask); }, {pred, target});
  }
}

TEST_CASE("chain composition gradient equals the composed analytic gradient") {
  // g(f(x)) = sum(relu(2x)^2) has gradient 8x for x > 0 and 0 otherwise.
  Tensor x = Tensor::from({4}, {0.5, -1.0, 2.0, -0.25}, true);
  const Tensor y = scale(x, 2.0);
  sum(mul(relu(y), relu(y))).backward();
  CHECK(values(Tensor::from({4}, std::vector<double>(x.grad().begin(), x.grad().end()))) ==
        std::vector<double>{4.0, 0.0, 16.0, 0.0});
}

TEST_CASE("masked squared error examples") {
  const Tensor p = Tensor::from({1, 1, 2}, {3, 4}), t = Tensor::from({1, 1, 2}, {0, 0});
  CHECK(masked_squared_error(p, t, Tensor::from({1, 1}, {1})).item() == 25.0);
  CHECK(masked_squared_error(p, p, Tensor::from({1, 1}, {1})).item() == 0.0);
  Rng rng(9);
  const Tensor a = random_tensor(rng, {3, 4, 2}), b = random_tensor(rng, {3, 4, 2});
  const std::vector<double> m{1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1};
  double total = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t t = 0; t < 4; ++t) {
      if (m[k * 4 + t] == 0.0) continue;
      ++count;
      for (std::size_t d = 0; d < 2; ++d) {
        const double e = a.data()[(k * 4 + t) * 2 + d] - b.data()[(k * 4 + t) * 2 + d];
        total += e * e;
      }
    }
  CHECK(std::abs(masked_squared_error(a, b, Tensor::from({3, 4}, m)).item() - total / count) <= 1e-12);
}

TEST_CASE("primitives are deterministic") {
  Rng rng(10);
  const Tensor x = random_tensor(rng, {3, 4, 5}), w = random_tensor(rng, {4, 4, 3});
  CHECK(values(temporal_conv(x, w)) == values(temporal_conv(x, w)));
}

TEST_CASE("adam") {
  SUBCASE("first step moves by the learning rate") {
    Tensor w = Tensor::from({3}, {0.3, -2.0, 5.0}, true);
    w.mutable_grad()[0] = 0.7;
    w.mutable_grad()[1] = -1e-3;
    w.mutable_grad()[2] = 40.0;
    std::vector<Tensor> ps{w};
    AdamState st;
    st.learning_rate = 0.01;
    adam_step(ps, st);
    CHECK(std::abs((0.3 - w.data()[0]) - 0.01) <= 1e-6);
    CHECK(std::abs((w.data()[1] + 2.0) - 0.01) <= 1e-6);
    CHECK(std::abs((5.0 - w.data()[2]) - 0.01) <= 1e-6);
  }
  SUBCASE("zero gradient leaves the parameter unchanged") {
    Tensor w = Tensor::from({2}, {1.5, -0.5}, true);
    w.mutable_grad();
    std::vector<Tensor> ps{w};
    AdamState st;
    adam_step(ps, st);
    CHECK(values(w) == std::vector<double>{1.5, -0.5});
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    Rng rng(1);
    Tensor w = random_tensor(rng, {6}, true);
    const auto before = values(w);
    std::vector<Tensor> ps{w};
    AdamState st;
    st.learning_rate = 0.0;
    for (int k = 0; k < 3; ++k) {
      w.zero_grad();
      sum(mul(w, w)).backward();
      adam_step(ps, st);
    }
    CHECK(values(w) == before);
  }
  SUBCASE("three steps on w^2 match a hand-rolled trace") {
    Tensor w = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> ps{w};
    AdamState st;
    st.learning_rate = 0.1;
    double ref = 1.0, m = 0.0, v = 0.0;
    for (int step = 1; step <= 3; ++step) {
      w.zero_grad();
      mul(w, w).backward();
      adam_step(ps, st);
      const double g = 2.0 * ref;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, step)), vh = v / (1.0 - std::pow(0.999, step));
      ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(std::abs(w.data()[0] - ref) <= 1e-9);
    }
  }
  SUBCASE("missing gradient names the parameter") {
    Tensor w = Tensor::from({1}, {1.0}, true);
    w.set_name("decoder.vehicle.out.bias");
    std::vector<Tensor> ps{w};
    AdamState st;
    try {
      adam_step(ps, st);
      FAIL("expected a usage error");
    } catch (const UsageError& e) {
      CHECK(std::string(e.what()).find("decoder.vehicle.out.bias") != std::string::npos);
    }
  }
}

TEST_CASE("finite difference checker") {
  SUBCASE("sum of squares") {
    Rng rng(2);
    Tensor w = random_tensor(rng, {8}, true);
    std::vector<Tensor> ps{w};
    const auto r = finite_diff_check([&] { return sum(mul(w, w)); }, ps, 1e-5, 1e-8);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-8);
  }
  SUBCASE("constant loss") {
    Tensor w = Tensor::from({2}, {1, 2}, true);
    std::vector<Tensor> ps{w};
    const auto r = finite_diff_check([&] { return add(scale(sum(w), 0.0), Tensor::scalar(3.0)); }, ps, 1e-5, 1e-8);
    CHECK(r.passed);
    CHECK(r.max_rel_error == 0.0);
  }
  SUBCASE("non-finite loss reports the parameter index") {
    Tensor a = Tensor::from({1}, {1.0}, true), b = Tensor::from({2}, {0.0, 1.0}, true);
    std::vector<Tensor> ps{a, b};
    auto f = [&] {
      const double v = b.data()[0] > 0.5e-5 ? std::nan("") : 1.0;
      return add(add(sum(a), sum(b)), Tensor::scalar(v));
    };
    try {
      finite_diff_check(f, ps, 1e-5, 1e-6);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("parameter 1 element 0") != std::string::npos);
    }
  }
}
