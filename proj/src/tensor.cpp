#include "epg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "epg/error.hpp"
#include "epg/kernels.hpp"

namespace epg {

using detail::Node;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor " + shape_str(shape) + " given " + std::to_string(values.size()) +
                         " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

namespace {

// Builds the output node. The backward closure receives the output node and
// must only touch parents that require grad.
template <typename Backward>
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, Backward bw) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(value);
  for (const auto& in : inputs) out->requires_grad = out->requires_grad || in.requires_grad();
  if (out->requires_grad) {
    for (auto& in : inputs) out->parents.push_back(in.node());
    Node* self = out.get();
    out->backward = [self, bw = std::move(bw)]() mutable { bw(*self); };
  }
  return Tensor(std::move(out));
}

// Parent accessor used inside backward closures.
inline Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const kernels::MatmulDims d{a.dim(0), a.dim(1), b.dim(1)};
  std::vector<double> out(d.m * d.n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), d);
  return make_op({d.m, d.n}, std::move(out), {a, b}, [d](Node& self) {
    const Node* pa = self.parents[0].get();
    const Node* pb = self.parents[1].get();
    if (Node* ga = grad_target(self, 0))
      kernels::matmul_grad_a(self.grad.data(), pb->value.data(), ga->grad.data(), d);
    if (Node* gb = grad_target(self, 1))
      kernels::matmul_grad_b(pa->value.data(), self.grad.data(), gb->grad.data(), d);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (g->value[i] > 0.0) g->grad[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Node* g = grad_target(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
    if (Node* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const Node* pa = self.parents[0].get();
    const Node* pb = self.parents[1].get();
    if (Node* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * pb->value[i];
    if (Node* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * pa->value[i];
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  return make_op(x.shape(), std::move(out), {x}, [s](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * s;
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op({1}, {s}, {x}, [](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (double& gi : g->grad) gi += self.grad[0];
  });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (!x.defined() || (x.rank() != 2 && x.rank() != 3))
    throw DimensionError("pointwise_conv: input must be [B,C,T] or [C,T], got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  require_rank(w, 2, "pointwise_conv weights");
  const bool batched = x.rank() == 3;
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t Cin = x.dim(batched ? 1 : 0);
  const std::size_t T = x.dim(batched ? 2 : 1);
  if (w.dim(1) != Cin)
    throw DimensionError("pointwise_conv: input " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  const std::size_t Cout = w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw DimensionError("pointwise_conv: bias " + shape_str(bias.shape()) + " vs weights " +
                         shape_str(w.shape()));
  const kernels::ConvDims d{B, Cin, Cout, T};
  std::vector<double> out(B * Cout * T);
  kernels::pointwise_conv(x.data().data(), w.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data(), d);
  Shape shape = batched ? Shape{B, Cout, T} : Shape{Cout, T};
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op(std::move(shape), std::move(out), std::move(inputs), [d, has_bias](Node& self) {
    const Node* px = self.parents[0].get();
    const Node* pw = self.parents[1].get();
    if (Node* gx = grad_target(self, 0))
      kernels::pointwise_conv_grad_x(self.grad.data(), pw->value.data(), gx->grad.data(), d);
    Node* gw = grad_target(self, 1);
    Node* gb = has_bias ? grad_target(self, 2) : nullptr;
    if (gw || gb) {
      // Frozen weight or bias gradients go to scratch buffers.
      std::vector<double> scratch_w, scratch_b;
      double* dw = gw ? gw->grad.data() : (scratch_w.assign(d.c_out * d.c_in, 0.0), scratch_w.data());
      double* db = nullptr;
      if (has_bias) db = gb ? gb->grad.data() : (scratch_b.assign(d.c_out, 0.0), scratch_b.data());
      kernels::pointwise_conv_grad_w(self.grad.data(), px->value.data(), dw, db, d);
    }
  });
}

Tensor temporal_conv(const Tensor& x, const Tensor& w) {
  require_rank(x, 3, "temporal_conv");
  require_rank(w, 3, "temporal_conv weights");
  if (w.dim(1) != x.dim(1) || w.dim(2) != kernels::kTemporalTaps)
    throw DimensionError("temporal_conv: input " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  if (x.dim(2) < 1) throw DimensionError("temporal_conv: empty time axis");
  const kernels::ConvDims d{x.dim(0), x.dim(1), w.dim(0), x.dim(2)};
  std::vector<double> out(d.batch * d.c_out * d.time);
  kernels::temporal_conv(x.data().data(), w.data().data(), out.data(), d);
  return make_op({d.batch, d.c_out, d.time}, std::move(out), {x, w}, [d](Node& self) {
    const Node* px = self.parents[0].get();
    const Node* pw = self.parents[1].get();
    if (Node* gx = grad_target(self, 0))
      kernels::temporal_conv_grad_x(self.grad.data(), pw->value.data(), gx->grad.data(), d);
    if (Node* gw = grad_target(self, 1))
      kernels::temporal_conv_grad_w(self.grad.data(), px->value.data(), gw->grad.data(), d);
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  for (const auto& p : parts) require_same(parts.front(), p, "stack");
  const std::size_t block = parts.front().numel();
  std::vector<double> out;
  out.reserve(block * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts.front().shape().begin(), parts.front().shape().end());
  return make_op(std::move(shape), std::move(out), parts, [block](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (Node* g = grad_target(self, k))
        for (std::size_t i = 0; i < block; ++i) g->grad[i] += self.grad[k * block + i];
  });
}

Tensor expand_channels(const Tensor& h, std::size_t n, std::size_t t) {
  require_rank(h, 1, "expand_channels");
  const std::size_t C = h.dim(0);
  std::vector<double> out(n * C * t);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t c = 0; c < C; ++c)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((a * C + c) * t), t, h.data()[c]);
  return make_op({n, C, t}, std::move(out), {h}, [n, C, t](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t s = 0; s < t; ++s) g->grad[c] += self.grad[(a * C + c) * t + s];
  });
}

Tensor select_column(const Tensor& x, std::size_t n, std::size_t t) {
  require_rank(x, 3, "select_column");
  const std::size_t C = x.dim(1), T = x.dim(2);
  if (n >= x.dim(0) || t >= T)
    throw DimensionError("select_column: (" + std::to_string(n) + "," + std::to_string(t) +
                         ") outside " + shape_str(x.shape()));
  std::vector<double> out(C);
  for (std::size_t c = 0; c < C; ++c) out[c] = x.data()[(n * C + c) * T + t];
  return make_op({C}, std::move(out), {x}, [n, t, C, T](Node& self) {
    if (Node* g = grad_target(self, 0))
      for (std::size_t c = 0; c < C; ++c) g->grad[(n * C + c) * T + t] += self.grad[c];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 1, "linear");
  require_rank(w, 2, "linear weights");
  if (w.dim(1) != x.dim(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  const std::size_t M = w.dim(0), K = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != M))
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " vs weights " +
                         shape_str(w.shape()));
  std::vector<double> out(M);
  for (std::size_t m = 0; m < M; ++m) {
    double s = b.defined() ? b.data()[m] : 0.0;
    for (std::size_t k = 0; k < K; ++k) s += w.data()[m * K + k] * x.data()[k];
    out[m] = s;
  }
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  const bool has_bias = b.defined();
  return make_op({M}, std::move(out), std::move(inputs), [M, K, has_bias](Node& self) {
    const Node* px = self.parents[0].get();
    const Node* pw = self.parents[1].get();
    if (Node* gx = grad_target(self, 0))
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < K; ++k) gx->grad[k] += pw->value[m * K + k] * self.grad[m];
    if (Node* gw = grad_target(self, 1))
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < K; ++k) gw->grad[m * K + k] += self.grad[m] * px->value[k];
    if (has_bias)
      if (Node* gb = grad_target(self, 2))
        for (std::size_t m = 0; m < M; ++m) gb->grad[m] += self.grad[m];
  });
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  require_rank(x, 1, "gru_cell input");
  require_rank(h, 1, "gru_cell state");
  const std::size_t Cx = x.dim(0), Ch = h.dim(0);
  for (const Tensor* w : {&p.w_z, &p.w_r, &p.w_h})
    if (w->rank() != 2 || w->dim(0) != Ch || w->dim(1) != Cx)
      throw DimensionError("gru_cell: input weights " + shape_str(w->shape()) + " vs x " +
                           shape_str(x.shape()) + ", h " + shape_str(h.shape()));
  for (const Tensor* u : {&p.u_z, &p.u_r, &p.u_h})
    if (u->rank() != 2 || u->dim(0) != Ch || u->dim(1) != Ch)
      throw DimensionError("gru_cell: recurrent weights " + shape_str(u->shape()) + " vs h " +
                           shape_str(h.shape()));
  for (const Tensor* b : {&p.b_z, &p.b_r, &p.b_h})
    if (b->rank() != 1 || b->dim(0) != Ch)
      throw DimensionError("gru_cell: bias " + shape_str(b->shape()) + " vs h " +
                           shape_str(h.shape()));

  struct Cache {
    std::vector<double> z, r, c, rh;
  };
  auto cache = std::make_shared<Cache>();
  cache->z.resize(Ch);
  cache->r.resize(Ch);
  cache->c.resize(Ch);
  cache->rh.resize(Ch);

  const auto xv = x.data(), hv = h.data();
  auto affine = [&](const Tensor& w, const Tensor& u, const Tensor& b, std::span<const double> hin,
                    std::size_t j) {
    double s = b.data()[j];
    for (std::size_t k = 0; k < Cx; ++k) s += w.data()[j * Cx + k] * xv[k];
    for (std::size_t k = 0; k < Ch; ++k) s += u.data()[j * Ch + k] * hin[k];
    return s;
  };
  for (std::size_t j = 0; j < Ch; ++j) {
    cache->z[j] = sigmoid(affine(p.w_z, p.u_z, p.b_z, hv, j));
    cache->r[j] = sigmoid(affine(p.w_r, p.u_r, p.b_r, hv, j));
    cache->rh[j] = cache->r[j] * hv[j];
  }
  std::vector<double> out(Ch);
  for (std::size_t j = 0; j < Ch; ++j) {
    cache->c[j] = std::tanh(affine(p.w_h, p.u_h, p.b_h, cache->rh, j));
    out[j] = (1.0 - cache->z[j]) * hv[j] + cache->z[j] * cache->c[j];
  }

  std::vector<Tensor> inputs{x, h};
  for (auto& t : p.tensors()) inputs.push_back(t);
  return make_op({Ch}, std::move(out), std::move(inputs), [cache, Cx, Ch](Node& self) {
    enum { X, H, WZ, WR, WH, UZ, UR, UH, BZ, BR, BH };
    const auto val = [&](int i) -> const std::vector<double>& { return self.parents[i]->value; };
    const auto& xv = val(X);
    const auto& hv = val(H);
    const auto& z = cache->z;
    const auto& r = cache->r;
    const auto& c = cache->c;
    const auto& rh = cache->rh;
    const auto& g = self.grad;

    std::vector<double> da_z(Ch), da_r(Ch), da_c(Ch), dh(Ch, 0.0), drh(Ch, 0.0), dx(Cx, 0.0);
    for (std::size_t j = 0; j < Ch; ++j) {
      da_c[j] = g[j] * z[j] * (1.0 - c[j] * c[j]);
      da_z[j] = g[j] * (c[j] - hv[j]) * z[j] * (1.0 - z[j]);
      dh[j] = g[j] * (1.0 - z[j]);
    }
    const auto& uh = val(UH);
    for (std::size_t j = 0; j < Ch; ++j)
      for (std::size_t k = 0; k < Ch; ++k) drh[k] += uh[j * Ch + k] * da_c[j];
    for (std::size_t k = 0; k < Ch; ++k) {
      da_r[k] = drh[k] * hv[k] * r[k] * (1.0 - r[k]);
      dh[k] += drh[k] * r[k];
    }

    auto accumulate_gate = [&](int wi, int ui, int bi, const std::vector<double>& da,
                               const std::vector<double>& hin, bool to_h) {
      const auto& w = val(wi);
      const auto& u = val(ui);
      for (std::size_t j = 0; j < Ch; ++j)
        for (std::size_t k = 0; k < Cx; ++k) dx[k] += w[j * Cx + k] * da[j];
      if (to_h)
        for (std::size_t j = 0; j < Ch; ++j)
          for (std::size_t k = 0; k < Ch; ++k) dh[k] += u[j * Ch + k] * da[j];
      if (Node* gw = grad_target(self, wi))
        for (std::size_t j = 0; j < Ch; ++j)
          for (std::size_t k = 0; k < Cx; ++k) gw->grad[j * Cx + k] += da[j] * xv[k];
      if (Node* gu = grad_target(self, ui))
        for (std::size_t j = 0; j < Ch; ++j)
          for (std::size_t k = 0; k < Ch; ++k) gu->grad[j * Ch + k] += da[j] * hin[k];
      if (Node* gb = grad_target(self, bi))
        for (std::size_t j = 0; j < Ch; ++j) gb->grad[j] += da[j];
    };
    // Candidate path: its recurrent input is r*h, already folded into dh via drh.
    accumulate_gate(WH, UH, BH, da_c, rh, false);
    accumulate_gate(WR, UR, BR, da_r, hv, true);
    accumulate_gate(WZ, UZ, BZ, da_z, hv, true);

    if (Node* gx = grad_target(self, X))
      for (std::size_t k = 0; k < Cx; ++k) gx->grad[k] += dx[k];
    if (Node* gh = grad_target(self, H))
      for (std::size_t k = 0; k < Ch; ++k) gh->grad[k] += dh[k];
  });
}

Tensor masked_squared_error(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_rank(pred, 3, "masked_squared_error");
  require_same(pred, target, "masked_squared_error");
  require_rank(mask, 2, "masked_squared_error mask");
  const std::size_t K = pred.dim(0), T = pred.dim(1), D = pred.dim(2);
  if (mask.dim(0) != K || mask.dim(1) != T)
    throw DimensionError("masked_squared_error: mask " + shape_str(mask.shape()) + " vs " +
                         shape_str(pred.shape()));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t t = 0; t < T; ++t) {
      if (mask.data()[k * T + t] == 0.0) continue;
      ++count;
      for (std::size_t q = 0; q < D; ++q) {
        const std::size_t i = (k * T + t) * D + q;
        const double e = pred.data()[i] - target.data()[i];
        total += e * e;
      }
    }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return make_op({1}, {total / denom}, {pred, target}, [K, T, D, denom, mask](Node& self) {
    const auto& pv = self.parents[0]->value;
    const auto& tv = self.parents[1]->value;
    const double g = self.grad[0] * 2.0 / denom;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t) {
        if (mask.data()[k * T + t] == 0.0) continue;
        for (std::size_t q = 0; q < D; ++q) {
          const std::size_t i = (k * T + t) * D + q;
          const double e = pv[i] - tv[i];
          if (Node* gp = grad_target(self, 0)) gp->grad[i] += g * e;
          if (Node* gt = grad_target(self, 1)) gt->grad[i] -= g * e;
        }
      }
  });
}

}  // namespace epg
