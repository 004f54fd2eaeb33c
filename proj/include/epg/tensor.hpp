#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// A Tensor is a cheap handle to a node in the computation graph. Leaf tensors
// created with requires_grad are parameters; every op returns a new node that
// remembers its parents and a backward routine. backward() on a scalar
// topologically orders the reachable graph and accumulates gradients into
// every requires_grad node. Graphs are single-threaded; the dense kernels
// underneath may use OpenMP (see kernels.hpp).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace epg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;  // reads this->grad, accumulates into parents
  std::string name;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  /// Reverse pass from a single-element tensor. Intermediate gradients are
  /// reset first; leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- primitives ----------------------------------------------------------

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Same data, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor sum(const Tensor& x);

/// 1x1 convolution across the channel axis of x[B,C_in,T] (or x[C_in,T]):
/// y[b,o,t] = sum_i w[o,i] x[b,i,t] + bias[o]. `bias` may be undefined.
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias = {});

/// 3x1 convolution along time with one zero frame of padding on each side:
/// x[N,C_in,T], w[C_out,C_in,3] -> [N,C_out,T]. Agents never mix.
Tensor temporal_conv(const Tensor& x, const Tensor& w);

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

/// h[C] -> [N,C,T] with y[n,c,t] = h[c].
Tensor expand_channels(const Tensor& h, std::size_t n, std::size_t t);

/// x[N,C,T] -> [C] taking column (n, t).
Tensor select_column(const Tensor& x, std::size_t n, std::size_t t);

/// w[M,K] x[K] + b[M]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

struct GruParams {
  Tensor w_z, w_r, w_h;  // [C_h, C_x]
  Tensor u_z, u_r, u_h;  // [C_h, C_h]
  Tensor b_z, b_r, b_h;  // [C_h]

  std::size_t input_size() const { return w_z.dim(1); }
  std::size_t hidden_size() const { return w_z.dim(0); }
  std::vector<Tensor> tensors() const { return {w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h}; }
};

/// z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
/// c = tanh(W_h x + U_h (r*h) + b_h), h' = (1 - z) * h + z * c.
Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

/// Mean over unmasked (k, t) of ||pred[k,t,:] - target[k,t,:]||^2 for
/// [K,T,D] operands and a [K,T] 0/1 mask. Returns 0 when nothing is unmasked.
Tensor masked_squared_error(const Tensor& pred, const Tensor& target, const Tensor& mask);

}  // namespace epg
