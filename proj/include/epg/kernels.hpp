#pragma once

// Dense numeric kernels behind the autograd primitives.
//
// Every kernel exists twice: `serial::` is the reference, `omp::` splits the
// outermost independent output index across OpenMP threads. Both call the same
// per-element routine, so results are bitwise identical; tests compare them
// directly and bench/ measures the speedup. The unqualified entry points pick
// the OpenMP version once the work exceeds `parallel_threshold()` flops.
//
// Layout is row-major throughout. "acc" kernels add into their output.

#include <cstddef>

namespace epg::kernels {

struct MatmulDims {
  std::size_t m, k, n;
};

/// [batch, channels, time] layout used by the pointwise and temporal convolutions.
struct ConvDims {
  std::size_t batch, c_in, c_out, time;
};

#define EPG_KERNEL_DECLS                                                                       \
  /* c[m,n] = a[m,k] * b[k,n] */                                                               \
  void matmul(const double* a, const double* b, double* c, MatmulDims d);                      \
  /* da[m,k] += dc[m,n] * b[k,n]^T */                                                          \
  void matmul_grad_a(const double* dc, const double* b, double* da, MatmulDims d);             \
  /* db[k,n] += a[m,k]^T * dc[m,n] */                                                          \
  void matmul_grad_b(const double* a, const double* dc, double* db, MatmulDims d);             \
  /* y[b,o,t] = sum_i w[o,i] x[b,i,t] (+ bias[o]) */                                           \
  void pointwise_conv(const double* x, const double* w, const double* bias, double* y,         \
                      ConvDims d);                                                             \
  void pointwise_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d);       \
  void pointwise_conv_grad_w(const double* dy, const double* x, double* dw, double* dbias,     \
                             ConvDims d);                                                      \
  /* y[n,o,t] = sum_i sum_k w[o,i,k] x[n,i,t+k-1], zero outside [0,T) */                       \
  void temporal_conv(const double* x, const double* w, double* y, ConvDims d);                 \
  void temporal_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d);        \
  void temporal_conv_grad_w(const double* dy, const double* x, double* dw, ConvDims d);

namespace serial {
EPG_KERNEL_DECLS
}  // namespace serial

namespace omp {
EPG_KERNEL_DECLS
}  // namespace omp

EPG_KERNEL_DECLS

#undef EPG_KERNEL_DECLS

/// Flop count above which the dispatching entry points go parallel.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t flops);

/// Kernel taps of the temporal convolution (3x1 kernel, same padding).
inline constexpr std::size_t kTemporalTaps = 3;

}  // namespace epg::kernels
