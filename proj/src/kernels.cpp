#include "epg/kernels.hpp"

#include <atomic>
#include <cstdint>

namespace epg::kernels {
namespace {

std::atomic<std::size_t> g_threshold{1u << 18};

// Per-output-row routines shared by both execution policies. Each one writes a
// disjoint slice of the output.

inline void matmul_row(const double* __restrict a, const double* __restrict b, double* __restrict c, MatmulDims d, std::size_t i) {
  double* crow = c + i * d.n;
  for (std::size_t j = 0; j < d.n; ++j) crow[j] = 0.0;
  for (std::size_t p = 0; p < d.k; ++p) {
    const double aip = a[i * d.k + p];
    const double* brow = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) crow[j] += aip * brow[j];
  }
}

inline void matmul_grad_a_row(const double* __restrict dc, const double* __restrict b, double* __restrict da, MatmulDims d,
                              std::size_t i) {
  const double* dcrow = dc + i * d.n;
  for (std::size_t p = 0; p < d.k; ++p) {
    const double* brow = b + p * d.n;
    double s = 0.0;
    for (std::size_t j = 0; j < d.n; ++j) s += dcrow[j] * brow[j];
    da[i * d.k + p] += s;
  }
}

inline void matmul_grad_b_row(const double* __restrict a, const double* __restrict dc, double* __restrict db, MatmulDims d,
                              std::size_t p) {
  double* dbrow = db + p * d.n;
  for (std::size_t i = 0; i < d.m; ++i) {
    const double aip = a[i * d.k + p];
    const double* dcrow = dc + i * d.n;
    for (std::size_t j = 0; j < d.n; ++j) dbrow[j] += aip * dcrow[j];
  }
}

// One (batch, out-channel) plane.
inline void pointwise_plane(const double* __restrict x, const double* __restrict w, const double* __restrict bias, double* __restrict y,
                            ConvDims d, std::size_t b, std::size_t o) {
  double* yrow = y + (b * d.c_out + o) * d.time;
  const double init = bias ? bias[o] : 0.0;
  for (std::size_t t = 0; t < d.time; ++t) yrow[t] = init;
  for (std::size_t i = 0; i < d.c_in; ++i) {
    const double woi = w[o * d.c_in + i];
    const double* xrow = x + (b * d.c_in + i) * d.time;
    for (std::size_t t = 0; t < d.time; ++t) yrow[t] += woi * xrow[t];
  }
}

inline void pointwise_grad_x_plane(const double* __restrict dy, const double* __restrict w, double* __restrict dx, ConvDims d,
                                   std::size_t b, std::size_t i) {
  double* dxrow = dx + (b * d.c_in + i) * d.time;
  for (std::size_t o = 0; o < d.c_out; ++o) {
    const double woi = w[o * d.c_in + i];
    const double* dyrow = dy + (b * d.c_out + o) * d.time;
    for (std::size_t t = 0; t < d.time; ++t) dxrow[t] += woi * dyrow[t];
  }
}

inline void pointwise_grad_w_row(const double* __restrict dy, const double* __restrict x, double* __restrict dw, double* __restrict dbias,
                                 ConvDims d, std::size_t o) {
  for (std::size_t i = 0; i < d.c_in; ++i) {
    double s = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* dyrow = dy + (b * d.c_out + o) * d.time;
      const double* xrow = x + (b * d.c_in + i) * d.time;
      for (std::size_t t = 0; t < d.time; ++t) s += dyrow[t] * xrow[t];
    }
    dw[o * d.c_in + i] += s;
  }
  if (dbias) {
    double s = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* dyrow = dy + (b * d.c_out + o) * d.time;
      for (std::size_t t = 0; t < d.time; ++t) s += dyrow[t];
    }
    dbias[o] += s;
  }
}

inline void temporal_plane(const double* __restrict x, const double* __restrict w, double* __restrict y, ConvDims d, std::size_t n,
                           std::size_t o) {
  const auto T = static_cast<std::ptrdiff_t>(d.time);
  double* yrow = y + (n * d.c_out + o) * d.time;
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.c_in; ++i) {
      const double* xrow = x + (n * d.c_in + i) * d.time;
      const double* wk = w + (o * d.c_in + i) * kTemporalTaps;
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(kTemporalTaps); ++k) {
        const std::ptrdiff_t s_idx = t + k - 1;
        if (s_idx >= 0 && s_idx < T) s += wk[k] * xrow[s_idx];
      }
    }
    yrow[t] = s;
  }
}

inline void temporal_grad_x_plane(const double* __restrict dy, const double* __restrict w, double* __restrict dx, ConvDims d,
                                  std::size_t n, std::size_t i) {
  const auto T = static_cast<std::ptrdiff_t>(d.time);
  double* dxrow = dx + (n * d.c_in + i) * d.time;
  for (std::ptrdiff_t s_idx = 0; s_idx < T; ++s_idx) {
    double s = 0.0;
    for (std::size_t o = 0; o < d.c_out; ++o) {
      const double* dyrow = dy + (n * d.c_out + o) * d.time;
      const double* wk = w + (o * d.c_in + i) * kTemporalTaps;
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(kTemporalTaps); ++k) {
        const std::ptrdiff_t t = s_idx - k + 1;
        if (t >= 0 && t < T) s += wk[k] * dyrow[t];
      }
    }
    dxrow[s_idx] += s;
  }
}

inline void temporal_grad_w_row(const double* __restrict dy, const double* __restrict x, double* __restrict dw, ConvDims d,
                                std::size_t o) {
  const auto T = static_cast<std::ptrdiff_t>(d.time);
  for (std::size_t i = 0; i < d.c_in; ++i) {
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(kTemporalTaps); ++k) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.batch; ++n) {
        const double* dyrow = dy + (n * d.c_out + o) * d.time;
        const double* xrow = x + (n * d.c_in + i) * d.time;
        for (std::ptrdiff_t t = 0; t < T; ++t) {
          const std::ptrdiff_t s_idx = t + k - 1;
          if (s_idx >= 0 && s_idx < T) s += dyrow[t] * xrow[s_idx];
        }
      }
      dw[(o * d.c_in + i) * kTemporalTaps + k] += s;
    }
  }
}

template <bool Parallel, typename Body>
void for_each_index(std::size_t count, Body&& body) {
  const auto n = static_cast<std::int64_t>(count);
  if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < n; ++i) body(static_cast<std::size_t>(i));
  }
}

template <bool P>
struct Impl {
  static void matmul(const double* a, const double* b, double* c, MatmulDims d) {
    for_each_index<P>(d.m, [&](std::size_t i) { matmul_row(a, b, c, d, i); });
  }
  static void matmul_grad_a(const double* dc, const double* b, double* da, MatmulDims d) {
    for_each_index<P>(d.m, [&](std::size_t i) { matmul_grad_a_row(dc, b, da, d, i); });
  }
  static void matmul_grad_b(const double* a, const double* dc, double* db, MatmulDims d) {
    for_each_index<P>(d.k, [&](std::size_t p) { matmul_grad_b_row(a, dc, db, d, p); });
  }
  static void pointwise_conv(const double* x, const double* w, const double* bias, double* y,
                             ConvDims d) {
    for_each_index<P>(d.batch * d.c_out, [&](std::size_t bo) {
      pointwise_plane(x, w, bias, y, d, bo / d.c_out, bo % d.c_out);
    });
  }
  static void pointwise_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {
    for_each_index<P>(d.batch * d.c_in, [&](std::size_t bi) {
      pointwise_grad_x_plane(dy, w, dx, d, bi / d.c_in, bi % d.c_in);
    });
  }
  static void pointwise_conv_grad_w(const double* dy, const double* x, double* dw, double* dbias,
                                    ConvDims d) {
    for_each_index<P>(d.c_out, [&](std::size_t o) { pointwise_grad_w_row(dy, x, dw, dbias, d, o); });
  }
  static void temporal_conv(const double* x, const double* w, double* y, ConvDims d) {
    for_each_index<P>(d.batch * d.c_out, [&](std::size_t no) {
      temporal_plane(x, w, y, d, no / d.c_out, no % d.c_out);
    });
  }
  static void temporal_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {
    for_each_index<P>(d.batch * d.c_in, [&](std::size_t ni) {
      temporal_grad_x_plane(dy, w, dx, d, ni / d.c_in, ni % d.c_in);
    });
  }
  static void temporal_conv_grad_w(const double* dy, const double* x, double* dw, ConvDims d) {
    for_each_index<P>(d.c_out, [&](std::size_t o) { temporal_grad_w_row(dy, x, dw, d, o); });
  }
};

std::size_t flops(MatmulDims d) { return d.m * d.k * d.n; }
std::size_t flops(ConvDims d) { return d.batch * d.c_in * d.c_out * d.time; }

template <typename Dims>
bool go_parallel(Dims d) {
  return flops(d) >= g_threshold.load(std::memory_order_relaxed);
}

}  // namespace

std::size_t parallel_threshold() { return g_threshold.load(); }
void set_parallel_threshold(std::size_t f) { g_threshold.store(f); }

#define EPG_DEFINE_POLICY(ns, P)                                                                   \
  namespace ns {                                                                                   \
  void matmul(const double* a, const double* b, double* c, MatmulDims d) {                        \
    Impl<P>::matmul(a, b, c, d);                                                                   \
  }                                                                                                \
  void matmul_grad_a(const double* dc, const double* b, double* da, MatmulDims d) {               \
    Impl<P>::matmul_grad_a(dc, b, da, d);                                                          \
  }                                                                                                \
  void matmul_grad_b(const double* a, const double* dc, double* db, MatmulDims d) {               \
    Impl<P>::matmul_grad_b(a, dc, db, d);                                                          \
  }                                                                                                \
  void pointwise_conv(const double* x, const double* w, const double* bias, double* y,            \
                      ConvDims d) {                                                                \
    Impl<P>::pointwise_conv(x, w, bias, y, d);                                                     \
  }                                                                                                \
  void pointwise_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {         \
    Impl<P>::pointwise_conv_grad_x(dy, w, dx, d);                                                  \
  }                                                                                                \
  void pointwise_conv_grad_w(const double* dy, const double* x, double* dw, double* dbias,        \
                             ConvDims d) {                                                         \
    Impl<P>::pointwise_conv_grad_w(dy, x, dw, dbias, d);                                           \
  }                                                                                                \
  void temporal_conv(const double* x, const double* w, double* y, ConvDims d) {                   \
    Impl<P>::temporal_conv(x, w, y, d);                                                            \
  }                                                                                                \
  void temporal_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {          \
    Impl<P>::temporal_conv_grad_x(dy, w, dx, d);                                                   \
  }                                                                                                \
  void temporal_conv_grad_w(const double* dy, const double* x, double* dw, ConvDims d) {          \
    Impl<P>::temporal_conv_grad_w(dy, x, dw, d);                                                   \
  }                                                                                                \
  }

EPG_DEFINE_POLICY(serial, false)
EPG_DEFINE_POLICY(omp, true)

#undef EPG_DEFINE_POLICY

#define EPG_DISPATCH(name, dims, ...) \
  (go_parallel(dims) ? omp::name(__VA_ARGS__) : serial::name(__VA_ARGS__))

void matmul(const double* a, const double* b, double* c, MatmulDims d) {
  EPG_DISPATCH(matmul, d, a, b, c, d);
}
void matmul_grad_a(const double* dc, const double* b, double* da, MatmulDims d) {
  EPG_DISPATCH(matmul_grad_a, d, dc, b, da, d);
}
void matmul_grad_b(const double* a, const double* dc, double* db, MatmulDims d) {
  EPG_DISPATCH(matmul_grad_b, d, a, dc, db, d);
}
void pointwise_conv(const double* x, const double* w, const double* bias, double* y, ConvDims d) {
  EPG_DISPATCH(pointwise_conv, d, x, w, bias, y, d);
}
void pointwise_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {
  EPG_DISPATCH(pointwise_conv_grad_x, d, dy, w, dx, d);
}
void pointwise_conv_grad_w(const double* dy, const double* x, double* dw, double* dbias,
                           ConvDims d) {
  EPG_DISPATCH(pointwise_conv_grad_w, d, dy, x, dw, dbias, d);
}
void temporal_conv(const double* x, const double* w, double* y, ConvDims d) {
  EPG_DISPATCH(temporal_conv, d, x, w, y, d);
}
void temporal_conv_grad_x(const double* dy, const double* w, double* dx, ConvDims d) {
  EPG_DISPATCH(temporal_conv_grad_x, d, dy, w, dx, d);
}
void temporal_conv_grad_w(const double* dy, const double* x, double* dw, ConvDims d) {
  EPG_DISPATCH(temporal_conv_grad_w, d, dy, x, dw, d);
}

#undef EPG_DISPATCH

}  // namespace epg::kernels
