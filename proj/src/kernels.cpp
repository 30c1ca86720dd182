#include "turbo/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace turbo::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

// cols[K, P] for one image, K = Cin*k*k ordered (c, ki, kj).
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const int ho = g.out_h(), wo = g.out_w();
  const int p = ho * wo;
  for (int c = 0; c < g.in_channels; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* xr = xc + static_cast<std::size_t>(iy) * g.in_w;
          if (g.stride == 1) {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox - g.pad + kj;
              out[ox] = (ix >= 0 && ix < g.in_w) ? xr[ix] : 0.0;
            }
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              out[ox] = (ix >= 0 && ix < g.in_w) ? xr[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Scatter-add of cols back into an image; dx must be zeroed.
void col2im(const ConvGeometry& g, const double* cols, double* dx) {
  const int ho = g.out_h(), wo = g.out_w();
  const int p = ho * wo;
  for (int c = 0; c < g.in_channels; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.in_h) continue;
          double* xr = xc + static_cast<std::size_t>(iy) * g.in_w;
          const double* in = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.in_w) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y) {
  const int p = g.out_h() * g.out_w();
  const int kdim = g.patch();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * p;
  ConstMapMat wm(w, g.out_channels, kdim);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    MapMat ym(y + n * out_stride, g.out_channels, p);
    if (g.pointwise()) {
      ym.noalias() = wm * ConstMapMat(x + n * in_stride, kdim, p);
    } else {
      auto& cols = scratch();
      cols.resize(static_cast<std::size_t>(kdim) * p);
      im2col(g, x + n * in_stride, cols.data());
      ym.noalias() = wm * ConstMapMat(cols.data(), kdim, p);
    }
    if (bias != nullptr) {
      for (int o = 0; o < g.out_channels; ++o) ym.row(o).array() += bias[o];
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const int p = g.out_h() * g.out_w();
  const int kdim = g.patch();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * p;
  ConstMapMat wm(w, g.out_channels, kdim);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    ConstMapMat dym(dy + n * out_stride, g.out_channels, p);
    if (g.pointwise()) {
      MapMat(dx + n * in_stride, kdim, p).noalias() = wm.transpose() * dym;
    } else {
      auto& cols = scratch();
      cols.resize(static_cast<std::size_t>(kdim) * p);
      MapMat(cols.data(), kdim, p).noalias() = wm.transpose() * dym;
      std::fill(dx + n * in_stride, dx + (n + 1) * in_stride, 0.0);
      col2im(g, cols.data(), dx + n * in_stride);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw, double* dbias) {
  const int p = g.out_h() * g.out_w();
  const int kdim = g.patch();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * p;
  const std::size_t wsize = static_cast<std::size_t>(g.out_channels) * kdim;
  // Per-image partials, reduced afterwards in image order.
  std::vector<double> partial(wsize * g.batch);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    ConstMapMat dym(dy + n * out_stride, g.out_channels, p);
    MapMat pw(partial.data() + n * wsize, g.out_channels, kdim);
    if (g.pointwise()) {
      pw.noalias() = dym * ConstMapMat(x + n * in_stride, kdim, p).transpose();
    } else {
      auto& cols = scratch();
      cols.resize(static_cast<std::size_t>(kdim) * p);
      im2col(g, x + n * in_stride, cols.data());
      pw.noalias() = dym * ConstMapMat(cols.data(), kdim, p).transpose();
    }
  }
  std::copy(partial.begin(), partial.begin() + static_cast<std::ptrdiff_t>(wsize), dw);
  for (int n = 1; n < g.batch; ++n) {
    const double* src = partial.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += src[i];
  }
  if (dbias != nullptr) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < g.out_channels; ++o) {
      double acc = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        const double* row = dy + n * out_stride + static_cast<std::size_t>(o) * p;
        for (int i = 0; i < p; ++i) acc += row[i];
      }
      dbias[o] = acc;
    }
  }
}

void gemm(int m, int n, int k, const double* a, bool trans_a, const double* b, bool trans_b, double* c) {
  MapMat cm(c, m, n);
  // Rows of C are split into fixed-size chunks, independent of the thread
  // count, so each chunk's GEMM blocking (and rounding) never changes.
  constexpr int kChunk = 32;
  const int chunks = (m + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static) if (chunks > 1)
  for (int t = 0; t < chunks; ++t) {
    const int r0 = t * kChunk;
    const int rows = std::min(kChunk, m - r0);
    RowMat left = trans_a ? RowMat(ConstMapMat(a, k, m).middleCols(r0, rows).transpose())
                          : RowMat(ConstMapMat(a, m, k).middleRows(r0, rows));
    if (trans_b)
      cm.middleRows(r0, rows).noalias() = left * ConstMapMat(b, n, k).transpose();
    else
      cm.middleRows(r0, rows).noalias() = left * ConstMapMat(b, k, n);
  }
}

}  // namespace turbo::kernels
