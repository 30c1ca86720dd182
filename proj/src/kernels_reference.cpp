#include "turbo/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace turbo::kernels::reference {

namespace {
std::size_t idx(int n, int c, int h, int w, int cs, int hs, int ws) {
  return ((static_cast<std::size_t>(n) * cs + c) * hs + h) * ws + w;
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y) {
  const int ho = g.out_h(), wo = g.out_w();
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? bias[o] : 0.0;
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel; ++ki)
              for (int kj = 0; kj < g.kernel; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w[idx(o, c, ki, kj, g.in_channels, g.kernel, g.kernel)] *
                       x[idx(n, c, iy, ix, g.in_channels, g.in_h, g.in_w)];
              }
          y[idx(n, o, oy, ox, g.out_channels, ho, wo)] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const int ho = g.out_h(), wo = g.out_w();
  std::fill(dx, dx + static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w, 0.0);
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double d = dy[idx(n, o, oy, ox, g.out_channels, ho, wo)];
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel; ++ki)
              for (int kj = 0; kj < g.kernel; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                dx[idx(n, c, iy, ix, g.in_channels, g.in_h, g.in_w)] +=
                    d * w[idx(o, c, ki, kj, g.in_channels, g.kernel, g.kernel)];
              }
        }
}

void conv2d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw, double* dbias) {
  const int ho = g.out_h(), wo = g.out_w();
  std::fill(dw, dw + static_cast<std::size_t>(g.out_channels) * g.patch(), 0.0);
  if (dbias) std::fill(dbias, dbias + g.out_channels, 0.0);
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double d = dy[idx(n, o, oy, ox, g.out_channels, ho, wo)];
          if (dbias) dbias[o] += d;
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel; ++ki)
              for (int kj = 0; kj < g.kernel; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                dw[idx(o, c, ki, kj, g.in_channels, g.kernel, g.kernel)] +=
                    d * x[idx(n, c, iy, ix, g.in_channels, g.in_h, g.in_w)];
              }
        }
}

void gemm(int m, int n, int k, const double* a, bool trans_a, const double* b, bool trans_b, double* c) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
        const double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
        acc += av * bv;
      }
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
}

}  // namespace turbo::kernels::reference
