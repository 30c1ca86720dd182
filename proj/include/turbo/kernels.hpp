#pragma once

// Convolution and matrix-product kernels.
//
// Two implementations share one contract:
//   kernels::*            OpenMP-parallel, im2col + blocked GEMM
//   kernels::reference::* serial direct loops, kept as the test oracle
//
// Every parallel loop partitions output elements, and every reduction runs
// in a fixed order, so results are bitwise identical for any thread count.

namespace turbo::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// y[N,Cout,Ho,Wo] = conv(x[N,Cin,H,W], w[Cout,Cin,k,k]) + bias[Cout]. bias may be null.
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);
// dx = conv^T(dy, w). Overwrites dx.
void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
// dw, dbias from dy and x. Overwrites dw and dbias (dbias may be null).
void conv2d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw, double* dbias);

// Row-major C[M,N] = op(A) * op(B); trans flags select A^T / B^T.
void gemm(int m, int n, int k, const double* a, bool trans_a, const double* b, bool trans_b, double* c);

namespace reference {
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y);
void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
void conv2d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw, double* dbias);
void gemm(int m, int n, int k, const double* a, bool trans_a, const double* b, bool trans_b, double* c);
}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace turbo::kernels
