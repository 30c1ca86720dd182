#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "turbo/tensor.hpp"

namespace turbo::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

/// Handle to a node in the dynamic graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient after backward(); zeros if nothing reached this node.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar root.
void backward(const Var& root);

/// Builds a result node; returns a constant when no input needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// ---- differentiable ops -------------------------------------------------

Var detach(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
/// mean |a - b|
Var mean_abs_diff(const Var& a, const Var& b);
Var reshape(const Var& a, Shape shape);
/// a[M,K] * b[K,N]
Var matmul(const Var& a, const Var& b);
/// x[N,in] * w[out,in]^T + b[out]; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
/// x[N,Cin,H,W] with w[Cout,Cin,k,k]; bias may be undefined.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
/// x * (1 + scale) + shift with scale_shift[N, 2C] broadcast over H, W.
Var film(const Var& x, const Var& scale_shift);
/// Nearest-neighbour 2x upsampling cropped to (out_h, out_w).
Var upsample2x(const Var& x, int out_h, int out_w);
/// [N,C,H,W] -> [N,C]
Var spatial_mean(const Var& x);
/// Per-pixel division by the channel-vector norm.
Var channel_unit_normalize(const Var& x, double eps = 1e-10);
/// (x - shift[c]) * gain[c], both constant.
Var channel_affine(const Var& x, std::span<const double> shift, std::span<const double> gain);
/// Mean binary cross-entropy on logits clamped to [-clamp, clamp].
Var bce_with_logits(const Var& logits, double target, double clamp = 30.0);
/// Row-wise cosine similarity of a[N,D], b[N,D] -> [N].
Var row_cosine(const Var& a, const Var& b, double eps = 1e-12);
/// table[R,D] rows selected by ids -> [ids.size(), D].
Var gather_rows(const Var& table, std::span<const int> ids);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace turbo::ag
