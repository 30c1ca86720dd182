#include "turbo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "turbo/errors.hpp"
#include "turbo/kernels.hpp"

namespace turbo::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_) return Tensor();
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled)
    for (const Var& v : inputs) needs = needs || v.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Var& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      // Interior gradients are not needed once propagated.
      node->grad = Tensor();
    }
  }
}

// ---- elementwise --------------------------------------------------------

Var detach(const Var& a) { return Var(a.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (in(self, k).requires_grad) in(self, k).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) {
      Tensor g = self.grad;
      for (double& v : g.values()) v = -v;
      in(self, 1).accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!in(self, k).requires_grad) continue;
      const Tensor& other = in(self, 1 - k).value;
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
      in(self, k).accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.values()) v *= s;
    in(self, 0).accumulate(g);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return make_op(std::move(out), {a}, [](Node& self) { in(self, 0).accumulate(self.grad); });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= v;
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor g = self.grad;
    const Tensor& x = in(self, 0).value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 2.0 * x[i];
    in(self, 0).accumulate(g);
  });
}

Var silu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v * sigmoid(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor g = self.grad;
    const Tensor& x = in(self, 0).value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(x[i]);
      g[i] *= s * (1.0 + x[i] * (1.0 - s));
    }
    in(self, 0).accumulate(g);
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - self.value[i] * self.value[i];
    in(self, 0).accumulate(g);
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return make_op(Tensor::scalar(acc), {a}, [](Node& self) {
    in(self, 0).accumulate(Tensor(in(self, 0).value.shape(), self.grad[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return make_op(Tensor::scalar(acc / n), {a}, [n](Node& self) {
    in(self, 0).accumulate(Tensor(in(self, 0).value.shape(), self.grad[0] / n));
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const double n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  return make_op(Tensor::scalar(acc / n), {a, b}, [n](Node& self) {
    const Tensor& x = in(self, 0).value;
    const Tensor& y = in(self, 1).value;
    Tensor g(x.shape());
    const double s = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = x[i] - y[i];
      g[i] = d > 0 ? s : (d < 0 ? -s : 0.0);
    }
    if (in(self, 0).requires_grad) in(self, 0).accumulate(g);
    if (in(self, 1).requires_grad) {
      for (double& v : g.values()) v = -v;
      in(self, 1).accumulate(g);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& self) {
    in(self, 0).accumulate(self.grad.reshaped(in(self, 0).value.shape()));
  });
}

// ---- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  kernels::gemm(m, n, k, a.value().data(), false, b.value().data(), false, out.data());
  return make_op(std::move(out), {a, b}, [m, n, k](Node& self) {
    if (in(self, 0).requires_grad) {
      Tensor g({m, k});
      kernels::gemm(m, k, n, self.grad.data(), false, in(self, 1).value.data(), true, g.data());
      in(self, 0).accumulate(g);
    }
    if (in(self, 1).requires_grad) {
      Tensor g({k, n});
      kernels::gemm(k, n, m, in(self, 0).value.data(), true, self.grad.data(), false, g.data());
      in(self, 1).accumulate(g);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const int n = x.dim(0), in_f = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in_f) throw ShapeError("linear: " + shape_str(x.shape()) + " with weight " + shape_str(w.shape()));
  if (b.defined() && b.value().size() != static_cast<std::size_t>(out_f)) throw ShapeError("linear: bias size");
  Tensor out({n, out_f});
  kernels::gemm(n, out_f, in_f, x.value().data(), false, w.value().data(), true, out.data());
  if (b.defined())
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_f; ++o) out[static_cast<std::size_t>(i) * out_f + o] += b.value()[o];
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  const bool has_bias = b.defined();
  return make_op(std::move(out), std::move(inputs), [n, in_f, out_f, has_bias](Node& self) {
    if (in(self, 0).requires_grad) {
      Tensor g({n, in_f});
      kernels::gemm(n, in_f, out_f, self.grad.data(), false, in(self, 1).value.data(), false, g.data());
      in(self, 0).accumulate(g);
    }
    if (in(self, 1).requires_grad) {
      Tensor g({out_f, in_f});
      kernels::gemm(out_f, in_f, n, self.grad.data(), true, in(self, 0).value.data(), false, g.data());
      in(self, 1).accumulate(g);
    }
    if (has_bias && in(self, 2).requires_grad) {
      Tensor g({out_f}, 0.0);
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_f; ++o) g[o] += self.grad[static_cast<std::size_t>(i) * out_f + o];
      in(self, 2).accumulate(g);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (w.dim(1) != g.in_channels || w.dim(3) != g.kernel)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(g.out_channels))
    throw ShapeError("conv2d: bias size");
  if (g.out_h() < 1 || g.out_w() < 1) throw ShapeError("conv2d: empty output for " + shape_str(x.shape()));
  Tensor out({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.value().data(), w.value().data(), bias.defined() ? bias.value().data() : nullptr,
                          out.data());
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op(std::move(out), std::move(inputs), [g, has_bias](Node& self) {
    Node& xn = in(self, 0);
    Node& wn = in(self, 1);
    if (xn.requires_grad) {
      Tensor dx(xn.value.shape());
      kernels::conv2d_backward_input(g, self.grad.data(), wn.value.data(), dx.data());
      xn.accumulate(dx);
    }
    const bool need_b = has_bias && in(self, 2).requires_grad;
    if (wn.requires_grad || need_b) {
      Tensor dw(wn.value.shape());
      Tensor db({g.out_channels});
      kernels::conv2d_backward_weight(g, self.grad.data(), xn.value.data(), dw.data(), need_b ? db.data() : nullptr);
      if (wn.requires_grad) wn.accumulate(dw);
      if (need_b) in(self, 2).accumulate(db);
    }
  });
}

// ---- feature-map ops -----------------------------------------------------

Var film(const Var& x, const Var& scale_shift) {
  require_rank(x, 4, "film");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (scale_shift.value().rank() != 2 || scale_shift.dim(0) != n || scale_shift.dim(1) != 2 * c)
    throw ShapeError("film: modulation " + shape_str(scale_shift.shape()) + " for input " + shape_str(x.shape()));
  Tensor out = x.value();
  const Tensor& ss = scale_shift.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double gain = 1.0 + ss[static_cast<std::size_t>(i) * 2 * c + ch];
      const double shift = ss[static_cast<std::size_t>(i) * 2 * c + c + ch];
      double* p = out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) p[k] = p[k] * gain + shift;
    }
  return make_op(std::move(out), {x, scale_shift}, [n, c, hw](Node& self) {
    const Tensor& xv = in(self, 0).value;
    const Tensor& ss = in(self, 1).value;
    if (in(self, 0).requires_grad) {
      Tensor g = self.grad;
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double gain = 1.0 + ss[static_cast<std::size_t>(i) * 2 * c + ch];
          double* p = g.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          for (int k = 0; k < hw; ++k) p[k] *= gain;
        }
      in(self, 0).accumulate(g);
    }
    if (in(self, 1).requires_grad) {
      Tensor g(ss.shape());
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
          double dg = 0.0, db = 0.0;
          for (int k = 0; k < hw; ++k) {
            dg += self.grad[off + k] * xv[off + k];
            db += self.grad[off + k];
          }
          g[static_cast<std::size_t>(i) * 2 * c + ch] = dg;
          g[static_cast<std::size_t>(i) * 2 * c + c + ch] = db;
        }
      in(self, 1).accumulate(g);
    }
  });
}

Var upsample2x(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "upsample2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h > 2 * h || out_w > 2 * w || out_h < 1 || out_w < 1)
    throw ShapeError("upsample2x: target " + std::to_string(out_h) + "x" + std::to_string(out_w) + " from " +
                     shape_str(x.shape()));
  Tensor out({n, c, out_h, out_w});
  const Tensor& xv = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) out.at(i, ch, y, xx) = xv.at(i, ch, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [](Node& self) {
    const Shape& s = in(self, 0).value.shape();
    Tensor g(s);
    const Shape& os = self.value.shape();
    for (int i = 0; i < os[0]; ++i)
      for (int ch = 0; ch < os[1]; ++ch)
        for (int y = 0; y < os[2]; ++y)
          for (int xx = 0; xx < os[3]; ++xx) g.at(i, ch, y / 2, xx / 2) += self.grad.at(i, ch, y, xx);
    in(self, 0).accumulate(g);
  });
}

Var spatial_mean(const Var& x) {
  require_rank(x, 4, "spatial_mean");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    double acc = 0.0;
    const double* p = x.value().data() + static_cast<std::size_t>(i) * hw;
    for (int k = 0; k < hw; ++k) acc += p[k];
    out[i] = acc / hw;
  }
  return make_op(std::move(out), {x}, [n, c, hw](Node& self) {
    Tensor g(in(self, 0).value.shape());
    for (int i = 0; i < n * c; ++i) {
      const double v = self.grad[i] / hw;
      double* p = g.data() + static_cast<std::size_t>(i) * hw;
      for (int k = 0; k < hw; ++k) p[k] = v;
    }
    in(self, 0).accumulate(g);
  });
}

Var channel_unit_normalize(const Var& x, double eps) {
  require_rank(x, 4, "channel_unit_normalize");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = x.value();
  Tensor inv_norm({n, hw});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < hw; ++k) {
      double ss = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double v = out[(static_cast<std::size_t>(i) * c + ch) * hw + k];
        ss += v * v;
      }
      const double inv = 1.0 / std::sqrt(ss + eps);
      inv_norm[static_cast<std::size_t>(i) * hw + k] = inv;
      for (int ch = 0; ch < c; ++ch) out[(static_cast<std::size_t>(i) * c + ch) * hw + k] *= inv;
    }
  return make_op(std::move(out), {x}, [n, c, hw, inv_norm](Node& self) {
    // d(x/r) = (g - y <g,y>) / r with y = x/r
    Tensor g(self.value.shape());
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < hw; ++k) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t o = (static_cast<std::size_t>(i) * c + ch) * hw + k;
          dot += self.grad[o] * self.value[o];
        }
        const double inv = inv_norm[static_cast<std::size_t>(i) * hw + k];
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t o = (static_cast<std::size_t>(i) * c + ch) * hw + k;
          g[o] = (self.grad[o] - self.value[o] * dot) * inv;
        }
      }
    in(self, 0).accumulate(g);
  });
}

Var channel_affine(const Var& x, std::span<const double> shift, std::span<const double> gain) {
  require_rank(x, 4, "channel_affine");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (shift.size() != static_cast<std::size_t>(c) || gain.size() != static_cast<std::size_t>(c))
    throw ShapeError("channel_affine: constants do not match channel count");
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      double* p = out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) p[k] = (p[k] - shift[ch]) * gain[ch];
    }
  std::vector<double> gcopy(gain.begin(), gain.end());
  return make_op(std::move(out), {x}, [n, c, hw, gcopy](Node& self) {
    Tensor g = self.grad;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        double* p = g.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int k = 0; k < hw; ++k) p[k] *= gcopy[ch];
      }
    in(self, 0).accumulate(g);
  });
}

Var bce_with_logits(const Var& logits, double target, double clamp) {
  const Tensor& l = logits.value();
  const double n = static_cast<double>(l.size());
  double acc = 0.0;
  for (double v : l.values()) {
    const double c = std::clamp(v, -clamp, clamp);
    acc += target * softplus(-c) + (1.0 - target) * softplus(c);
  }
  return make_op(Tensor::scalar(acc / n), {logits}, [n, target, clamp](Node& self) {
    const Tensor& lv = in(self, 0).value;
    Tensor g(lv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = lv[i];
      if (v < -clamp || v > clamp) continue;  // flat beyond the clamp
      g[i] = self.grad[0] * (sigmoid(v) - target) / n;
    }
    in(self, 0).accumulate(g);
  });
}

Var row_cosine(const Var& a, const Var& b, double eps) {
  require_rank(a, 2, "row_cosine");
  require_same_shape(a, b, "row_cosine");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out({n});
  Tensor norms({n, 2});
  for (int i = 0; i < n; ++i) {
    double ab = 0, aa = 0, bb = 0;
    for (int k = 0; k < d; ++k) {
      const double x = a.value()[static_cast<std::size_t>(i) * d + k];
      const double y = b.value()[static_cast<std::size_t>(i) * d + k];
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    const double na = std::sqrt(aa + eps), nb = std::sqrt(bb + eps);
    norms[static_cast<std::size_t>(i) * 2] = na;
    norms[static_cast<std::size_t>(i) * 2 + 1] = nb;
    out[i] = ab / (na * nb);
  }
  return make_op(std::move(out), {a, b}, [n, d, norms](Node& self) {
    for (std::size_t which = 0; which < 2; ++which) {
      if (!in(self, which).requires_grad) continue;
      const Tensor& u = in(self, which).value;
      const Tensor& v = in(self, 1 - which).value;
      Tensor g(u.shape());
      for (int i = 0; i < n; ++i) {
        const double nu = norms[static_cast<std::size_t>(i) * 2 + which];
        const double nv = norms[static_cast<std::size_t>(i) * 2 + 1 - which];
        const double cosv = self.value[i];
        for (int k = 0; k < d; ++k) {
          const std::size_t o = static_cast<std::size_t>(i) * d + k;
          g[o] = self.grad[i] * (v[o] / (nu * nv) - cosv * u[o] / (nu * nu));
        }
      }
      in(self, which).accumulate(g);
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  const int rows = table.dim(0), d = table.dim(1);
  Tensor out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) throw ValidationError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idcopy(ids.begin(), ids.end());
  return make_op(std::move(out), {table}, [idcopy, d](Node& self) {
    Tensor g(in(self, 0).value.shape());
    for (std::size_t i = 0; i < idcopy.size(); ++i)
      for (int k = 0; k < d; ++k) g[static_cast<std::size_t>(idcopy[i]) * d + k] += self.grad[i * d + k];
    in(self, 0).accumulate(g);
  });
}

}  // namespace turbo::ag
