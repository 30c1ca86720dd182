#pragma once

// Central finite-difference oracle for the autograd engine. It only ever
// calls the forward function, so it shares no code path with backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "turbo/autograd.hpp"
#include "turbo/rng.hpp"

namespace turbo::testing {

struct ProbeResult {
  std::string label;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

inline double relative_error(double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1e-12});
  return std::abs(a - n) / denom;
}

/// Probes `count` random scalars of `params`, comparing d(loss)/d(param) from
/// backward() against (f(p+h) - f(p-h)) / 2h.
inline std::vector<ProbeResult> probe_gradients(const std::function<ag::Var()>& loss_fn, std::vector<ag::Var> params,
                                                int count, std::uint64_t seed, double step = 1e-3) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  ag::Var loss = loss_fn();
  ag::backward(loss);
  std::vector<Tensor> grads;
  for (auto& p : params) grads.push_back(p.grad());

  std::size_t total = 0;
  for (auto& p : params) total += p.value().size();
  Rng rng(seed, 77);
  std::vector<ProbeResult> out;
  for (int i = 0; i < count; ++i) {
    std::size_t flat = static_cast<std::size_t>(rng.next() % total);
    std::size_t which = 0;
    while (flat >= params[which].value().size()) flat -= params[which++].value().size();
    ag::Var& p = params[which];
    const double orig = p.value()[flat];
    double plus, minus;
    {
      ag::NoGradGuard guard;
      p.mutable_value()[flat] = orig + step;
      plus = loss_fn().item();
      p.mutable_value()[flat] = orig - step;
      minus = loss_fn().item();
      p.mutable_value()[flat] = orig;
    }
    ProbeResult r;
    r.label = "param" + std::to_string(which) + "[" + std::to_string(flat) + "]";
    r.analytic = grads[which][flat];
    r.numeric = (plus - minus) / (2.0 * step);
    r.rel_err = relative_error(r.analytic, r.numeric);
    out.push_back(r);
  }
  return out;
}

inline double worst(const std::vector<ProbeResult>& probes) {
  double w = 0.0;
  for (const auto& p : probes) w = std::max(w, p.rel_err);
  return w;
}

}  // namespace turbo::testing
