#include "turbo/params.hpp"

#include <cmath>

#include "turbo/errors.hpp"

namespace turbo {

ag::Var& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw ValidationError("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back({name, ag::Var(std::move(init), false), trainable});
  return params_.back().var;
}

const ag::Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return params_[it->second].var;
}

ag::Var& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return params_[it->second].var;
}

bool ParamStore::is_trainable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return params_[it->second].trainable;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  params_[it->second].trainable = trainable;
}

std::vector<ag::Var> ParamStore::vars(bool trainable) const {
  std::vector<ag::Var> out;
  for (const auto& p : params_)
    if (p.trainable == trainable) out.push_back(p.var);
  return out;
}

std::vector<ag::Var> ParamStore::vars_with_prefix(const std::string& prefix) const {
  std::vector<ag::Var> out;
  for (const auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.var);
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add(p.name, p.var.value(), p.trainable);
  return out;
}

std::uint64_t ParamStore::checksum(bool trainable) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_)
    if (p.trainable == trainable) h = fnv1a(p.var.value().values(), h);
  return h;
}

std::size_t ParamStore::scalar_count(bool trainable) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable == trainable) n += p.var.value().size();
  return n;
}

void ParamStore::enable_grad_only(const std::vector<ag::Var>& vars) {
  for (auto& p : params_) {
    p.var.set_requires_grad(false);
    p.var.zero_grad();
  }
  for (const auto& v : vars) {
    ag::Var copy = v;
    copy.set_requires_grad(true);
  }
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Adam::Adam(std::vector<ag::Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var& p = params_[i];
    if (!p.has_grad()) continue;
    const Tensor g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double update = config_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
      w[k] -= update;
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace turbo
