#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "turbo/autograd.hpp"

namespace turbo {

struct Parameter {
  std::string name;
  ag::Var var;
  bool trainable = false;  // adaptation partition; frozen otherwise
};

/// Named, insertion-ordered parameter collection.
class ParamStore {
 public:
  ag::Var& add(const std::string& name, Tensor init, bool trainable);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ag::Var& get(const std::string& name) const;
  ag::Var& get(const std::string& name);
  bool is_trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<ag::Var> vars(bool trainable) const;
  std::vector<ag::Var> vars_with_prefix(const std::string& prefix) const;

  /// Deep copy: the clone shares no nodes with this store.
  ParamStore clone() const;
  std::uint64_t checksum(bool trainable) const;
  std::size_t scalar_count(bool trainable) const;
  /// Clears requires_grad on everything, then sets it on `vars`.
  void enable_grad_only(const std::vector<ag::Var>& vars);
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<ag::Var> params, AdamConfig config);
  void step();
  void zero_grad();
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace turbo
