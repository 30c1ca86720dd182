#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/autograd.hpp"

namespace turbo {

struct LossItem {
  std::string name;
  double value = 0.0;
  double weight = 1.0;
};

/// Named loss terms and their weighted total for one step.
struct LossReport {
  std::vector<LossItem> items;
  double total = 0.0;
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, double value, double weight);
  bool has(const std::string& name) const;
  double value(const std::string& name) const;
  double weighted_sum() const;
  /// Appends another report's items under `prefix`, preserving their weights times `scale`.
  void merge(const LossReport& other, const std::string& prefix = "", double scale = 1.0);
  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
};

/// Differentiable total plus its itemized report.
struct Loss {
  ag::Var total;
  LossReport report;
};

}  // namespace turbo
