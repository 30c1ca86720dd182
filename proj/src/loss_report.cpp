#include "turbo/loss_report.hpp"

#include <stdexcept>

namespace turbo {

void LossReport::add(const std::string& name, double value, double weight) {
  items.push_back({name, value, weight});
  total += weight * value;
}

bool LossReport::has(const std::string& name) const {
  for (const auto& it : items)
    if (it.name == name) return true;
  return false;
}

double LossReport::value(const std::string& name) const {
  for (const auto& it : items)
    if (it.name == name) return it.value;
  throw std::out_of_range("loss report has no term '" + name + "'");
}

double LossReport::weighted_sum() const {
  double s = 0.0;
  for (const auto& it : items) s += it.weight * it.value;
  return s;
}

void LossReport::merge(const LossReport& other, const std::string& prefix, double scale) {
  for (const auto& it : other.items) add(prefix + it.name, it.value, it.weight * scale);
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& it : items) terms.push_back({{"name", it.name}, {"value", it.value}, {"weight", it.weight}});
  return {{"terms", terms}, {"total", total}, {"meta", meta}};
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  for (const auto& t : j.at("terms")) r.items.push_back({t.at("name"), t.at("value"), t.at("weight")});
  r.total = j.at("total").get<double>();
  if (j.contains("meta")) r.meta = j.at("meta");
  return r;
}

}  // namespace turbo
