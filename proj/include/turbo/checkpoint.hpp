#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/params.hpp"

namespace turbo {

struct TensorRecord {
  std::string name;
  Tensor value;
  bool trainable = false;
};

struct Checkpoint {
  std::vector<TensorRecord> tensors;
  nlohmann::json manifest;  // free-form metadata merged into manifest.json

  const TensorRecord* find(const std::string& name) const;
};

/// Directory layout: manifest.json plus one float32 little-endian file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::vector<TensorRecord> records_from(const ParamStore& store, const std::string& prefix = "");
/// Overwrites values of matching names; throws on shape mismatch or missing names.
void assign_records(ParamStore& store, const std::vector<TensorRecord>& records, const std::string& prefix = "");

/// Stable 64-bit hash of a JSON document, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace turbo
