#include "turbo/checkpoint.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>

#include "turbo/errors.hpp"

namespace turbo {

namespace fs = std::filesystem;

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

std::string file_name_for(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
  return out + ".f32";
}

void write_f32_le(const fs::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (double v : t.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

Tensor read_f32_le(const fs::path& path, const Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  Tensor t(shape);
  for (double& v : t.values()) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw ShapeError("truncated tensor file " + path.string());
    const std::uint32_t bits = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ShapeError("tensor file larger than shape: " + path.string());
  return t;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  nlohmann::json manifest = ckpt.manifest.is_object() ? ckpt.manifest : nlohmann::json::object();
  manifest["format"] = "turbo-i2i-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32-le";
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    const std::string file = file_name_for(t.name);
    write_f32_le(dir / file, t.value);
    list.push_back({{"name", t.name}, {"file", file}, {"shape", t.value.shape()},
                    {"partition", t.trainable ? "trainable" : "frozen"}});
  }
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing manifest.json in " + dir.string());
  Checkpoint ckpt;
  is >> ckpt.manifest;
  if (ckpt.manifest.value("format", "") != "turbo-i2i-checkpoint")
    throw ValidationError("not a turbo-i2i checkpoint: " + dir.string());
  for (const auto& entry : ckpt.manifest.at("tensors")) {
    TensorRecord rec;
    rec.name = entry.at("name").get<std::string>();
    rec.trainable = entry.at("partition").get<std::string>() == "trainable";
    rec.value = read_f32_le(dir / entry.at("file").get<std::string>(), entry.at("shape").get<Shape>());
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

std::vector<TensorRecord> records_from(const ParamStore& store, const std::string& prefix) {
  std::vector<TensorRecord> out;
  for (const auto& p : store.all()) out.push_back({prefix + p.name, p.var.value(), p.trainable});
  return out;
}

void assign_records(ParamStore& store, const std::vector<TensorRecord>& records, const std::string& prefix) {
  std::size_t matched = 0;
  for (const auto& rec : records) {
    if (rec.name.rfind(prefix, 0) != 0) continue;
    const std::string name = rec.name.substr(prefix.size());
    if (!store.contains(name)) continue;
    ag::Var& v = store.get(name);
    if (v.shape() != rec.value.shape())
      throw ShapeError("checkpoint tensor " + rec.name + " has shape " + shape_str(rec.value.shape()) + ", expected " +
                       shape_str(v.shape()));
    v.mutable_value() = rec.value;
    store.set_trainable(name, rec.trainable);
    ++matched;
  }
  if (matched != store.all().size())
    throw ValidationError("checkpoint covers " + std::to_string(matched) + " of " + std::to_string(store.all().size()) +
                          " parameters under prefix '" + prefix + "'");
}

std::string config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace turbo
