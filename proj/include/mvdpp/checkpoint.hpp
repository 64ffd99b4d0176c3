#pragma once

// Single-file checkpoint: one JSON header line {dtype, meta, tensors:
// [{name, shape, offset}]} followed by a raw little-endian float32 payload.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mvdpp::ckpt {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta;  // schedule, config, scale factors, ...
  std::vector<NamedTensor> tensors;

  const NamedTensor& find(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mvdpp::ckpt
