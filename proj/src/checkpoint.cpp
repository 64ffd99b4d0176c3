#include "mvdpp/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

using json = nlohmann::json;

namespace mvdpp::ckpt {

const NamedTensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::runtime_error("checkpoint: tensor not found: " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  json header;
  header["dtype"] = "float32";
  header["meta"] = c.meta;
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size() * sizeof(float);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << header.dump() << '\n';
  for (const auto& t : c.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(in, line);
  json header = json::parse(line);
  if (header.at("dtype").get<std::string>() != "float32")
    throw std::runtime_error("load_checkpoint: unsupported dtype in " + path);
  Checkpoint c;
  c.meta = header.value("meta", json::object());
  for (const auto& jt : header.at("tensors")) {
    NamedTensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<std::vector<int>>();
    std::int64_t n = 1;
    for (int e : t.shape) n *= e;
    t.data.resize(n);
    c.tensors.push_back(std::move(t));
  }
  for (auto& t : c.tensors) {
    in.read(reinterpret_cast<char*>(t.data.data()), t.data.size() * sizeof(float));
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
  }
  return c;
}

}  // namespace mvdpp::ckpt
