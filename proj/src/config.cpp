#include "mvdpp/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mvdpp::cfg {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json j = json::parse(in, nullptr, /*allow_exceptions=*/true);
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " is not a JSON object");
  return j;
}

namespace {

void merge_into(json& base, const json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("config: unknown key \"" + key + "\"");
    if (base[it.key()].is_object() && it.value().is_object())
      merge_into(base[it.key()], it.value(), key);
    else
      base[it.key()] = it.value();
  }
}

}  // namespace

json merge_validated(const json& defaults, const json& user) {
  json out = defaults;
  merge_into(out, user, "");
  return out;
}

void apply_override(json& config, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("config: override must be key=value, got \"" + kv + "\"");
  std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);

  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  // Walk the dotted path; every segment must already exist.
  json* node = &config;
  size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    std::string seg = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!node->is_object() || !node->contains(seg))
      throw std::invalid_argument("config: unknown key \"" + key + "\"");
    if (dot == std::string::npos) {
      (*node)[seg] = value;
      return;
    }
    node = &(*node)[seg];
    pos = dot + 1;
  }
}

int thread_cap() {
  if (const char* env = std::getenv("MVDXX_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

void write_run_json(const std::string& dir, const std::string& command, const json& resolved) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "run.json");
  if (!out) throw std::runtime_error("config: cannot write run.json in " + dir);
  out << json{{"command", command}, {"config", resolved}}.dump(1) << '\n';
}

}  // namespace mvdpp::cfg
