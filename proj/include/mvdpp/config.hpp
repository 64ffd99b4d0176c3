#pragma once

// JSON run configuration: file loading, dotted-key `--set` overrides
// validated against per-command defaults, run.json provenance records, and
// the worker-thread cap.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mvdpp::cfg {

// Parses the file; empty path yields an empty object.
nlohmann::json load_config(const std::string& path);

// Overlays `user` onto `defaults`, rejecting any key (at any depth) that the
// defaults do not contain. The offending dotted key is named in the error.
nlohmann::json merge_validated(const nlohmann::json& defaults, const nlohmann::json& user);

// Applies one "dotted.key=value" override in place; the value is parsed as
// JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& kv);

// MVDXX_THREADS if set (>= 1), otherwise hardware concurrency.
int thread_cap();

// Writes <dir>/run.json with the command name and fully-resolved config.
void write_run_json(const std::string& dir, const std::string& command, const nlohmann::json& resolved);

}  // namespace mvdpp::cfg
