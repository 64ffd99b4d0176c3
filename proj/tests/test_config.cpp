#include "mvdpp/config.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace mvdpp;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("load_config") {
  CHECK(cfg::load_config("") == json::object());

  fs::path p = fs::temp_directory_path() / "mvdpp_cfg_test.json";
  {
    std::ofstream out(p);
    out << R"({"steps": 5, "nested": {"lr": 0.5}})";
  }
  auto j = cfg::load_config(p.string());
  CHECK(j.at("steps") == 5);
  CHECK(j.at("nested").at("lr") == 0.5);
  fs::remove(p);

  CHECK_THROWS(cfg::load_config("/nonexistent/config.json"));
}

TEST_CASE("merge_validated accepts known keys and names unknown ones") {
  json defaults = {{"steps", 100}, {"sampler", "ddpm"}, {"train", {{"lr", 1e-3}, {"batch", 4}}}};
  json user = {{"steps", 7}, {"train", {{"lr", 0.5}}}};
  auto merged = cfg::merge_validated(defaults, user);
  CHECK(merged.at("steps") == 7);
  CHECK(merged.at("sampler") == "ddpm");
  CHECK(merged.at("train").at("lr") == 0.5);
  CHECK(merged.at("train").at("batch") == 4);

  json bad = {{"stepz", 7}};
  try {
    cfg::merge_validated(defaults, bad);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("stepz") != std::string::npos);
  }
  json bad_nested = {{"train", {{"momentum", 0.9}}}};
  try {
    cfg::merge_validated(defaults, bad_nested);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("train.momentum") != std::string::npos);
  }
}

TEST_CASE("apply_override parses values and follows dotted paths") {
  json c = {{"steps", 100}, {"name", "x"}, {"flag", false}, {"train", {{"lr", 1e-3}}}};
  cfg::apply_override(c, "steps=42");
  CHECK(c.at("steps") == 42);
  cfg::apply_override(c, "train.lr=0.25");
  CHECK(c.at("train").at("lr") == 0.25);
  cfg::apply_override(c, "flag=true");
  CHECK(c.at("flag") == true);
  cfg::apply_override(c, "name=hello");  // not valid JSON -> string
  CHECK(c.at("name") == "hello");

  CHECK_THROWS_AS(cfg::apply_override(c, "missing=1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::apply_override(c, "train.missing=1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::apply_override(c, "no_equals"), std::invalid_argument);
}

TEST_CASE("run.json provenance record") {
  fs::path dir = fs::temp_directory_path() / "mvdpp_runjson_test";
  fs::create_directories(dir);
  json resolved = {{"steps", 9}, {"seed", 3}};
  cfg::write_run_json(dir.string(), "sample", resolved);

  std::ifstream in(dir / "run.json");
  REQUIRE(in.good());
  json j = json::parse(in);
  CHECK(j.at("command") == "sample");
  CHECK(j.at("config") == resolved);
  fs::remove_all(dir);
}

TEST_CASE("thread cap honors MVDXX_THREADS") {
  setenv("MVDXX_THREADS", "3", 1);
  CHECK(cfg::thread_cap() == 3);
  setenv("MVDXX_THREADS", "0", 1);  // invalid -> fallback
  CHECK(cfg::thread_cap() >= 1);
  unsetenv("MVDXX_THREADS");
  CHECK(cfg::thread_cap() >= 1);
}
