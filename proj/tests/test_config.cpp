#include <doctest.h>

#include "alloc_layers/config.hpp"
#include "alloc_layers/errors.hpp"

using namespace alloc;

TEST_CASE("key-value files parse typed values and comments") {
  const auto cfg = KeyValueConfig::parse(
      "# trainer\n"
      "gamma = 0.99\n"
      "batch=128 \n"
      "; comment\n"
      "method = appropt\n"
      "env.surge = yes\n"
      "env.upper_count = 3, 3,2\n");
  CHECK(cfg.get_double("gamma", 0.0) == 0.99);
  CHECK(cfg.get_int("batch", 0) == 128);
  CHECK(cfg.get_string("method", "") == "appropt");
  CHECK(cfg.get_bool("env.surge", false));
  CHECK(cfg.get_doubles("env.upper_count", {}) == std::vector<double>{3, 3, 2});
  CHECK(cfg.get_double("missing", 4.5) == 4.5);
  CHECK_NOTHROW(cfg.require_all_used());
  CHECK(cfg.canonical().rfind("batch = 128\n", 0) == 0);
}

TEST_CASE("bad values and unknown keys report their line") {
  const auto cfg = KeyValueConfig::parse("a = 1\nb = x1\nc = 2\n", "run.cfg");
  try {
    cfg.get_double("b", 0.0);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("run.cfg:2") == 0);
  }
  cfg.get_int("a", 0);
  try {
    cfg.require_all_used();
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("c") != std::string::npos);
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(KeyValueConfig::parse("[section]\na = 1\n"), ParseError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ParseError);
  CHECK_THROWS_AS(cfg.get_bool("c", false), ParseError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/file.cfg"), ParseError);
}

TEST_CASE("fnv1a matches the reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}
