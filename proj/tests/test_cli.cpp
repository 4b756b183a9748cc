#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "alloc_layers/errors.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using alloc::cli::run;

namespace {

struct Captured {
  int code = 0;
  std::string out;
  std::string err;
};

Captured call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Captured c;
  c.code = run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "alloc_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

double mean_of(const std::string& out) {
  const auto pos = out.find("mean ");
  REQUIRE(pos != std::string::npos);
  return std::stod(out.substr(pos + 5));
}

}  // namespace

TEST_CASE("seed lists") {
  CHECK(alloc::cli::parse_seeds("0..3") == std::vector<std::uint64_t>{0, 1, 2, 3});
  CHECK(alloc::cli::parse_seeds("5,2") == std::vector<std::uint64_t>{5, 2});
  CHECK_THROWS_AS(alloc::cli::parse_seeds("3..1"), alloc::ParseError);
  CHECK_THROWS_AS(alloc::cli::parse_seeds("x"), alloc::ParseError);
}

TEST_CASE("project: random ApprOpt instances are feasible with a non-negative gap") {
  const auto dir = scratch("project");
  const auto c = call({"project", "--method", "appropt", "--random", "1000", "--seed", "4", "--out",
                       (dir / "p.csv").string()});
  REQUIRE(c.code == 0);
  const auto rows = csv_rows(slurp(dir / "p.csv"));
  REQUIRE(rows.size() == 1001);
  CHECK(rows[0][0] == "instance");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][2] == "1");
    CHECK(std::stod(rows[i][6]) >= -1e-12);
  }
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(slurp(dir / "p.csv").rfind("# manifest: manifest.json", 0) == 0);
}

TEST_CASE("project: inapplicable CS bounds exit with a diagnostic") {
  const auto dir = scratch("project_cs");
  std::ofstream(dir / "bad.json") << R"({"budget": 1.0, "lower": [0, 0, 0], "upper": [0.2, 0.9, 0.9]})";
  const auto c = call({"project", "--method", "cs", "--bounds", (dir / "bad.json").string(), "--random", "2"});
  CHECK(c.code == alloc::cli::kExitInput);
  CHECK(c.err.find("epsilon[0]") != std::string::npos);
}

TEST_CASE("project: a feasible input is returned unchanged") {
  const auto dir = scratch("project_id");
  std::ofstream(dir / "ok.json") << R"({"budget": 1.0, "lower": [0.1, 0.1, 0.1], "upper": [0.6, 0.6, 0.6]})";
  std::ofstream(dir / "in.txt") << "0.2, 0.3, 0.5\n0.4 0.4 0.2\n";
  for (const char* method : {"appropt", "exact", "cp"}) {
    const auto c = call({"project", "--method", method, "--bounds", (dir / "ok.json").string(), "--input",
                         (dir / "in.txt").string()});
    REQUIRE(c.code == 0);
    const auto rows = csv_rows(c.out);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][7] == "0.20000000000000001 0.29999999999999999 0.5");
    CHECK(rows[2][7] == "0.40000000000000002 0.40000000000000002 0.20000000000000001");
  }
  const auto bad = call({"project", "--method", "optlayer", "--random", "1"});
  CHECK(bad.code == alloc::cli::kExitInput);
}

TEST_CASE("gradcheck command") {
  const auto pass = call({"gradcheck", "--target", "appropt", "--trials", "1000", "--seed", "2"});
  CHECK(pass.code == 0);
  CHECK(pass.out.find("PASS") != std::string::npos);
  const auto tree = call({"gradcheck", "--target", "tree", "--trials", "200"});
  CHECK(tree.code == 0);
  const auto none = call({"gradcheck", "--target", "net", "--trials", "0"});
  CHECK(none.code == 0);
  CHECK(none.err.find("vacuous") != std::string::npos);
  CHECK(call({"gradcheck", "--target", "nope"}).code == alloc::cli::kExitInput);
  CHECK(call({"gradcheck"}).code == alloc::cli::kExitInput);
}

TEST_CASE("train: identical arguments give byte-identical curves") {
  const auto dir = scratch("train");
  std::ofstream(dir / "small.cfg") << "hidden = 16,12\nbatch = 16\n";
  const auto args = [&](const std::string& out) {
    return std::vector<std::string>{"train", "--env", "bss-toy", "--method", "appropt", "--episodes", "6", "--seed",
                                    "9", "--config", (dir / "small.cfg").string(), "--out", (dir / out).string()};
  };
  REQUIRE(call(args("a")).code == 0);
  REQUIRE(call(args("b")).code == 0);
  CHECK(slurp(dir / "a" / "curve.csv") == slurp(dir / "b" / "curve.csv"));
  CHECK(slurp(dir / "a" / "checkpoint.txt") == slurp(dir / "b" / "checkpoint.txt"));
  CHECK(csv_rows(slurp(dir / "a" / "curve.csv")).size() == 7);
  CHECK(fs::exists(dir / "a" / "timing.csv"));
  CHECK(fs::exists(dir / "a" / "manifest.json"));

  // The same seeds fanned out over two workers reproduce the serial runs.
  auto multi = args("m");
  multi[8] = "9,10";
  multi.push_back("--parallel");
  multi.push_back("2");
  REQUIRE(call(multi).code == 0);
  CHECK(slurp(dir / "m" / "seed_9" / "curve.csv") == slurp(dir / "a" / "curve.csv"));
  CHECK(fs::exists(dir / "m" / "seed_10" / "curve.csv"));

  std::ofstream(dir / "typo.cfg") << "gama = 0.5\n";
  auto typo = args("t");
  typo[10] = (dir / "typo.cfg").string();
  CHECK(call(typo).code == alloc::cli::kExitInput);
}

TEST_CASE("train: zero episodes write a header-only curve") {
  const auto dir = scratch("train0");
  REQUIRE(call({"train", "--episodes", "0", "--out", dir.string()}).code == 0);
  const auto rows = csv_rows(slurp(dir / "curve.csv"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0][0] == "episode");
}

TEST_CASE("eval: untrained checkpoints score finitely and repeatably") {
  const auto dir = scratch("eval");
  REQUIRE(call({"train", "--env", "ers-toy", "--method", "cs", "--episodes", "0", "--out", dir.string()}).code == 0);
  const std::vector<std::string> args{"eval", "--checkpoint", (dir / "checkpoint.txt").string(), "--env", "ers-toy",
                                      "--episodes", "20", "--seed", "42"};
  const auto a = call(args), b = call(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(std::isfinite(mean_of(a.out)));
  CHECK(call({"eval", "--checkpoint", (dir / "missing.txt").string()}).code != 0);
  CHECK(call({"eval", "--checkpoint", (dir / "checkpoint.txt").string(), "--env", "bss-toy"}).code ==
        alloc::cli::kExitInput);
}

TEST_CASE("baseline: ers-toy gets a near-uniform allocation") {
  const auto c = call({"baseline", "--env", "ers-toy", "--seeds", "0..31"});
  REQUIRE(c.code == 0);
  std::istringstream line(c.out.substr(c.out.find(':') + 1));
  std::vector<long> counts;
  long v = 0;
  while (line >> v) counts.push_back(v);
  REQUIRE(counts.size() == 6);
  CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  CHECK(call({"baseline", "--env", "ers-toy", "--seeds", "0..3"}).out ==
        call({"baseline", "--env", "ers-toy", "--seeds", "0..3"}).out);
}

TEST_CASE("curves: long format") {
  const auto dir = scratch("curves");
  REQUIRE(call({"train", "--env", "ers-toy", "--episodes", "2", "--out", (dir / "r").string()}).code == 0);
  const auto c = call({"curves", "--in", (dir / "r" / "curve.csv").string()});
  REQUIRE(c.code == 0);
  const auto rows = csv_rows(c.out);
  CHECK(rows[0] == std::vector<std::string>{"run", "episode", "metric", "value"});
  CHECK(rows.size() == 1 + 2 * 7);
  CHECK(rows[1][0] == "r");
}
