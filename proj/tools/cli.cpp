#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/checks.hpp"
#include "alloc_layers/config.hpp"
#include "alloc_layers/ddpg.hpp"
#include "alloc_layers/envs.hpp"
#include "alloc_layers/instances.hpp"
#include "alloc_layers/qp_oracle.hpp"
#include "alloc_layers/region_tree.hpp"

#ifndef ALLOC_LAYERS_VERSION
#define ALLOC_LAYERS_VERSION "0.0.0"
#endif

namespace alloc::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// A checked threshold was missed; maps to exit code 3.
struct ThresholdMissed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  const char* v = std::getenv("ALLOC_LAYERS_LOG");
  if (v == nullptr) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0" || s == "off") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

std::mutex log_mutex;

void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// Manifest

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::string config_text;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  std::string started = utc_now();

  std::string config_hash() const { return fnv1a_hex(command + "\n" + config_text); }

  void write(const fs::path& path) const {
    json j;
    j["command"] = command;
    j["args"] = args;
    j["config"] = config_text;
    j["config_hash"] = config_hash();
    j["seeds"] = seeds;
    j["outputs"] = outputs;
    j["versions"] = {{"alloc_layers", ALLOC_LAYERS_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    j["started_utc"] = started;
    j["finished_utc"] = utc_now();
    std::ofstream out(path);
    if (!out) throw PreconditionViolated("output directory is writable", "cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
};

// CSV artifacts open with a reference to their manifest, then the header.
std::ofstream open_csv(const fs::path& path, const RunManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw PreconditionViolated("output directory is writable", "cannot write " + path.string());
  out << "# manifest: manifest.json config_hash=" << manifest.config_hash() << '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const Vector& v, char sep = ' ') {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += sep;
    out += fmt(v[i]);
  }
  return out;
}

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

std::vector<Vector> read_inputs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open input file");
  std::vector<Vector> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    for (char& c : line) {
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    }
    std::istringstream fields(line);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') throw ParseError(path, lineno, "not a number: '" + token + "'");
      values.push_back(v);
    }
    if (!values.empty()) rows.push_back(Eigen::Map<Vector>(values.data(), static_cast<Index>(values.size())));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// project

struct ProjectArgs {
  std::string method;
  std::string bounds;
  std::string input;
  std::size_t random = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct ProjectRow {
  Vector z;
  FeasibilityReport report;
  std::optional<double> checksum;
  std::optional<double> gap;
};

ProjectRow project_one(const std::string& method, const Vector& x, const BoundSpec& b, const RegionTree* tree) {
  ProjectRow row;
  if (method == "exact" || method == "cp") {
    const RegionTree flat = RegionTree::flat(b);
    const RegionTree& t = tree != nullptr ? *tree : flat;
    row.z = method == "exact" && tree == nullptr ? qp::exact_project(x, b).z : qp::cp_project(x, t);
    row.report = check_feasibility(row.z, t);
    return row;
  }
  const Method m = parse_method(method);
  const RegionTree flat = RegionTree::flat(b, m);
  const RegionTree t = tree != nullptr ? tree->with_method(m) : flat;
  if (x.size() != t.layout().total()) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) + " values, the problem needs " +
                            std::to_string(t.layout().total()));
  }
  const auto r = nested_forward(x, t);
  row.z = r.z;
  row.report = check_feasibility(r.z, t);
  double sum = r.jacobian.d_dy.sum();
  if (r.jacobian.d_dc) sum += r.jacobian.d_dc->sum();
  row.checksum = sum;
  if (m == Method::kApprOpt && tree == nullptr) row.gap = qp::projection_gap(appropt::prescale(x, b).y, b).gap;
  return row;
}

int cmd_project(const ProjectArgs& a, const std::vector<std::string>& argv) {
  if (a.method != "cs" && a.method != "appropt" && a.method != "exact" && a.method != "cp") {
    throw PreconditionViolated("method is cs, appropt, exact or cp", "unknown method '" + a.method + "'");
  }
  std::optional<Problem> problem;
  if (!a.bounds.empty()) problem = load_problem(a.bounds);
  const RegionTree* tree = problem && problem->tree ? &*problem->tree : nullptr;

  std::vector<Vector> inputs;
  std::vector<BoundSpec> bounds;
  if (!a.input.empty()) {
    if (!problem) throw PreconditionViolated("--input needs --bounds", "no problem file given");
    inputs = read_inputs(a.input);
    bounds.assign(inputs.size(), problem->bounds);
  } else {
    Rng rng(a.seed);
    for (std::size_t i = 0; i < a.random; ++i) {
      BoundSpec b = problem ? problem->bounds
                            : (a.method == "cs" ? instances::random_cs_bounds(rng, 2 + static_cast<Index>(rng.below(99)))
                                                : instances::random_strict_bounds(rng, 2 + static_cast<Index>(rng.below(99))));
      const Index width = tree != nullptr ? tree->layout().total() : b.size();
      Vector x(width);
      if (a.method == "cs") {
        for (Index k = 0; k < width; ++k) x[k] = rng.uniform(-3.0, 0.0);
      } else if (tree == nullptr) {
        x = a.method == "appropt" ? instances::random_box_point(rng, b) : Vector(Vector::NullaryExpr(width, [&] {
          return rng.uniform(-0.5, 1.5);
        }));
      } else {
        for (Index k = 0; k < width; ++k) x[k] = rng.uniform(-1.0, 1.0);
      }
      inputs.push_back(std::move(x));
      bounds.push_back(std::move(b));
    }
  }

  RunManifest manifest{"project", argv, "method = " + a.method + "\nbounds = " + a.bounds + "\ninput = " + a.input +
                                            "\nrandom = " + std::to_string(a.random) + "\n",
                       {a.seed}, {}};
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty()) {
    file = open_csv(a.out, manifest);
    out = &file;
    manifest.outputs.push_back(a.out);
  }
  *out << "instance,n,feasible,sum_residual,max_bound_violation,jacobian_checksum,gap,z\n";
  std::size_t infeasible = 0;
  double min_gap = 0.0, max_gap = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ProjectRow row = project_one(a.method, inputs[i], bounds[i], tree);
    double worst = 0.0;
    for (const auto& [k, v] : row.report.bound_violations) worst = std::max(worst, v);
    for (const auto& [id, v] : row.report.region_violations) worst = std::max(worst, v);
    infeasible += row.report.feasible ? 0 : 1;
    if (row.gap) {
      min_gap = i == 0 ? *row.gap : std::min(min_gap, *row.gap);
      max_gap = std::max(max_gap, *row.gap);
    }
    *out << i << ',' << row.z.size() << ',' << (row.report.feasible ? 1 : 0) << ',' << fmt(row.report.sum_residual)
         << ',' << fmt(worst) << ',' << (row.checksum ? fmt(*row.checksum) : "") << ','
         << (row.gap ? fmt(*row.gap) : "") << ',' << join(row.z) << '\n';
  }
  if (!a.out.empty()) manifest.write(fs::path(a.out).parent_path() / "manifest.json");
  std::ostringstream summary;
  summary << inputs.size() << " instances, " << infeasible << " infeasible";
  if (a.method == "appropt" && tree == nullptr && !inputs.empty()) {
    summary << ", projection gap in [" << min_gap << ", " << max_gap << "]";
  }
  log(LogLevel::kInfo, summary.str());
  if (infeasible > 0) throw InternalAssertion("layer produced an infeasible allocation");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& target, std::size_t trials, std::uint64_t seed) {
  const auto t = checks::parse_grad_target(target);
  if (trials == 0) log(LogLevel::kInfo, "warning: no trials requested; the check passes vacuously");
  const auto r = checks::gradcheck(t, trials, seed);
  std::cout << checks::grad_target_name(t) << ": trials " << r.trials << ", checked " << r.checked << ", kink-skipped "
            << r.skipped << ", max relative error " << r.max_error << " (tolerance "
            << checks::grad_tolerance(t) << ") " << (r.passed() ? "PASS" : "FAIL") << '\n';
  if (!r.passed()) throw ThresholdMissed("gradient check failed");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string env = "ers-toy";
  std::string method = "appropt";
  std::int64_t episodes = 1000;
  std::vector<std::uint64_t> seeds{0};
  std::string config;
  std::string out = "run";
  std::size_t parallel = 1;
  std::int64_t checkpoint_every = 0;
};

void train_one(const TrainArgs& a, std::uint64_t seed, const fs::path& dir, const std::vector<std::string>& argv) {
  KeyValueConfig cfg = load_config(a.config);
  ddpg::TrainerConfig defaults;
  defaults.method = ddpg::parse_method(a.method);
  const auto tc = ddpg::TrainerConfig::from_config(cfg, defaults);
  auto env = envs::make_env(a.env, cfg);
  cfg.require_all_used();

  fs::create_directories(dir);
  RunManifest manifest{"train", argv,
                       "env = " + a.env + "\nepisodes = " + std::to_string(a.episodes) + "\n" + tc.describe() +
                           cfg.canonical(),
                       {seed}, {}};
  std::ofstream curve = open_csv(dir / "curve.csv", manifest);
  ddpg::write_curve_header(curve);
  std::ofstream timing(dir / "timing.csv");
  timing << "# manifest: manifest.json config_hash=" << manifest.config_hash() << "\nepisode,wall_ms\n";

  ddpg::Trainer trainer(tc, *env, seed);
  auto last = std::chrono::steady_clock::now();
  trainer.train(a.episodes, [&](const ddpg::EpisodeRecord& r) {
    const auto now = std::chrono::steady_clock::now();
    ddpg::write_curve_row(curve, r);
    timing << r.episode << ',' << std::chrono::duration<double, std::milli>(now - last).count() << '\n';
    last = now;
    if (a.checkpoint_every > 0 && (r.episode + 1) % a.checkpoint_every == 0) {
      trainer.agent().to_checkpoint().save((dir / ("checkpoint_" + std::to_string(r.episode + 1) + ".txt")).string());
    }
    if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::kDebug) || (r.episode + 1) % 100 == 0) {
      std::ostringstream msg;
      msg << "seed " << seed << " episode " << r.episode + 1 << " reward " << r.reward << " sigma " << r.sigma;
      log(LogLevel::kInfo, msg.str());
    }
  });
  trainer.agent().to_checkpoint().save((dir / "checkpoint.txt").string());
  manifest.outputs = {"curve.csv", "timing.csv", "checkpoint.txt"};
  manifest.write(dir / "manifest.json");
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.episodes < 0) throw PreconditionViolated("episodes >= 0", "negative episode count");
  const bool nested = a.seeds.size() > 1;
  const auto dir_of = [&](std::uint64_t s) { return nested ? fs::path(a.out) / ("seed_" + std::to_string(s)) : fs::path(a.out); };
  const std::size_t workers = std::max<std::size_t>(1, std::min(a.parallel, a.seeds.size()));
  if (workers == 1) {
    for (auto s : a.seeds) train_one(a, s, dir_of(s), argv);
    return kExitOk;
  }
  std::vector<std::exception_ptr> errors(a.seeds.size());
  std::size_t next = 0;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(m);
          if (next >= a.seeds.size()) return;
          i = next++;
        }
        try {
          train_one(a, a.seeds[i], dir_of(a.seeds[i]), argv);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval and baseline

std::vector<std::uint64_t> consecutive(std::uint64_t first, std::int64_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::int64_t i = 0; i < count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
  return seeds;
}

void print_score(const std::string& label, const ddpg::EvalResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: mean %.6f +- %.6f over %zu episodes\n", label.c_str(), r.mean, r.stdev,
                r.rewards.size());
  std::cout << buf;
}

int cmd_eval(const std::string& checkpoint, const std::string& env_name, const std::string& config,
             std::int64_t episodes, std::uint64_t seed, const std::string& out, const std::vector<std::string>& argv) {
  if (!fs::exists(checkpoint)) throw ParseError(checkpoint, 0, "checkpoint file not found");
  const auto ckpt = nn::Checkpoint::load(checkpoint);
  KeyValueConfig cfg = load_config(config);
  auto env = envs::make_env(env_name, cfg);
  cfg.require_all_used();
  const auto method_it = ckpt.meta.find("method");
  if (method_it == ckpt.meta.end()) throw ParseError(checkpoint, 0, "checkpoint has no method");
  const auto agent = ddpg::Agent::from_checkpoint(ckpt, ddpg::default_tree(*env, ddpg::parse_method(method_it->second)));
  const auto r = ddpg::evaluate(agent, *env, consecutive(seed, episodes));
  print_score("eval " + method_it->second + " on " + env_name, r);
  if (!out.empty()) {
    RunManifest manifest{"eval", argv, "checkpoint = " + checkpoint + "\nenv = " + env_name + "\n" + cfg.canonical(),
                         consecutive(seed, episodes), {out}};
    std::ofstream csv = open_csv(out, manifest);
    csv << "seed,reward\n";
    for (std::size_t i = 0; i < r.rewards.size(); ++i) csv << seed + i << ',' << fmt(r.rewards[i]) << '\n';
    manifest.write(fs::path(out).parent_path() / "manifest.json");
  }
  return kExitOk;
}

int cmd_baseline(const std::string& env_name, const std::string& config, const std::string& seeds_text,
                 std::int64_t eval_episodes, std::uint64_t eval_seed) {
  KeyValueConfig cfg = load_config(config);
  auto env = envs::make_env(env_name, cfg);
  cfg.require_all_used();
  const auto seeds = parse_seeds(seeds_text);
  const auto g = envs::greedy_static_baseline([&](std::int64_t k) { return env->with_resources(k); },
                                              env->resource_count(), seeds);
  std::cout << "greedy static allocation:";
  for (auto c : g.counts) std::cout << ' ' << c;
  char buf[128];
  std::snprintf(buf, sizeof buf, "\nscore on %zu fit seeds: %.6f\n", seeds.size(), g.score);
  std::cout << buf;
  if (eval_episodes > 0) {
    std::vector<double> rewards;
    for (auto s : consecutive(eval_seed, eval_episodes)) rewards.push_back(envs::run_static_episode(*env, g.allocation(), s));
    print_score("baseline on " + env_name, ddpg::summarize(rewards));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// curves: learning curves in long format

int cmd_curves(const std::vector<std::string>& inputs, const std::string& out) {
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw PreconditionViolated("output is writable", "cannot write " + out);
    os = &file;
  }
  *os << "run,episode,metric,value\n";
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open curve file");
    std::string line, run = fs::path(path).parent_path().filename().string();
    if (run.empty()) run = fs::path(path).stem().string();
    std::vector<std::string> header;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (header.empty()) {
        header = cells;
        if (header.empty() || header[0] != "episode") throw ParseError(path, lineno, "expected a learning-curve header");
        continue;
      }
      if (cells.size() != header.size()) throw ParseError(path, lineno, "row width differs from the header");
      for (std::size_t c = 1; c < cells.size(); ++c) *os << run << ',' << cells[0] << ',' << header[c] << ',' << cells[c] << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  const auto number = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ParseError("--seeds", 0, "not a seed: '" + s + "'");
    return static_cast<std::uint64_t>(v);
  };
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto lo = number(text.substr(0, dots)), hi = number(text.substr(dots + 2));
    if (hi < lo) throw ParseError("--seeds", 0, "empty seed range '" + text + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) seeds.push_back(number(item));
  if (seeds.empty()) throw ParseError("--seeds", 0, "no seeds given");
  return seeds;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Constrained allocation layers and DDPG experiments", "alloc_cli"};
  app.require_subcommand(1);

  ProjectArgs pa;
  auto* project = app.add_subcommand("project", "Run a layer on given or random inputs");
  project->add_option("--method", pa.method, "cs, appropt, exact or cp")->required();
  project->add_option("--bounds", pa.bounds, "problem file (JSON)");
  auto* in_opt = project->add_option("--input", pa.input, "one raw input per line");
  auto* rnd_opt = project->add_option("--random", pa.random, "number of random instances");
  in_opt->excludes(rnd_opt);
  project->add_option("--seed", pa.seed, "random seed");
  project->add_option("--out", pa.out, "output CSV (default stdout)");

  std::string gc_target;
  std::size_t gc_trials = 1000;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference derivatives");
  gradcheck->add_option("--target", gc_target, "cs, appropt, tree or net")->required();
  gradcheck->add_option("--trials", gc_trials, "random samples");
  gradcheck->add_option("--seed", gc_seed, "random seed");

  TrainArgs ta;
  std::string train_seeds = "0";
  auto* train = app.add_subcommand("train", "Train a constrained DDPG agent");
  train->add_option("--env", ta.env, "environment preset");
  train->add_option("--method", ta.method, "cp, cs or appropt");
  train->add_option("--episodes", ta.episodes, "training episodes");
  train->add_option("--seed", train_seeds, "seed, list or range (a..b)");
  train->add_option("--config", ta.config, "key = value file for trainer and env.* settings");
  train->add_option("--out", ta.out, "output directory");
  train->add_option("--parallel", ta.parallel, "worker threads across seeds");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "extra checkpoints every K episodes");

  std::string ev_ckpt, ev_env = "ers-toy", ev_config, ev_out;
  std::int64_t ev_episodes = 100;
  std::uint64_t ev_seed = 42;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint without exploration");
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--env", ev_env, "environment preset");
  eval->add_option("--config", ev_config, "env.* settings");
  eval->add_option("--episodes", ev_episodes, "evaluation episodes");
  eval->add_option("--seed", ev_seed, "first evaluation seed");
  eval->add_option("--out", ev_out, "per-episode CSV");

  std::string bl_env = "ers-toy", bl_config, bl_seeds = "0..31";
  std::int64_t bl_eval = 0;
  std::uint64_t bl_eval_seed = 42;
  auto* baseline = app.add_subcommand("baseline", "Greedy static allocation");
  baseline->add_option("--env", bl_env, "environment preset");
  baseline->add_option("--config", bl_config, "env.* settings");
  baseline->add_option("--seeds", bl_seeds, "fit seeds (a..b or list)");
  baseline->add_option("--eval-episodes", bl_eval, "also score on this many evaluation seeds");
  baseline->add_option("--eval-seed", bl_eval_seed, "first evaluation seed");

  std::vector<std::string> cv_in;
  std::string cv_out;
  auto* curves = app.add_subcommand("curves", "Learning curves as long-format CSV");
  curves->add_option("--in", cv_in, "curve.csv files")->required();
  curves->add_option("--out", cv_out, "output CSV (default stdout)");

  std::vector<std::string> argv_store{"alloc_cli"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*project) return cmd_project(pa, args);
    if (*gradcheck) return cmd_gradcheck(gc_target, gc_trials, gc_seed);
    if (*train) {
      ta.seeds = parse_seeds(train_seeds);
      return cmd_train(ta, args);
    }
    if (*eval) return cmd_eval(ev_ckpt, ev_env, ev_config, ev_episodes, ev_seed, ev_out, args);
    if (*baseline) return cmd_baseline(bl_env, bl_config, bl_seeds, bl_eval, bl_eval_seed);
    if (*curves) return cmd_curves(cv_in, cv_out);
  } catch (const ThresholdMissed& e) {
    log(LogLevel::kQuiet, std::string("error: ") + e.what());
    return kExitThreshold;
  } catch (const InternalAssertion& e) {
    log(LogLevel::kQuiet, std::string("internal error: ") + e.what());
    return kExitInternal;
  } catch (const Error& e) {
    log(LogLevel::kQuiet, std::string("error: ") + e.what());
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    log(LogLevel::kQuiet, std::string("error: ") + e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    log(LogLevel::kQuiet, std::string("internal error: ") + e.what());
    return kExitInternal;
  }
  return kExitInput;
}

}  // namespace alloc::cli
