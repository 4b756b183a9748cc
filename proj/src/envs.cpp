#include "alloc_layers/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>

#include "alloc_layers/rng.hpp"

namespace alloc::envs {

namespace {

constexpr double kMinutesPerDay = 1440.0;

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

double time_of_day(double start_minute, double elapsed) {
  return std::fmod(start_minute + elapsed, kMinutesPerDay) / kMinutesPerDay;
}

std::vector<std::int64_t> to_counts(const std::vector<double>& values, const std::string& key) {
  std::vector<std::int64_t> out;
  out.reserve(values.size());
  for (double v : values) {
    if (v != std::floor(v)) throw ParseError("<config>", 0, key + ": expected integers");
    out.push_back(static_cast<std::int64_t>(v));
  }
  return out;
}

std::vector<double> to_doubles(const std::vector<std::int64_t>& values) {
  return {values.begin(), values.end()};
}

void check_counts(const std::vector<std::int64_t>& lower, const std::vector<std::int64_t>& upper, Index n,
                  std::int64_t total, const char* what) {
  if (static_cast<Index>(lower.size()) != n || static_cast<Index>(upper.size()) != n) {
    throw DimensionMismatch(std::string(what) + ": bound lists must have one entry per entity");
  }
  std::int64_t lo = 0, hi = 0;
  for (Index k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (lower[i] < 0 || lower[i] > upper[i]) {
      throw InvalidBounds(std::string(what) + ": need 0 <= lower <= upper at entity " + std::to_string(k));
    }
    lo += lower[i];
    hi += upper[i];
  }
  if (total < 0 || lo > total || hi < total) {
    throw InvalidBounds(std::string(what) + ": resources " + std::to_string(total) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

/// Moves needed to turn `from` into `to`, as (source, destination) pairs of
/// entity indices matched by least total distance.
std::vector<std::pair<Index, Index>> min_moves(const std::vector<std::int64_t>& from,
                                               const std::vector<std::int64_t>& to,
                                               const std::vector<Point>& where) {
  std::vector<Index> surplus, deficit;
  for (std::size_t k = 0; k < from.size(); ++k) {
    for (std::int64_t c = to[k]; c < from[k]; ++c) surplus.push_back(static_cast<Index>(k));
    for (std::int64_t c = from[k]; c < to[k]; ++c) deficit.push_back(static_cast<Index>(k));
  }
  const auto m = static_cast<Index>(surplus.size());
  if (m == 0 || surplus.size() != deficit.size()) return {};
  Matrix cost(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      cost(i, j) = distance(where[static_cast<std::size_t>(surplus[static_cast<std::size_t>(i)])],
                            where[static_cast<std::size_t>(deficit[static_cast<std::size_t>(j)])]);
    }
  }
  const std::vector<Index> match = hungarian(cost);
  std::vector<std::pair<Index, Index>> moves;
  moves.reserve(surplus.size());
  for (Index i = 0; i < m; ++i) {
    moves.emplace_back(surplus[static_cast<std::size_t>(i)],
                       deficit[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])]);
  }
  return moves;
}

}  // namespace

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// ---------------------------------------------------------------------------

double EpisodeTrace::total_reward() const {
  double total = 0.0;
  for (const auto& f : frames) total += f.reward;
  return total;
}

std::int64_t EpisodeTrace::total_demand() const {
  std::int64_t total = 0;
  for (const auto& f : frames) total += std::accumulate(f.demand.begin(), f.demand.end(), std::int64_t{0});
  return total;
}

void EpisodeTrace::write_csv(std::ostream& out) const {
  const std::size_t n = frames.empty() ? 0 : frames.front().demand.size();
  out << "frame";
  for (std::size_t k = 0; k < n; ++k) out << ",demand_" << k;
  for (std::size_t k = 0; k < n; ++k) out << ",allocation_" << k;
  out << ",reward\n";
  for (const auto& f : frames) {
    out << f.frame;
    for (auto d : f.demand) out << ',' << d;
    for (auto a : f.allocation) out << ',' << a;
    out << ',' << f.reward << '\n';
  }
}

BoundSpec Environment::fraction_bounds() const {
  const Index n = entity_count();
  const auto total = static_cast<double>(resource_count());
  if (!(total > 0.0)) throw InvalidBounds("fraction bounds need at least one resource");
  Vector lo(n), hi(n);
  for (Index k = 0; k < n; ++k) {
    lo[k] = static_cast<double>(lower_counts()[static_cast<std::size_t>(k)]) / total;
    hi[k] = std::min(1.0, static_cast<double>(upper_counts()[static_cast<std::size_t>(k)]) / total);
  }
  return BoundSpec(lo, hi, 1.0);
}

void Environment::validate_target(const DiscreteAllocation& target) const {
  if (target.size() != entity_count()) {
    throw DimensionMismatch("target has " + std::to_string(target.size()) + " entries, " + name() + " has " +
                            std::to_string(entity_count()) + " entities");
  }
  if (target.total() != resource_count()) {
    throw PreconditionViolated("target sums to the resource count",
                               std::to_string(target.total()) + " != " + std::to_string(resource_count()));
  }
  for (Index k = 0; k < target.size(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    const auto c = target.counts()[i];
    if (c < lower_counts()[i] || c > upper_counts()[i]) {
      throw PreconditionViolated("target within the integer bounds",
                                 "entity " + std::to_string(k) + " gets " + std::to_string(c) + ", bounds [" +
                                     std::to_string(lower_counts()[i]) + ", " + std::to_string(upper_counts()[i]) +
                                     "]");
    }
  }
}

// ---------------------------------------------------------------------------

History::History(Index entities) : entities_(entities) {
  if (entities < 1) throw DimensionMismatch("history needs at least one entity");
  demand_.assign(3, Vector::Zero(entities));
  allocation_ = Vector::Zero(entities);
}

void History::reset(const Observation& first) {
  demand_.assign(3, Vector::Zero(entities_));
  allocation_ = Vector::Zero(entities_);
  time_ = 0.0;
  push(first);
}

void History::push(const Observation& obs) {
  if (obs.demand.size() != entities_ || obs.allocation.size() != entities_) {
    throw DimensionMismatch("observation width differs from the history's");
  }
  demand_.pop_back();
  demand_.insert(demand_.begin(), obs.demand);
  allocation_ = obs.allocation;
  time_ = obs.time;
}

Vector History::state() const {
  Vector s(state_dim(entities_));
  for (std::size_t f = 0; f < 3; ++f) s.segment(static_cast<Index>(f) * entities_, entities_) = demand_[f];
  s.segment(3 * entities_, entities_) = allocation_;
  s[4 * entities_] = time_;
  return s;
}

Vector preprocess(const std::vector<Observation>& history, Index entities) {
  History h(entities);
  for (const auto& obs : history) h.push(obs);
  return h.state();
}

// ---------------------------------------------------------------------------

const char* status_name(AmbulanceStatus s) noexcept {
  switch (s) {
    case AmbulanceStatus::kIdle:
      return "idle";
    case AmbulanceStatus::kToIncident:
      return "to-incident";
    case AmbulanceStatus::kToHospital:
      return "to-hospital";
    case AmbulanceStatus::kReturning:
      return "returning";
    case AmbulanceStatus::kRelocating:
      return "relocating";
  }
  return "?";
}

AmbulanceStatus Ambulance::status_at(double minute) const {
  if (minute >= free_at) return AmbulanceStatus::kIdle;
  if (minute < incident_at) return AmbulanceStatus::kToIncident;
  if (minute < leg_start) return AmbulanceStatus::kToHospital;
  return relocating ? AmbulanceStatus::kRelocating : AmbulanceStatus::kReturning;
}

namespace {

std::vector<std::vector<double>> toy_profile(Index cols, Index rows) {
  std::vector<std::vector<double>> rates;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      // The busy area moves from the west edge in the morning to the east
      // edge in the evening.
      const double peak = cols > 1 ? 9.0 + 9.0 * static_cast<double>(c) / static_cast<double>(cols - 1) : 13.0;
      const double row_scale = r == 0 ? 1.0 : 0.8;
      std::vector<double> hourly(24);
      for (int h = 0; h < 24; ++h) {
        const double d = h + 0.5 - peak;
        hourly[static_cast<std::size_t>(h)] = row_scale * (0.5 + 3.25 * std::exp(-d * d / (2.0 * 2.5 * 2.5)));
      }
      rates.push_back(std::move(hourly));
    }
  }
  return rates;
}

}  // namespace

std::vector<Point> ErsConfig::bases() const {
  std::vector<Point> out;
  const double w = city_width / static_cast<double>(grid_cols);
  const double h = city_height / static_cast<double>(grid_rows);
  for (Index r = 0; r < grid_rows; ++r) {
    for (Index c = 0; c < grid_cols; ++c) {
      out.push_back({(static_cast<double>(c) + 0.5) * w, (static_cast<double>(r) + 0.5) * h});
    }
  }
  return out;
}

void ErsConfig::validate() const {
  if (grid_cols < 1 || grid_rows < 1 || n_bases() < 2) throw InvalidBounds("ERS needs at least two bases");
  if (!(city_width > 0.0 && city_height > 0.0 && speed_kmh > 0.0 && frame_minutes > 0.0 &&
        response_bound_minutes > 0.0 && scene_minutes >= 0.0 && demand_norm > 0.0)) {
    throw InvalidBounds("ERS dimensions, speed, frame length and response bound must be positive");
  }
  if (frames_per_episode < 1) throw InvalidBounds("ERS needs at least one frame per episode");
  if (static_cast<Index>(hourly_rates.size()) != n_bases()) {
    throw DimensionMismatch("ERS demand profile needs one row per zone");
  }
  for (const auto& row : hourly_rates) {
    if (row.size() != 24) throw DimensionMismatch("ERS demand profile rows need 24 hourly rates");
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidBounds("ERS rates must be finite and non-negative");
    }
  }
  if (surge && !(surge->amplitude >= 0.0 && surge->sigma_km > 0.0 && surge->sigma_minutes > 0.0)) {
    throw InvalidBounds("surge amplitude must be non-negative and its widths positive");
  }
  check_counts(lower_count, upper_count, n_bases(), n_ambulances, "ERS");
}

ErsConfig ErsConfig::toy(bool with_surge) {
  ErsConfig c;
  c.hourly_rates = toy_profile(c.grid_cols, c.grid_rows);
  if (with_surge) c.surge = Surge{};
  c.lower_count.assign(static_cast<std::size_t>(c.n_bases()), 0);
  c.upper_count.assign(static_cast<std::size_t>(c.n_bases()), 3);
  return c;
}

ErsConfig ErsConfig::from_config(const KeyValueConfig& cfg, bool with_surge) {
  ErsConfig c = toy(with_surge);
  c.grid_cols = cfg.get_int("env.grid_cols", c.grid_cols);
  c.grid_rows = cfg.get_int("env.grid_rows", c.grid_rows);
  c.city_width = cfg.get_double("env.city_width", c.city_width);
  c.city_height = cfg.get_double("env.city_height", c.city_height);
  c.n_ambulances = cfg.get_int("env.n_ambulances", c.n_ambulances);
  c.speed_kmh = cfg.get_double("env.speed_kmh", c.speed_kmh);
  c.frame_minutes = cfg.get_double("env.frame_minutes", c.frame_minutes);
  c.frames_per_episode = cfg.get_int("env.frames_per_episode", c.frames_per_episode);
  c.response_bound_minutes = cfg.get_double("env.response_bound_minutes", c.response_bound_minutes);
  c.scene_minutes = cfg.get_double("env.scene_minutes", c.scene_minutes);
  c.start_minute = cfg.get_double("env.start_minute", c.start_minute);
  c.hospital.x = cfg.get_double("env.hospital_x", c.city_width / 2.0);
  c.hospital.y = cfg.get_double("env.hospital_y", c.city_height / 2.0);
  c.demand_norm = cfg.get_double("env.demand_norm", c.demand_norm);

  c.hourly_rates = toy_profile(c.grid_cols, c.grid_rows);
  const double scale = cfg.get_double("env.rate_scale", 1.0);
  for (auto& row : c.hourly_rates) {
    for (auto& v : row) v *= scale;
  }
  const auto n = static_cast<std::size_t>(c.n_bases());
  c.lower_count = to_counts(cfg.get_doubles("env.lower_count", std::vector<double>(n, 0.0)), "env.lower_count");
  c.upper_count = to_counts(cfg.get_doubles("env.upper_count", std::vector<double>(n, 3.0)), "env.upper_count");

  if (cfg.get_bool("env.surge", with_surge)) {
    Surge s;
    s.amplitude = cfg.get_double("env.surge_amplitude", s.amplitude);
    s.sigma_km = cfg.get_double("env.surge_sigma_km", s.sigma_km);
    s.sigma_minutes = cfg.get_double("env.surge_sigma_minutes", s.sigma_minutes);
    c.surge = s;
  } else {
    c.surge.reset();
  }
  c.validate();
  return c;
}

DiscreteAllocation even_allocation(std::int64_t total, const std::vector<std::int64_t>& lower,
                                   const std::vector<std::int64_t>& upper) {
  std::vector<std::int64_t> counts = lower;
  std::int64_t left = total - std::accumulate(lower.begin(), lower.end(), std::int64_t{0});
  bool progress = true;
  while (left > 0 && progress) {
    progress = false;
    for (std::size_t k = 0; k < counts.size() && left > 0; ++k) {
      if (counts[k] < upper[k]) {
        ++counts[k];
        --left;
        progress = true;
      }
    }
  }
  if (left != 0) throw InvalidBounds("bounds do not admit " + std::to_string(total) + " resources");
  return DiscreteAllocation(std::move(counts), total);
}

std::vector<Index> hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw DimensionMismatch("assignment cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation, 1-based with a sentinel column 0.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(p[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> row_to_col(static_cast<std::size_t>(n), 0);
  for (Index j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

// ---------------------------------------------------------------------------

ErsEnv::ErsEnv(ErsConfig config, std::string name) : config_(std::move(config)), name_(std::move(name)) {
  config_.validate();
  bases_ = config_.bases();
}

double ErsEnv::travel(const Point& a, const Point& b) const { return distance(a, b) / config_.speed_kmh * 60.0; }

double ErsEnv::rate(Index zone, double minute) const {
  const double clock = config_.start_minute + minute;
  const auto hour = static_cast<std::size_t>(
      static_cast<std::int64_t>(std::floor(clock / 60.0)) % 24);
  double r = config_.hourly_rates[static_cast<std::size_t>(zone)][hour];
  if (config_.surge && surge_event_) {
    const auto& s = *config_.surge;
    const double d = distance(bases_[static_cast<std::size_t>(zone)], surge_event_->first);
    const double dt = minute - surge_event_->second;
    r += s.amplitude * std::exp(-d * d / (2.0 * s.sigma_km * s.sigma_km)) *
         std::exp(-dt * dt / (2.0 * s.sigma_minutes * s.sigma_minutes));
  }
  return r;
}

Observation ErsEnv::reset(std::uint64_t seed) {
  const double frame = config_.frame_minutes;
  const double horizon = frame * static_cast<double>(config_.frames_per_episode);
  surge_event_.reset();
  if (config_.surge) {
    Rng surge_rng(derive_seed(seed, 2));
    const Point centre{surge_rng.uniform(0.0, config_.city_width), surge_rng.uniform(0.0, config_.city_height)};
    surge_event_ = std::make_pair(centre, surge_rng.uniform(0.0, horizon));
  }

  Rng rng(derive_seed(seed, 1));
  const double zone_w = config_.city_width / static_cast<double>(config_.grid_cols);
  const double zone_h = config_.city_height / static_cast<double>(config_.grid_rows);
  std::vector<Incident> incidents;
  for (Index f = 0; f < config_.frames_per_episode; ++f) {
    const double t0 = frame * static_cast<double>(f);
    for (Index z = 0; z < config_.n_bases(); ++z) {
      const double mean = rate(z, t0 + frame / 2.0) * frame / 60.0;
      const std::int64_t count = rng.poisson(mean);
      const double x0 = static_cast<double>(z % config_.grid_cols) * zone_w;
      const double y0 = static_cast<double>(z / config_.grid_cols) * zone_h;
      for (std::int64_t i = 0; i < count; ++i) {
        Incident inc;
        inc.minute = t0 + frame * rng.uniform();
        inc.where = {x0 + zone_w * rng.uniform(), y0 + zone_h * rng.uniform()};
        inc.zone = z;
        incidents.push_back(inc);
      }
    }
  }
  std::stable_sort(incidents.begin(), incidents.end(),
                   [](const Incident& a, const Incident& b) { return a.minute < b.minute; });
  incidents_ = std::move(incidents);
  trace_ = EpisodeTrace{};
  trace_.seed = seed;
  return begin(even_allocation(config_.n_ambulances, config_.lower_count, config_.upper_count));
}

Observation ErsEnv::reset_with(std::vector<Incident> incidents, const DiscreteAllocation& start) {
  validate_target(start);
  std::stable_sort(incidents.begin(), incidents.end(),
                   [](const Incident& a, const Incident& b) { return a.minute < b.minute; });
  for (const auto& inc : incidents) {
    if (inc.zone < 0 || inc.zone >= config_.n_bases()) throw DimensionMismatch("incident zone out of range");
  }
  incidents_ = std::move(incidents);
  surge_event_.reset();
  trace_ = EpisodeTrace{};
  return begin(start);
}

Observation ErsEnv::begin(const DiscreteAllocation& start) {
  ambulances_.clear();
  for (std::size_t b = 0; b < start.counts().size(); ++b) {
    for (std::int64_t c = 0; c < start.counts()[b]; ++c) {
      Ambulance a;
      a.base = static_cast<Index>(b);
      a.leg_from = bases_[b];
      ambulances_.push_back(a);
    }
  }
  queue_.clear();
  next_incident_ = 0;
  frame_ = 0;
  last_relocations_ = 0;
  dispatched_ = 0;

  Observation obs;
  obs.demand = Vector::Zero(config_.n_bases());
  obs.allocation = normalize_discrete(start);
  obs.time = time_of_day(config_.start_minute, 0.0);
  return obs;
}

DiscreteAllocation ErsEnv::current_allocation() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(config_.n_bases()), 0);
  for (const auto& a : ambulances_) ++counts[static_cast<std::size_t>(a.base)];
  return DiscreteAllocation(std::move(counts), config_.n_ambulances);
}

Point ErsEnv::position(const Ambulance& a, double now) const {
  const Point& home = bases_[static_cast<std::size_t>(a.base)];
  if (now >= a.free_at || now < a.leg_start) return home;
  const double span = a.free_at - a.leg_start;
  const double t = span > 0.0 ? (now - a.leg_start) / span : 1.0;
  return {a.leg_from.x + (home.x - a.leg_from.x) * t, a.leg_from.y + (home.y - a.leg_from.y) * t};
}

void ErsEnv::relocate(const DiscreteAllocation& target, double now) {
  const auto moves = min_moves(current_allocation().counts(), target.counts(), bases_);
  last_relocations_ = static_cast<std::int64_t>(moves.size());
  std::vector<bool> taken(ambulances_.size(), false);
  for (const auto& [from, to] : moves) {
    // Idle ambulances at the source base first, then busy ones; lowest index within each.
    std::size_t pick = ambulances_.size();
    for (int pass = 0; pass < 2 && pick == ambulances_.size(); ++pass) {
      for (std::size_t k = 0; k < ambulances_.size(); ++k) {
        const auto& a = ambulances_[k];
        if (taken[k] || a.base != from) continue;
        if ((a.free_at <= now) == (pass == 0)) {
          pick = k;
          break;
        }
      }
    }
    if (pick == ambulances_.size()) throw InternalAssertion("relocation found no ambulance at base");
    taken[pick] = true;
    Ambulance& a = ambulances_[pick];
    const Point& dest = bases_[static_cast<std::size_t>(to)];
    if (now < a.leg_start) {
      // Still on a call: only the return leg changes.
      a.base = to;
      a.free_at = a.leg_start + travel(a.leg_from, dest);
      continue;
    }
    const Point here = position(a, now);
    a.base = to;
    a.leg_from = here;
    a.leg_start = now;
    a.free_at = now + travel(here, dest);
    a.relocating = true;
  }
}

double ErsEnv::dispatch(std::size_t k, std::size_t i, double when) {
  Ambulance& a = ambulances_[k];
  const Incident& inc = incidents_[i];
  const Point& home = bases_[static_cast<std::size_t>(a.base)];
  const double to_incident = travel(home, inc.where);
  a.incident_at = when + to_incident;
  a.leg_from = config_.hospital;
  a.leg_start = a.incident_at + config_.scene_minutes + travel(inc.where, config_.hospital);
  a.free_at = a.leg_start + travel(config_.hospital, home);
  a.relocating = false;
  ++dispatched_;
  return when - inc.minute + to_incident;
}

void ErsEnv::release_queue(double until, double& reward) {
  const double frame_start = config_.frame_minutes * static_cast<double>(frame_);
  while (!queue_.empty()) {
    std::size_t best = ambulances_.size();
    for (std::size_t k = 0; k < ambulances_.size(); ++k) {
      if (best == ambulances_.size() || ambulances_[k].free_at < ambulances_[best].free_at) best = k;
    }
    if (best == ambulances_.size() || ambulances_[best].free_at > until) return;
    const std::size_t i = queue_.front();
    queue_.erase(queue_.begin());
    const double when = std::max(ambulances_[best].free_at, incidents_[i].minute);
    const double response = dispatch(best, i, when);
    // Only requests raised in the current frame earn reward.
    if (incidents_[i].minute >= frame_start && response <= config_.response_bound_minutes) reward += 1.0;
  }
}

StepResult ErsEnv::step(const DiscreteAllocation& target) {
  validate_target(target);
  if (frame_ >= config_.frames_per_episode) throw PreconditionViolated("episode not finished", "call reset first");
  const double t0 = config_.frame_minutes * static_cast<double>(frame_);
  const double t1 = t0 + config_.frame_minutes;
  relocate(target, t0);

  double reward = 0.0;
  std::vector<std::int64_t> demand(static_cast<std::size_t>(config_.n_bases()), 0);
  while (next_incident_ < incidents_.size() && incidents_[next_incident_].minute < t1) {
    const std::size_t i = next_incident_++;
    const Incident& inc = incidents_[i];
    ++demand[static_cast<std::size_t>(inc.zone)];
    release_queue(inc.minute, reward);
    std::size_t best = ambulances_.size();
    double best_d = 0.0;
    if (queue_.empty()) {
      for (std::size_t k = 0; k < ambulances_.size(); ++k) {
        if (ambulances_[k].free_at > inc.minute) continue;
        const double d = distance(bases_[static_cast<std::size_t>(ambulances_[k].base)], inc.where);
        if (best == ambulances_.size() || d < best_d) {
          best = k;
          best_d = d;
        }
      }
    }
    if (best == ambulances_.size()) {
      queue_.push_back(i);
      continue;
    }
    if (dispatch(best, i, inc.minute) <= config_.response_bound_minutes) reward += 1.0;
  }
  release_queue(t1, reward);

  FrameRecord record{frame_, demand, target.counts(), reward};
  trace_.frames.push_back(record);
  ++frame_;

  StepResult out;
  out.reward = reward;
  out.done = frame_ >= config_.frames_per_episode;
  out.observation.demand.resize(config_.n_bases());
  for (Index z = 0; z < config_.n_bases(); ++z) {
    out.observation.demand[z] = clip01(static_cast<double>(demand[static_cast<std::size_t>(z)]) / config_.demand_norm);
  }
  out.observation.allocation = normalize_discrete(current_allocation());
  out.observation.time = time_of_day(config_.start_minute, t1);
  return out;
}

std::unique_ptr<Environment> ErsEnv::with_resources(std::int64_t count) const {
  ErsConfig c = config_;
  c.n_ambulances = count;
  return std::make_unique<ErsEnv>(std::move(c), name_);
}

// ---------------------------------------------------------------------------

Matrix gravity_destinations(const std::vector<Point>& stations, const Vector& attraction, double scale_km) {
  const auto n = static_cast<Index>(stations.size());
  if (attraction.size() != n) throw DimensionMismatch("one attraction weight per station");
  if (n < 2 || !(scale_km > 0.0)) throw InvalidBounds("gravity model needs two stations and a positive scale");
  Matrix p = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      p(i, j) = attraction[j] * std::exp(-distance(stations[static_cast<std::size_t>(i)],
                                                   stations[static_cast<std::size_t>(j)]) /
                                         scale_km);
    }
    const double row = p.row(i).sum();
    if (!(row > 0.0)) throw InvalidBounds("gravity row " + std::to_string(i) + " has no destination");
    p.row(i) /= row;
  }
  return p;
}

void BssConfig::validate() const {
  const Index n = n_stations();
  if (n < 2) throw InvalidBounds("BSS needs at least two stations");
  if (frames_per_episode < 1 || !(frame_minutes > 0.0) || !(bike_speed_kmh > 0.0) || !(demand_norm > 0.0)) {
    throw InvalidBounds("BSS frame count, frame length, speed and demand norm must be positive");
  }
  if (rates.rows() != n || rates.cols() != frames_per_episode) {
    throw DimensionMismatch("BSS rates must be stations x frames");
  }
  if (!rates.allFinite() || rates.minCoeff() < 0.0) throw InvalidBounds("BSS rates must be non-negative");
  if (destination.rows() != n || destination.cols() != n) throw DimensionMismatch("BSS destinations must be n x n");
  for (Index i = 0; i < n; ++i) {
    if (destination.row(i).minCoeff() < 0.0 || std::abs(destination.row(i).sum() - 1.0) > 1e-9) {
      throw InvalidBounds("BSS destination row " + std::to_string(i) + " must be a distribution");
    }
  }
  check_counts(lower_count, upper_count, n, n_bikes, "BSS");
  if (static_cast<Index>(initial.size()) != n ||
      std::accumulate(initial.begin(), initial.end(), std::int64_t{0}) != n_bikes ||
      *std::min_element(initial.begin(), initial.end()) < 0) {
    throw InvalidBounds("BSS initial distribution must cover every station and sum to the bike count");
  }
}

BssConfig BssConfig::toy() {
  BssConfig c;
  // West half residential, east half business.
  c.stations = {{0.5, 0.5}, {0.5, 1.5}, {1.5, 0.5}, {1.5, 1.5},
                {2.5, 0.5}, {2.5, 1.5}, {3.5, 0.5}, {3.5, 1.5}};
  const Index n = c.n_stations();
  c.rates = Matrix::Zero(n, c.frames_per_episode);
  for (Index f = 0; f < c.frames_per_episode; ++f) {
    const bool commute = f < 6;
    for (Index s = 0; s < n; ++s) c.rates(s, f) = s < 4 ? (commute ? 2.5 : 1.0) : (commute ? 0.5 : 1.5);
  }
  Vector attraction(n);
  attraction << 0.5, 0.5, 0.5, 0.5, 3.0, 3.0, 3.0, 3.0;
  c.destination = gravity_destinations(c.stations, attraction, 2.0);
  c.lower_count = {1, 1, 1, 1, 0, 0, 0, 0};
  c.upper_count = {10, 10, 10, 10, 8, 8, 8, 8};
  c.initial.assign(static_cast<std::size_t>(n), 5);
  return c;
}

BssConfig BssConfig::from_config(const KeyValueConfig& cfg) {
  BssConfig c = toy();
  c.n_bikes = cfg.get_int("env.n_bikes", c.n_bikes);
  c.frame_minutes = cfg.get_double("env.frame_minutes", c.frame_minutes);
  c.start_minute = cfg.get_double("env.start_minute", c.start_minute);
  c.bike_speed_kmh = cfg.get_double("env.bike_speed_kmh", c.bike_speed_kmh);
  c.move_cap = cfg.get_int("env.move_cap", c.move_cap);
  c.demand_norm = cfg.get_double("env.demand_norm", c.demand_norm);
  c.rates *= cfg.get_double("env.rate_scale", 1.0);
  c.lower_count = to_counts(cfg.get_doubles("env.lower_count", to_doubles(c.lower_count)), "env.lower_count");
  c.upper_count = to_counts(cfg.get_doubles("env.upper_count", to_doubles(c.upper_count)), "env.upper_count");
  if (cfg.has("env.initial")) {
    c.initial = to_counts(cfg.get_doubles("env.initial", {}), "env.initial");
  } else if (c.n_bikes != 40) {
    c.initial = even_allocation(c.n_bikes, std::vector<std::int64_t>(c.stations.size(), 0),
                                std::vector<std::int64_t>(c.stations.size(), c.n_bikes))
                    .counts();
  }
  c.validate();
  return c;
}

BssEnv::BssEnv(BssConfig config, std::string name) : config_(std::move(config)), name_(std::move(name)) {
  config_.validate();
}

Observation BssEnv::reset(std::uint64_t seed) {
  const Index n = config_.n_stations();
  Rng rng(derive_seed(seed, 3));
  requests_.assign(static_cast<std::size_t>(config_.frames_per_episode), {});
  for (Index f = 0; f < config_.frames_per_episode; ++f) {
    const double t0 = config_.frame_minutes * static_cast<double>(f);
    auto& frame = requests_[static_cast<std::size_t>(f)];
    for (Index s = 0; s < n; ++s) {
      const std::int64_t count = rng.poisson(config_.rates(s, f));
      for (std::int64_t i = 0; i < count; ++i) {
        Trip trip{t0 + config_.frame_minutes * rng.uniform(), s, n - 1};
        double u = rng.uniform(), cdf = 0.0;
        for (Index j = 0; j < n; ++j) {
          cdf += config_.destination(s, j);
          if (u < cdf) {
            trip.destination = j;
            break;
          }
        }
        frame.push_back(trip);
      }
    }
    std::stable_sort(frame.begin(), frame.end(), [](const Trip& a, const Trip& b) { return a.minute < b.minute; });
  }
  bikes_ = config_.initial;
  frame_ = 0;
  trace_ = EpisodeTrace{};
  trace_.seed = seed;

  Observation obs;
  obs.demand = Vector::Zero(n);
  obs.allocation = normalize_discrete(current_allocation());
  obs.time = time_of_day(config_.start_minute, 0.0);
  return obs;
}

DiscreteAllocation BssEnv::current_allocation() const { return DiscreteAllocation(bikes_, config_.n_bikes); }

StepResult BssEnv::step(const DiscreteAllocation& target) {
  validate_target(target);
  if (frame_ >= config_.frames_per_episode) throw PreconditionViolated("episode not finished", "call reset first");
  auto moves = min_moves(bikes_, target.counts(), config_.stations);
  if (config_.move_cap >= 0 && static_cast<std::int64_t>(moves.size()) > config_.move_cap) {
    std::stable_sort(moves.begin(), moves.end(), [&](const auto& a, const auto& b) {
      return distance(config_.stations[static_cast<std::size_t>(a.first)],
                      config_.stations[static_cast<std::size_t>(a.second)]) <
             distance(config_.stations[static_cast<std::size_t>(b.first)],
                      config_.stations[static_cast<std::size_t>(b.second)]);
    });
    moves.resize(static_cast<std::size_t>(config_.move_cap));
  }
  for (const auto& [from, to] : moves) {
    --bikes_[static_cast<std::size_t>(from)];
    ++bikes_[static_cast<std::size_t>(to)];
  }
  return play_frame(target.counts());
}

StepResult BssEnv::step_passive() {
  if (frame_ >= config_.frames_per_episode) throw PreconditionViolated("episode not finished", "call reset first");
  return play_frame(bikes_);
}

StepResult BssEnv::play_frame(const std::vector<std::int64_t>& executed) {
  const Index n = config_.n_stations();
  const double t0 = config_.frame_minutes * static_cast<double>(frame_);
  const double t1 = t0 + config_.frame_minutes;
  using Arrival = std::pair<double, Index>;
  std::priority_queue<Arrival, std::vector<Arrival>, std::greater<>> arrivals;
  std::vector<std::int64_t> demand(static_cast<std::size_t>(n), 0);
  std::int64_t lost = 0;
  for (const Trip& trip : requests_[static_cast<std::size_t>(frame_)]) {
    while (!arrivals.empty() && arrivals.top().first <= trip.minute) {
      ++bikes_[static_cast<std::size_t>(arrivals.top().second)];
      arrivals.pop();
    }
    ++demand[static_cast<std::size_t>(trip.origin)];
    auto& here = bikes_[static_cast<std::size_t>(trip.origin)];
    if (here == 0) {
      ++lost;
      continue;
    }
    --here;
    const double ride = distance(config_.stations[static_cast<std::size_t>(trip.origin)],
                                 config_.stations[static_cast<std::size_t>(trip.destination)]) /
                            config_.bike_speed_kmh * 60.0 +
                        2.0;
    // Trips still under way at the frame boundary end there.
    arrivals.emplace(std::min(trip.minute + ride, t1), trip.destination);
  }
  while (!arrivals.empty()) {
    ++bikes_[static_cast<std::size_t>(arrivals.top().second)];
    arrivals.pop();
  }

  const double reward = -static_cast<double>(lost);
  trace_.frames.push_back(FrameRecord{frame_, demand, executed, reward});
  ++frame_;

  StepResult out;
  out.reward = reward;
  out.done = frame_ >= config_.frames_per_episode;
  out.observation.demand.resize(n);
  for (Index s = 0; s < n; ++s) {
    out.observation.demand[s] = clip01(static_cast<double>(demand[static_cast<std::size_t>(s)]) / config_.demand_norm);
  }
  out.observation.allocation = normalize_discrete(current_allocation());
  out.observation.time = time_of_day(config_.start_minute, t1);
  return out;
}

std::unique_ptr<Environment> BssEnv::with_resources(std::int64_t count) const {
  BssConfig c = config_;
  c.n_bikes = count;
  c.initial = even_allocation(count, c.lower_count, c.upper_count).counts();
  return std::make_unique<BssEnv>(std::move(c), name_);
}

// ---------------------------------------------------------------------------

std::vector<std::string> env_names() { return {"ers-toy", "ers-toy-surge", "bss-toy"}; }

std::unique_ptr<Environment> make_env(const std::string& name, const KeyValueConfig& overrides) {
  if (name == "ers-toy" || name == "ers-toy-surge") {
    return std::make_unique<ErsEnv>(ErsConfig::from_config(overrides, name == "ers-toy-surge"), name);
  }
  if (name == "bss-toy") return std::make_unique<BssEnv>(BssConfig::from_config(overrides), name);
  throw PreconditionViolated("known environment", "'" + name + "' is not one of ers-toy, ers-toy-surge, bss-toy");
}

double run_static_episode(Environment& env, const DiscreteAllocation& allocation, std::uint64_t seed) {
  env.reset(seed);
  double total = 0.0;
  for (Index f = 0; f < env.frames_per_episode(); ++f) total += env.step(allocation).reward;
  return total;
}

double evaluate_static(Environment& env, const DiscreteAllocation& allocation,
                       const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw PreconditionViolated("at least one seed", "empty seed list");
  double total = 0.0;
  for (auto seed : seeds) total += run_static_episode(env, allocation, seed);
  return total / static_cast<double>(seeds.size());
}

GreedyResult greedy_static_baseline(const EnvFactory& factory, std::int64_t resources,
                                    const std::vector<std::uint64_t>& seeds) {
  const auto full = factory(resources);
  const std::vector<std::int64_t>& lower = full->lower_counts();
  const std::vector<std::int64_t>& upper = full->upper_counts();
  std::vector<std::int64_t> counts = lower;
  std::int64_t placed = std::accumulate(lower.begin(), lower.end(), std::int64_t{0});
  if (placed > resources) throw InvalidBounds("lower bounds exceed the resource count");

  GreedyResult result;
  if (placed > 0) {
    auto env = factory(placed);
    result.score = evaluate_static(*env, DiscreteAllocation(counts, placed), seeds);
  }
  while (placed < resources) {
    auto env = factory(placed + 1);
    std::size_t best = counts.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] >= upper[k]) continue;
      auto trial = counts;
      ++trial[k];
      const double score = evaluate_static(*env, DiscreteAllocation(trial, placed + 1), seeds);
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    if (best == counts.size()) throw InvalidBounds("upper bounds leave no room for another resource");
    ++counts[best];
    ++placed;
    result.score = best_score;
    result.step_scores.push_back(best_score);
  }
  result.counts = std::move(counts);
  result.total = resources;
  return result;
}

}  // namespace alloc::envs
