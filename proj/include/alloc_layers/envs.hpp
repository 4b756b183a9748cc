#pragma once

// Desk-scale allocation simulators. An episode is a fixed number of frames;
// at the start of each frame the agent names a target allocation of the
// resources over the entities and the simulator plays out one frame of
// demand. All randomness of an episode is drawn at reset from its seed, so
// the demand an episode sees does not depend on the actions taken.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alloc_layers/config.hpp"
#include "alloc_layers/core.hpp"

namespace alloc::envs {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Point& a, const Point& b);

/// Raw per-frame observation; every component lies in [0, 1].
struct Observation {
  Vector demand;      ///< demand per entity this frame, scaled by the env's demand_norm and clipped
  Vector allocation;  ///< per-entity share of the resources at the end of the frame
  double time = 0.0;  ///< minute of day / 1440 at the end of the frame
};

struct FrameRecord {
  Index frame = 0;
  std::vector<std::int64_t> demand;      ///< raw counts per entity
  std::vector<std::int64_t> allocation;  ///< executed target
  double reward = 0.0;
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::vector<FrameRecord> frames;

  double total_reward() const;
  std::int64_t total_demand() const;
  /// Columns: frame, demand_<k>..., allocation_<k>..., reward.
  void write_csv(std::ostream& out) const;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual Index entity_count() const = 0;
  virtual std::int64_t resource_count() const = 0;
  virtual Index frames_per_episode() const = 0;
  /// Integer bounds per entity on the target allocation.
  virtual const std::vector<std::int64_t>& lower_counts() const = 0;
  virtual const std::vector<std::int64_t>& upper_counts() const = 0;

  virtual Observation reset(std::uint64_t seed) = 0;
  /// Throws PreconditionViolated for a target of the wrong total or outside
  /// the integer bounds.
  virtual StepResult step(const DiscreteAllocation& target) = 0;

  virtual DiscreteAllocation current_allocation() const = 0;
  virtual const EpisodeTrace& trace() const = 0;

  /// Same environment with a different number of resources (bounds kept).
  virtual std::unique_ptr<Environment> with_resources(std::int64_t count) const = 0;

  /// Fraction bounds for the actor: counts / resource_count, budget 1.
  BoundSpec fraction_bounds() const;

 protected:
  void validate_target(const DiscreteAllocation& target) const;
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Keeps the last three demand vectors (zero before the episode's first
/// frames) and the latest allocation and time.
class History {
 public:
  explicit History(Index entities);

  static Index state_dim(Index entities) { return 4 * entities + 1; }
  Index entities() const noexcept { return entities_; }

  void reset(const Observation& first);
  void push(const Observation& obs);

  /// [demand_t, demand_{t-1}, demand_{t-2}, allocation_t, time_t].
  Vector state() const;

 private:
  Index entities_;
  std::vector<Vector> demand_;  ///< most recent first
  Vector allocation_;
  double time_ = 0.0;
};

/// State vector from a list of observations, oldest first; missing frames
/// are zero-padded.
Vector preprocess(const std::vector<Observation>& history, Index entities);

// ---------------------------------------------------------------------------
// Emergency response

struct Surge {
  double amplitude = 6.0;       ///< extra incidents per hour at the centre and peak
  double sigma_km = 0.6;
  double sigma_minutes = 60.0;
};

struct ErsConfig {
  Index grid_cols = 3;  ///< bases sit at the centres of a cols x rows zone grid
  Index grid_rows = 2;
  double city_width = 3.0;   ///< km
  double city_height = 2.0;  ///< km
  std::int64_t n_ambulances = 8;
  double speed_kmh = 30.0;
  double frame_minutes = 30.0;
  Index frames_per_episode = 24;
  double response_bound_minutes = 2.0;
  double scene_minutes = 20.0;
  double start_minute = 480.0;
  Point hospital{1.5, 1.0};
  /// Incidents per hour, hourly_rates[zone][hour of day].
  std::vector<std::vector<double>> hourly_rates;
  std::optional<Surge> surge;
  std::vector<std::int64_t> lower_count;
  std::vector<std::int64_t> upper_count;
  double demand_norm = 4.0;  ///< incidents per zone-frame that map to 1.0

  Index n_bases() const { return grid_cols * grid_rows; }
  std::vector<Point> bases() const;
  void validate() const;

  /// 6 bases on a 3 x 2 km grid, 8 ambulances, at most 3 per base, demand
  /// that peaks in the west in the morning and in the east in the evening.
  static ErsConfig toy(bool with_surge);
  /// Starts from toy() and applies the keys present in `cfg`.
  static ErsConfig from_config(const KeyValueConfig& cfg, bool with_surge);
};

struct Incident {
  double minute = 0.0;  ///< minutes since the episode start
  Point where;
  Index zone = 0;
};

enum class AmbulanceStatus { kIdle, kToIncident, kToHospital, kReturning, kRelocating };

const char* status_name(AmbulanceStatus s) noexcept;

/// One ambulance. A call runs base -> incident -> scene -> hospital -> base;
/// the last leg (hospital -> base, or base -> base for a relocation) starts
/// at `leg_start` from `leg_from` and ends at `free_at`.
struct Ambulance {
  Index base = 0;
  double incident_at = -1.0;  ///< arrival at the current incident
  double leg_start = -1.0;
  Point leg_from;
  double free_at = 0.0;       ///< idle at its base from this minute on
  bool relocating = false;    ///< last leg is a relocation, not a return

  AmbulanceStatus status_at(double minute) const;
};

class ErsEnv final : public Environment {
 public:
  explicit ErsEnv(ErsConfig config, std::string name = "ers");

  std::string name() const override { return name_; }
  Index entity_count() const override { return config_.n_bases(); }
  std::int64_t resource_count() const override { return config_.n_ambulances; }
  Index frames_per_episode() const override { return config_.frames_per_episode; }
  const std::vector<std::int64_t>& lower_counts() const override { return config_.lower_count; }
  const std::vector<std::int64_t>& upper_counts() const override { return config_.upper_count; }

  Observation reset(std::uint64_t seed) override;
  /// Starts an episode with a given incident list instead of sampling one.
  Observation reset_with(std::vector<Incident> incidents, const DiscreteAllocation& start);
  StepResult step(const DiscreteAllocation& target) override;

  DiscreteAllocation current_allocation() const override;
  const EpisodeTrace& trace() const override { return trace_; }
  std::unique_ptr<Environment> with_resources(std::int64_t count) const override;

  const ErsConfig& config() const noexcept { return config_; }
  const std::vector<Ambulance>& ambulances() const noexcept { return ambulances_; }
  const std::vector<Incident>& incidents() const noexcept { return incidents_; }
  /// Relocations started by the last step.
  std::int64_t last_relocations() const noexcept { return last_relocations_; }
  /// Requests dispatched so far this episode (each exactly once).
  std::int64_t dispatched() const noexcept { return dispatched_; }
  std::size_t queued() const noexcept { return queue_.size(); }

  /// Sampled surge of the current episode: centre and peak minute.
  const std::optional<std::pair<Point, double>>& surge_event() const noexcept { return surge_event_; }
  /// Incidents per hour of zone `zone` at `minute` since episode start.
  double rate(Index zone, double minute) const;

 private:
  Observation begin(const DiscreteAllocation& start);
  void relocate(const DiscreteAllocation& target, double now);
  Point position(const Ambulance& a, double now) const;
  double travel(const Point& a, const Point& b) const;
  /// Dispatches ambulance `k` at `when` to incident `i`; returns the response time.
  double dispatch(std::size_t k, std::size_t i, double when);
  void release_queue(double until, double& reward);

  ErsConfig config_;
  std::string name_;
  std::vector<Point> bases_;
  std::vector<Ambulance> ambulances_;
  std::vector<Incident> incidents_;
  std::vector<std::size_t> queue_;  ///< incident indices, FCFS
  std::size_t next_incident_ = 0;
  Index frame_ = 0;
  std::int64_t last_relocations_ = 0;
  std::int64_t dispatched_ = 0;
  std::optional<std::pair<Point, double>> surge_event_;
  EpisodeTrace trace_;
};

/// Default starting allocation: as even as the bounds allow, extra units to
/// the lowest indices.
DiscreteAllocation even_allocation(std::int64_t total, const std::vector<std::int64_t>& lower,
                                   const std::vector<std::int64_t>& upper);

/// Min-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns the column assigned to each row; ties resolve to the lowest index.
std::vector<Index> hungarian(const Matrix& cost);

// ---------------------------------------------------------------------------
// Bike sharing

struct BssConfig {
  std::vector<Point> stations;
  std::int64_t n_bikes = 40;
  Index frames_per_episode = 12;
  double frame_minutes = 30.0;
  double start_minute = 420.0;
  double bike_speed_kmh = 12.0;
  /// Pickup attempts per frame, rates(station, frame).
  Matrix rates;
  /// Row-stochastic trip destinations.
  Matrix destination;
  std::vector<std::int64_t> lower_count;
  std::vector<std::int64_t> upper_count;
  std::vector<std::int64_t> initial;
  /// Bikes moved per frame by repositioning; negative means unlimited.
  std::int64_t move_cap = -1;
  double demand_norm = 6.0;

  Index n_stations() const { return static_cast<Index>(stations.size()); }
  void validate() const;

  /// 8 stations, 40 bikes, 12 half-hour frames of a morning commute from
  /// residential stations (west) to business stations (east).
  static BssConfig toy();
  static BssConfig from_config(const KeyValueConfig& cfg);
};

/// Gravity model: P(i -> j) proportional to attraction_j * exp(-d_ij / scale_km), j != i.
Matrix gravity_destinations(const std::vector<Point>& stations, const Vector& attraction, double scale_km);

class BssEnv final : public Environment {
 public:
  explicit BssEnv(BssConfig config, std::string name = "bss");

  std::string name() const override { return name_; }
  Index entity_count() const override { return config_.n_stations(); }
  std::int64_t resource_count() const override { return config_.n_bikes; }
  Index frames_per_episode() const override { return config_.frames_per_episode; }
  const std::vector<std::int64_t>& lower_counts() const override { return config_.lower_count; }
  const std::vector<std::int64_t>& upper_counts() const override { return config_.upper_count; }

  Observation reset(std::uint64_t seed) override;
  StepResult step(const DiscreteAllocation& target) override;
  /// Plays a frame without repositioning.
  StepResult step_passive();

  DiscreteAllocation current_allocation() const override;
  const EpisodeTrace& trace() const override { return trace_; }
  std::unique_ptr<Environment> with_resources(std::int64_t count) const override;

  const BssConfig& config() const noexcept { return config_; }
  const std::vector<std::int64_t>& bikes() const noexcept { return bikes_; }

 private:
  struct Trip {
    double minute;
    Index origin;
    Index destination;
  };

  StepResult play_frame(const std::vector<std::int64_t>& executed);

  BssConfig config_;
  std::string name_;
  std::vector<std::int64_t> bikes_;
  std::vector<std::vector<Trip>> requests_;  ///< per frame, sorted by time
  Index frame_ = 0;
  EpisodeTrace trace_;
};

// ---------------------------------------------------------------------------
// Registry and baselines

/// "ers-toy", "ers-toy-surge" or "bss-toy", with optional overrides.
std::unique_ptr<Environment> make_env(const std::string& name, const KeyValueConfig& overrides = {});
std::vector<std::string> env_names();

/// Runs one episode holding `allocation` fixed; returns the total reward.
double run_static_episode(Environment& env, const DiscreteAllocation& allocation, std::uint64_t seed);

/// Mean total reward of a fixed allocation over the given seeds.
double evaluate_static(Environment& env, const DiscreteAllocation& allocation,
                       const std::vector<std::uint64_t>& seeds);

struct GreedyResult {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
  double score = 0.0;                ///< mean total reward on the seeds
  std::vector<double> step_scores;   ///< score after each placed resource

  DiscreteAllocation allocation() const { return DiscreteAllocation(counts, total); }
};

using EnvFactory = std::function<std::unique_ptr<Environment>(std::int64_t resources)>;

/// Places resources one at a time on the entity with the best mean reward
/// over `seeds` given the placements so far (ties to the lowest index),
/// starting from the lower bounds.
GreedyResult greedy_static_baseline(const EnvFactory& factory, std::int64_t resources,
                                    const std::vector<std::uint64_t>& seeds);

}  // namespace alloc::envs
