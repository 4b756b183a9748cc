#pragma once

// DDPG with a constrained actor. The actor's raw output goes through the
// method's layer before it reaches the critic and the environment:
//
//   CP       tanh-unit head; the critic and the policy gradient see the raw
//            output, a penalty lambda * nu(raw) pushes it towards feasibility,
//            and the environment receives cp_project(raw).
//   CS       linear head; squash + constrained softmax (per region node).
//   ApprOpt  tanh-unit head; prescale + ApprOpt (per region node), plus the
//            penalty lambda * nu on the pre-scale output.
//
// The continuous action z is rounded to a discrete allocation before it is
// executed, and the rounded action is what the replay buffer stores.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "alloc_layers/config.hpp"
#include "alloc_layers/core.hpp"
#include "alloc_layers/envs.hpp"
#include "alloc_layers/neuralnet.hpp"
#include "alloc_layers/region_tree.hpp"
#include "alloc_layers/rng.hpp"

namespace alloc::ddpg {

enum class Method { kCp, kCs, kApprOpt };

const char* method_name(Method m) noexcept;
/// "cp", "cs" or "appropt".
Method parse_method(const std::string& name);

struct TrainerConfig {
  Method method = Method::kApprOpt;
  double gamma = 0.9;
  double tau = 1e-3;
  double critic_lr = 1e-3;
  double actor_lr = 1e-4;
  double critic_l2 = 1e-2;
  Index batch = 128;
  std::size_t replay_capacity = 1'000'000;
  Index train_every = 2;
  /// Negative selects the method's default for the environment.
  double penalty_lambda = -1.0;
  /// Zero selects 1 / resources.
  double noise_target = 0.0;
  double noise_adapt = 1.05;
  double noise_initial = 0.1;
  Index exploit_every = 4;
  std::vector<Index> hidden = {128, 96};
  bool layer_norm = true;
  /// Transitions stored before the first gradient step (at least `batch`).
  Index warmup = 0;

  void validate() const;
  /// Reads every field by name; absent keys keep the values of `defaults`.
  static TrainerConfig from_config(const KeyValueConfig& cfg, const TrainerConfig& defaults);
  static TrainerConfig from_config(const KeyValueConfig& cfg);
  /// Stable "key = value" lines of every field.
  std::string describe() const;
};

/// Penalty weights by method and environment family ("ers" / "bss").
double default_penalty(Method method, const std::string& env_name);

struct Transition {
  Vector state;
  Vector action;  ///< executed discrete allocation as fractions
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  void push(Transition t);
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  /// Uniform with replacement. Throws PreconditionViolated when fewer than
  /// `count` transitions are stored.
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

/// Critic seen by an actor update: values Q(s_i, z_i) and dQ/dz, one column
/// per sample.
struct CriticEval {
  Vector q;
  Matrix dq_dz;
};
using CriticFn = std::function<CriticEval(const Matrix& states, const Matrix& actions)>;

struct ActorStats {
  double objective = 0.0;  ///< mean of -Q + lambda * nu over the batch
  double grad_norm = 0.0;
  double violation = 0.0;  ///< mean nu of the penalised output (0 for CS)
};

struct ActionChoice {
  Vector raw;  ///< actor output
  Vector z;    ///< continuous feasible allocation
  DiscreteAllocation executed;
};

/// Actor, critic, their targets and the normalisers.
class Agent {
 public:
  Agent(TrainerConfig config, RegionTree tree, std::int64_t resources, Index state_dim, std::uint64_t seed);

  const TrainerConfig& config() const noexcept { return config_; }
  const RegionTree& tree() const noexcept { return tree_; }
  std::int64_t resources() const noexcept { return resources_; }
  Index state_dim() const noexcept { return state_dim_; }
  Index action_dim() const noexcept { return tree_.entity_count(); }
  double penalty() const noexcept { return config_.penalty_lambda; }

  const nn::NetSpec& actor_spec() const noexcept { return actor_spec_; }
  const nn::NetSpec& critic_spec() const noexcept { return critic_spec_; }
  nn::ParamSet& actor() noexcept { return actor_; }
  const nn::ParamSet& actor() const noexcept { return actor_; }
  const nn::ParamSet& actor_target() const noexcept { return actor_target_; }
  nn::ParamSet& critic() noexcept { return critic_; }
  const nn::ParamSet& critic_target() const noexcept { return critic_target_; }
  nn::RunningMoments& observation_moments() noexcept { return obs_moments_; }
  nn::RunningMoments& action_moments() noexcept { return action_moments_; }
  const nn::RunningMoments& action_target_moments() const noexcept { return action_target_moments_; }
  double sigma() const noexcept { return sigma_; }
  void set_sigma(double sigma) { sigma_ = sigma; }

  /// States as network input: normalised by the observation moments and
  /// clipped to [-5, 5].
  Matrix normalize_states(const Matrix& states) const;
  /// Actions as critic input, with the main or the target action moments.
  Matrix normalize_actions(const Matrix& actions, bool target) const;
  /// d(normalised action)/d(action), per component.
  Vector action_scale(bool target) const;

  /// Continuous feasible allocation for a raw actor output.
  Vector layer_output(const Vector& raw) const;
  /// Allocation the critic sees for a raw output: the raw output itself for
  /// CP, the layer output otherwise.
  Vector critic_action(const Vector& raw) const;

  /// explore = true acts with the perturbed actor (see perturb).
  ActionChoice act(const Vector& state, bool explore) const;

  /// Draws a fresh perturbed copy of the actor with the current sigma.
  void perturb(std::uint64_t seed);
  /// Compares perturbed and clean allocations on `states` (columns) and moves
  /// sigma by the adaptation factor towards the target divergence. Returns
  /// the measured divergence.
  double adapt_noise(const Matrix& states);
  /// Root-mean-square difference of the perturbed and clean allocations.
  double noise_divergence(const Matrix& states) const;

  double critic_update(const std::vector<const Transition*>& batch);
  ActorStats actor_update(const Matrix& states);
  /// One actor step against an arbitrary critic (used with frozen critics).
  ActorStats actor_update_with(const Matrix& states, const CriticFn& critic);
  /// Objective and parameter gradient of the actor update without stepping.
  std::pair<ActorStats, nn::ParamSet> actor_gradient(const Matrix& states, const CriticFn& critic) const;
  /// The agent's own critic network as a CriticFn.
  CriticFn critic_fn() const;
  void soft_update_targets();

  nn::Checkpoint to_checkpoint() const;
  /// Restores networks, moments and sigma; the spec fields must match.
  void load_checkpoint(const nn::Checkpoint& ckpt);
  /// Rebuilds an agent, configuration included, from a checkpoint.
  static Agent from_checkpoint(const nn::Checkpoint& ckpt, const RegionTree& tree);

 private:
  Matrix batch_critic_actions(const Matrix& raw) const;

  TrainerConfig config_;
  RegionTree tree_;
  std::int64_t resources_;
  Index state_dim_;
  nn::NetSpec actor_spec_;
  nn::NetSpec critic_spec_;
  nn::ParamSet actor_, actor_target_, actor_perturbed_;
  nn::ParamSet critic_, critic_target_;
  nn::AdamState actor_adam_, critic_adam_;
  nn::RunningMoments obs_moments_;
  nn::RunningMoments action_moments_;
  nn::RunningMoments action_target_moments_;
  double sigma_;
};

struct EpisodeRecord {
  Index episode = 0;
  Index frames = 0;
  bool explore = true;
  double reward = 0.0;
  double critic_loss_mean = 0.0;
  double violation_mean = 0.0;
  double sigma = 0.0;
  double projection_gap_mean = 0.0;
};

/// Header and rows of the learning curve.
void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, const EpisodeRecord& r);

struct TrainResult {
  std::vector<EpisodeRecord> episodes;
  std::int64_t gradient_steps = 0;
};

/// Training episode e runs with environment seed derive_seed(seed, e).
class Trainer {
 public:
  Trainer(TrainerConfig config, envs::Environment& env, std::uint64_t seed,
          std::optional<RegionTree> tree = std::nullopt);

  Agent& agent() noexcept { return agent_; }
  const Agent& agent() const noexcept { return agent_; }
  const ReplayBuffer& replay() const noexcept { return replay_; }

  /// Runs `episodes` more episodes; `on_episode` sees each record as it ends.
  TrainResult train(Index episodes, const std::function<void(const EpisodeRecord&)>& on_episode = {});

 private:
  EpisodeRecord run_episode(Index episode);

  envs::Environment& env_;
  std::uint64_t seed_;
  Agent agent_;
  ReplayBuffer replay_;
  Rng sample_rng_;
  Index next_episode_ = 0;
  std::int64_t frames_ = 0;
  std::int64_t gradient_steps_ = 0;
};

struct EvalResult {
  std::vector<double> rewards;
  double mean = 0.0;
  double stdev = 0.0;
};

/// Exploit-only episodes with the given environment seeds.
EvalResult evaluate(const Agent& agent, envs::Environment& env, const std::vector<std::uint64_t>& seeds);

EvalResult summarize(std::vector<double> rewards);

/// Flat region tree over the environment's fraction bounds.
RegionTree default_tree(const envs::Environment& env, Method method);

}  // namespace alloc::ddpg
