#include "alloc_layers/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/qp_oracle.hpp"

namespace alloc::ddpg {

namespace {

constexpr double kStateClip = 5.0;
// Actions are fractions with resolution 1/C; a near-constant component would
// otherwise be blown up by the normaliser.
constexpr double kActionStdFloor = 1e-2;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

Matrix columns(const std::vector<const Transition*>& batch, Vector Transition::*field) {
  const auto b = static_cast<Index>(batch.size());
  Matrix out((batch.front()->*field).size(), b);
  for (Index i = 0; i < b; ++i) out.col(i) = batch[static_cast<std::size_t>(i)]->*field;
  return out;
}

bool is_hidden_weight(const nn::ParamSet& params, std::size_t i) {
  // The output layer's weight is the second-to-last tensor.
  return params[i].kind == nn::TensorKind::kWeight && i + 2 != params.size();
}

}  // namespace

const char* method_name(Method m) noexcept {
  switch (m) {
    case Method::kCp:
      return "cp";
    case Method::kCs:
      return "cs";
    case Method::kApprOpt:
      return "appropt";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "cp") return Method::kCp;
  if (name == "cs") return Method::kCs;
  if (name == "appropt") return Method::kApprOpt;
  throw PreconditionViolated("method is cp, cs or appropt", "got '" + name + "'");
}

double default_penalty(Method method, const std::string& env_name) {
  const bool bss = env_name.rfind("bss", 0) == 0;
  switch (method) {
    case Method::kCp:
      return bss ? 1e5 : 1e3;
    case Method::kApprOpt:
      return bss ? 1e4 : 1e3;
    case Method::kCs:
      return 0.0;
  }
  return 0.0;
}

void TrainerConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidBounds("gamma must lie in (0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidBounds("tau must lie in (0, 1]");
  if (!(critic_lr > 0.0 && actor_lr > 0.0)) throw InvalidBounds("learning rates must be positive");
  if (!(critic_l2 >= 0.0)) throw InvalidBounds("critic_l2 must be non-negative");
  if (batch < 1 || replay_capacity < static_cast<std::size_t>(batch)) {
    throw InvalidBounds("batch must be positive and fit in the replay buffer");
  }
  if (train_every < 1) throw InvalidBounds("train_every must be positive");
  if (!(noise_target >= 0.0 && noise_adapt > 1.0 && noise_initial >= 0.0)) {
    throw InvalidBounds("noise target and initial scale must be non-negative, adaptation factor above 1");
  }
  if (exploit_every < 0) throw InvalidBounds("exploit_every must be non-negative");
  if (hidden.empty()) throw InvalidBounds("at least one hidden layer");
  for (Index h : hidden) {
    if (h < 1) throw InvalidBounds("hidden widths must be positive");
  }
  if (warmup < 0) throw InvalidBounds("warmup must be non-negative");
}

TrainerConfig TrainerConfig::from_config(const KeyValueConfig& cfg) { return from_config(cfg, TrainerConfig{}); }

TrainerConfig TrainerConfig::from_config(const KeyValueConfig& cfg, const TrainerConfig& d) {
  TrainerConfig c = d;
  c.method = parse_method(cfg.get_string("method", method_name(d.method)));
  c.gamma = cfg.get_double("gamma", d.gamma);
  c.tau = cfg.get_double("tau", d.tau);
  c.critic_lr = cfg.get_double("critic_lr", d.critic_lr);
  c.actor_lr = cfg.get_double("actor_lr", d.actor_lr);
  c.critic_l2 = cfg.get_double("critic_l2", d.critic_l2);
  c.batch = cfg.get_int("batch", d.batch);
  const auto capacity = cfg.get_int("replay_capacity", static_cast<std::int64_t>(d.replay_capacity));
  if (capacity < 1) throw InvalidBounds("replay_capacity must be positive");
  c.replay_capacity = static_cast<std::size_t>(capacity);
  c.train_every = cfg.get_int("train_every", d.train_every);
  c.penalty_lambda = cfg.get_double("penalty_lambda", d.penalty_lambda);
  c.noise_target = cfg.get_double("noise_target", d.noise_target);
  c.noise_adapt = cfg.get_double("noise_adapt", d.noise_adapt);
  c.noise_initial = cfg.get_double("noise_initial", d.noise_initial);
  c.exploit_every = cfg.get_int("exploit_every", d.exploit_every);
  std::vector<double> fallback(d.hidden.begin(), d.hidden.end());
  c.hidden.clear();
  for (double h : cfg.get_doubles("hidden", fallback)) c.hidden.push_back(static_cast<Index>(h));
  c.layer_norm = cfg.get_bool("layer_norm", d.layer_norm);
  c.warmup = cfg.get_int("warmup", d.warmup);
  c.validate();
  return c;
}

std::string TrainerConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "actor_lr = " << actor_lr << "\nbatch = " << batch << "\ncritic_l2 = " << critic_l2
     << "\ncritic_lr = " << critic_lr << "\nexploit_every = " << exploit_every << "\ngamma = " << gamma
     << "\nhidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
  os << "\nlayer_norm = " << (layer_norm ? "true" : "false") << "\nmethod = " << method_name(method)
     << "\nnoise_adapt = " << noise_adapt << "\nnoise_initial = " << noise_initial
     << "\nnoise_target = " << noise_target << "\npenalty_lambda = " << penalty_lambda
     << "\nreplay_capacity = " << replay_capacity << "\ntau = " << tau << "\ntrain_every = " << train_every
     << "\nwarmup = " << warmup << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidBounds("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t count, Rng& rng) const {
  if (items_.size() < count || count == 0) {
    throw PreconditionViolated("replay holds at least a batch",
                               std::to_string(items_.size()) + " stored, " + std::to_string(count) + " requested");
  }
  std::vector<const Transition*> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(&items_[rng.below(items_.size())]);
  return out;
}

// ---------------------------------------------------------------------------

Agent::Agent(TrainerConfig config, RegionTree tree, std::int64_t resources, Index state_dim, std::uint64_t seed)
    : config_(std::move(config)),
      tree_(std::move(tree)),
      resources_(resources),
      state_dim_(state_dim),
      obs_moments_(state_dim),
      action_moments_(tree_.entity_count()),
      action_target_moments_(tree_.entity_count()) {
  if (resources < 1) throw InvalidBounds("agent needs at least one resource");
  if (config_.penalty_lambda < 0.0) config_.penalty_lambda = default_penalty(config_.method, "ers");
  if (config_.noise_target == 0.0) config_.noise_target = 1.0 / static_cast<double>(resources);
  if (config_.warmup < config_.batch) config_.warmup = config_.batch;
  config_.validate();
  if (config_.method == Method::kCs) {
    // Fails early, with the offending node, when CS does not apply.
    nested_forward(Vector::Constant(tree_.layout().total(), -1.0), tree_);
  }
  sigma_ = config_.noise_initial;

  const Index n = tree_.entity_count();
  actor_spec_.widths.push_back(state_dim);
  for (Index h : config_.hidden) actor_spec_.widths.push_back(h);
  actor_spec_.widths.push_back(tree_.layout().total());
  actor_spec_.layer_norm = config_.layer_norm;
  actor_spec_.output = config_.method == Method::kCs ? nn::OutputActivation::kLinear : nn::OutputActivation::kTanhUnit;

  critic_spec_.widths = actor_spec_.widths;
  critic_spec_.widths.back() = 1;
  critic_spec_.layer_norm = config_.layer_norm;
  critic_spec_.aux_width = n;
  critic_spec_.aux_layer = config_.hidden.size() > 1 ? 1 : 0;

  actor_ = nn::init_params(actor_spec_, derive_seed(seed, 1));
  if (config_.method == Method::kCs) {
    // Start inside the squash's active range (x < 0).
    actor_.mutable_value(actor_.size() - 1).setConstant(-1.0);
  }
  critic_ = nn::init_params(critic_spec_, derive_seed(seed, 2));
  actor_target_ = actor_;
  critic_target_ = critic_;
  actor_perturbed_ = actor_;
  actor_adam_ = nn::adam_init(actor_);
  critic_adam_ = nn::adam_init(critic_);
}

Matrix Agent::normalize_states(const Matrix& states) const {
  if (states.rows() != state_dim_) throw DimensionMismatch("state width differs from the agent's");
  if (obs_moments_.count() == 0) return states;
  return obs_moments_.normalize_batch(states).cwiseMax(-kStateClip).cwiseMin(kStateClip);
}

Vector Agent::action_scale(bool target) const {
  const auto& m = target ? action_target_moments_ : action_moments_;
  return m.variance().cwiseMax(kActionStdFloor * kActionStdFloor).cwiseSqrt().cwiseInverse();
}

Matrix Agent::normalize_actions(const Matrix& actions, bool target) const {
  const auto& m = target ? action_target_moments_ : action_moments_;
  return (actions.colwise() - m.mean()).array().colwise() * action_scale(target).array();
}

Vector Agent::layer_output(const Vector& raw) const {
  if (config_.method == Method::kCp) return qp::cp_project(raw, tree_);
  return nested_forward(raw, tree_).z;
}

Vector Agent::critic_action(const Vector& raw) const {
  return config_.method == Method::kCp ? raw : nested_forward(raw, tree_).z;
}

Matrix Agent::batch_critic_actions(const Matrix& raw) const {
  Matrix out(action_dim(), raw.cols());
  for (Index i = 0; i < raw.cols(); ++i) out.col(i) = layer_output(raw.col(i));
  return out;
}

ActionChoice Agent::act(const Vector& state, bool explore) const {
  const Vector s = normalize_states(state);
  Vector raw = nn::predict(explore ? actor_perturbed_ : actor_, actor_spec_, s);
  Vector z = layer_output(raw);
  auto executed = round_to_discrete(z, resources_, tree_.bounds());
  return ActionChoice{std::move(raw), std::move(z), std::move(executed)};
}

void Agent::perturb(std::uint64_t seed) { actor_perturbed_ = nn::perturb_params(actor_, sigma_, seed); }

double Agent::noise_divergence(const Matrix& states) const {
  const Matrix s = normalize_states(states);
  const Matrix clean = batch_critic_actions(nn::forward(actor_, actor_spec_, s).output());
  const Matrix noisy = batch_critic_actions(nn::forward(actor_perturbed_, actor_spec_, s).output());
  return std::sqrt((clean - noisy).squaredNorm() / static_cast<double>(clean.size()));
}

double Agent::adapt_noise(const Matrix& states) {
  const double d = noise_divergence(states);
  if (d > config_.noise_target) {
    sigma_ /= config_.noise_adapt;
  } else {
    sigma_ *= config_.noise_adapt;
  }
  return d;
}

double Agent::critic_update(const std::vector<const Transition*>& batch) {
  if (batch.empty()) throw PreconditionViolated("non-empty batch", "critic update got no transitions");
  const auto b = static_cast<Index>(batch.size());
  const Matrix states = normalize_states(columns(batch, &Transition::state));
  const Matrix next = normalize_states(columns(batch, &Transition::next_state));
  const Matrix actions = normalize_actions(columns(batch, &Transition::action), false);

  const Matrix next_actions =
      normalize_actions(batch_critic_actions(nn::forward(actor_target_, actor_spec_, next).output()), true);
  const Matrix next_q = nn::forward(critic_target_, critic_spec_, next, &next_actions).output();

  Vector y(b);
  for (Index i = 0; i < b; ++i) {
    const Transition& t = *batch[static_cast<std::size_t>(i)];
    y[i] = t.reward + (t.terminal ? 0.0 : config_.gamma * next_q(0, i));
  }
  const auto tape = nn::forward(critic_, critic_spec_, states, &actions);
  const Eigen::RowVectorXd diff = tape.output().row(0) - y.transpose();
  const double loss = diff.squaredNorm() / static_cast<double>(b);
  Matrix upstream = 2.0 * diff / static_cast<double>(b);
  auto grads = nn::backward(tape, upstream);
  for (std::size_t i = 0; i < critic_.size(); ++i) {
    if (is_hidden_weight(critic_, i)) grads.params.mutable_value(i) += config_.critic_l2 * critic_[i].value;
  }
  nn::adam_step(critic_, grads.params, critic_adam_, nn::AdamConfig{config_.critic_lr});
  return loss;
}

CriticFn Agent::critic_fn() const {
  return [this](const Matrix& states, const Matrix& actions) {
    const Matrix s = normalize_states(states);
    const Matrix a = normalize_actions(actions, false);
    const auto tape = nn::forward(critic_, critic_spec_, s, &a);
    const auto grads = nn::backward(tape, Matrix::Ones(1, states.cols()));
    CriticEval out;
    out.q = tape.output().row(0).transpose();
    out.dq_dz = grads.aux.array().colwise() * action_scale(false).array();
    return out;
  };
}

std::pair<ActorStats, nn::ParamSet> Agent::actor_gradient(const Matrix& states, const CriticFn& critic) const {
  const Index b = states.cols();
  if (b == 0) throw PreconditionViolated("non-empty batch", "actor update got no states");
  const auto tape = nn::forward(actor_, actor_spec_, normalize_states(states));
  const Matrix& raw = tape.output();
  const Index n = action_dim();

  Matrix actions(n, b);
  std::vector<Matrix> jacobians;
  jacobians.reserve(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    if (config_.method == Method::kCp) {
      actions.col(i) = raw.col(i);
      jacobians.push_back(Matrix::Identity(n, n));
    } else {
      auto res = nested_forward(raw.col(i), tree_);
      actions.col(i) = res.z;
      jacobians.push_back(std::move(res.jacobian.d_dy));
    }
  }
  const CriticEval q = critic(states, actions);

  const bool penalised = config_.method != Method::kCs && config_.penalty_lambda > 0.0;
  ActorStats stats;
  Matrix upstream(raw.rows(), b);
  for (Index i = 0; i < b; ++i) {
    Vector g = -(jacobians[static_cast<std::size_t>(i)].transpose() * q.dq_dz.col(i));
    double objective = -q.q[i];
    if (penalised) {
      const auto v = qp::violation_cost(raw.col(i), tree_);
      g += config_.penalty_lambda * v.gradient;
      objective += config_.penalty_lambda * v.cost;
      stats.violation += v.cost;
    }
    upstream.col(i) = g / static_cast<double>(b);
    stats.objective += objective;
  }
  stats.objective /= static_cast<double>(b);
  stats.violation /= static_cast<double>(b);
  auto grads = nn::backward(tape, upstream);
  stats.grad_norm = std::sqrt(grads.params.squared_norm());
  return {stats, std::move(grads.params)};
}

ActorStats Agent::actor_update_with(const Matrix& states, const CriticFn& critic) {
  auto [stats, grads] = actor_gradient(states, critic);
  nn::adam_step(actor_, grads, actor_adam_, nn::AdamConfig{config_.actor_lr});
  return stats;
}

ActorStats Agent::actor_update(const Matrix& states) { return actor_update_with(states, critic_fn()); }

void Agent::soft_update_targets() {
  nn::soft_update(actor_target_, actor_, config_.tau);
  nn::soft_update(critic_target_, critic_, config_.tau);
  action_target_moments_.soft_update(action_moments_, config_.tau);
}

nn::Checkpoint Agent::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.meta["method"] = method_name(config_.method);
  ckpt.meta["resources"] = std::to_string(resources_);
  ckpt.meta["state_dim"] = std::to_string(state_dim_);
  ckpt.meta["sigma"] = hexfloat(sigma_);
  std::istringstream lines(config_.describe());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) ckpt.meta["config." + line.substr(0, eq)] = line.substr(eq + 3);
  }
  ckpt.nets["actor"] = {actor_spec_, actor_};
  ckpt.nets["actor_target"] = {actor_spec_, actor_target_};
  ckpt.nets["critic"] = {critic_spec_, critic_};
  ckpt.nets["critic_target"] = {critic_spec_, critic_target_};
  ckpt.moments["observation"] = obs_moments_;
  ckpt.moments["action"] = action_moments_;
  ckpt.moments["action_target"] = action_target_moments_;
  return ckpt;
}

void Agent::load_checkpoint(const nn::Checkpoint& ckpt) {
  auto net = [&](const std::string& name, const nn::NetSpec& spec) -> const nn::ParamSet& {
    const auto it = ckpt.nets.find(name);
    if (it == ckpt.nets.end()) throw ParseError("<checkpoint>", 0, "missing network '" + name + "'");
    if (!(it->second.spec == spec)) throw ParseError("<checkpoint>", 0, "network '" + name + "' has another shape");
    return it->second.params;
  };
  auto moments = [&](const std::string& name) -> const nn::RunningMoments& {
    const auto it = ckpt.moments.find(name);
    if (it == ckpt.moments.end()) throw ParseError("<checkpoint>", 0, "missing moments '" + name + "'");
    return it->second;
  };
  const auto method = ckpt.meta.find("method");
  if (method == ckpt.meta.end() || method->second != method_name(config_.method)) {
    throw ParseError("<checkpoint>", 0, "checkpoint was written for another method");
  }
  actor_ = net("actor", actor_spec_);
  actor_target_ = net("actor_target", actor_spec_);
  critic_ = net("critic", critic_spec_);
  critic_target_ = net("critic_target", critic_spec_);
  obs_moments_ = moments("observation");
  action_moments_ = moments("action");
  action_target_moments_ = moments("action_target");
  if (obs_moments_.dim() != state_dim_ || action_moments_.dim() != action_dim()) {
    throw ParseError("<checkpoint>", 0, "normaliser widths differ from the agent's");
  }
  const auto sigma = ckpt.meta.find("sigma");
  if (sigma != ckpt.meta.end()) sigma_ = std::strtod(sigma->second.c_str(), nullptr);
  actor_perturbed_ = actor_;
  actor_adam_ = nn::adam_init(actor_);
  critic_adam_ = nn::adam_init(critic_);
}

Agent Agent::from_checkpoint(const nn::Checkpoint& ckpt, const RegionTree& tree) {
  std::string text;
  for (const auto& [key, value] : ckpt.meta) {
    if (key.rfind("config.", 0) == 0) text += key.substr(7) + " = " + value + "\n";
  }
  const auto field = [&](const char* key) {
    const auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw ParseError("<checkpoint>", 0, std::string("missing meta field '") + key + "'");
    return it->second;
  };
  const TrainerConfig config = TrainerConfig::from_config(KeyValueConfig::parse(text, "<checkpoint config>"));
  Agent agent(config, tree, std::stoll(field("resources")), std::stoll(field("state_dim")), 0);
  agent.load_checkpoint(ckpt);
  return agent;
}

// ---------------------------------------------------------------------------

void write_curve_header(std::ostream& out) {
  out << "episode,frames,explore,reward,critic_loss_mean,violation_mean,sigma,projection_gap_mean\n";
}

void write_curve_row(std::ostream& out, const EpisodeRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.episode),
                static_cast<long long>(r.frames), r.explore ? 1 : 0, r.reward, r.critic_loss_mean, r.violation_mean,
                r.sigma, r.projection_gap_mean);
  out << buf;
}

RegionTree default_tree(const envs::Environment& env, Method method) {
  return RegionTree::flat(env.fraction_bounds(),
                          method == Method::kCs ? alloc::Method::kCs : alloc::Method::kApprOpt);
}

namespace {

TrainerConfig resolve(TrainerConfig c, const envs::Environment& env) {
  if (c.penalty_lambda < 0.0) c.penalty_lambda = default_penalty(c.method, env.name());
  if (c.noise_target == 0.0) c.noise_target = 1.0 / static_cast<double>(env.resource_count());
  return c;
}

}  // namespace

Trainer::Trainer(TrainerConfig config, envs::Environment& env, std::uint64_t seed, std::optional<RegionTree> tree)
    : env_(env),
      seed_(seed),
      agent_(resolve(config, env),
             tree ? std::move(*tree) : default_tree(env, config.method), env.resource_count(),
             envs::History::state_dim(env.entity_count()), derive_seed(seed, 100)),
      replay_(agent_.config().replay_capacity),
      sample_rng_(derive_seed(seed, 101)) {}

EpisodeRecord Trainer::run_episode(Index episode) {
  const auto& cfg = agent_.config();
  EpisodeRecord rec;
  rec.episode = episode;
  rec.explore = cfg.exploit_every == 0 || (episode + 1) % cfg.exploit_every != 0;
  rec.sigma = agent_.sigma();
  if (rec.explore) agent_.perturb(derive_seed(derive_seed(seed_, 102), static_cast<std::uint64_t>(episode)));

  envs::History history(env_.entity_count());
  history.reset(env_.reset(derive_seed(seed_, static_cast<std::uint64_t>(episode))));
  Vector state = history.state();
  const bool flat_appropt = cfg.method == Method::kApprOpt && agent_.tree().is_flat();
  const BoundSpec& bounds = agent_.tree().bounds();
  double loss_sum = 0.0, gap_sum = 0.0;
  std::int64_t losses = 0;

  for (bool done = false; !done;) {
    agent_.observation_moments().update(state);
    const ActionChoice choice = agent_.act(state, rec.explore);
    const envs::StepResult step = env_.step(choice.executed);
    history.push(step.observation);
    Vector next = history.state();

    Vector action = normalize_discrete(choice.executed);
    if (!check_feasibility(action, agent_.tree()).feasible) {
      throw InternalAssertion("executed action violates the constraints");
    }
    agent_.action_moments().update(action);
    if (cfg.method != Method::kCs) rec.violation_mean += qp::violation_cost(choice.raw, agent_.tree()).cost;
    if (flat_appropt) gap_sum += qp::projection_gap(appropt::prescale(choice.raw, bounds).y, bounds).gap;
    replay_.push(Transition{state, std::move(action), step.reward, next, step.done});

    rec.reward += step.reward;
    ++rec.frames;
    ++frames_;
    done = step.done;
    state = std::move(next);

    if (static_cast<Index>(replay_.size()) >= cfg.warmup && frames_ % cfg.train_every == 0) {
      const auto batch = replay_.sample(static_cast<std::size_t>(cfg.batch), sample_rng_);
      loss_sum += agent_.critic_update(batch);
      ++losses;
      Matrix states(agent_.state_dim(), cfg.batch);
      for (Index i = 0; i < cfg.batch; ++i) states.col(i) = batch[static_cast<std::size_t>(i)]->state;
      agent_.actor_update(states);
      agent_.soft_update_targets();
      ++gradient_steps_;
    }
  }
  if (rec.explore && static_cast<Index>(replay_.size()) >= cfg.warmup) {
    const auto batch = replay_.sample(static_cast<std::size_t>(cfg.batch), sample_rng_);
    Matrix states(agent_.state_dim(), cfg.batch);
    for (Index i = 0; i < cfg.batch; ++i) states.col(i) = batch[static_cast<std::size_t>(i)]->state;
    agent_.adapt_noise(states);
  }
  rec.critic_loss_mean = losses ? loss_sum / static_cast<double>(losses) : 0.0;
  rec.violation_mean /= static_cast<double>(rec.frames);
  rec.projection_gap_mean = gap_sum / static_cast<double>(rec.frames);
  return rec;
}

TrainResult Trainer::train(Index episodes, const std::function<void(const EpisodeRecord&)>& on_episode) {
  if (episodes < 0) throw PreconditionViolated("episodes >= 0", std::to_string(episodes));
  TrainResult out;
  for (Index e = 0; e < episodes; ++e) {
    out.episodes.push_back(run_episode(next_episode_++));
    if (on_episode) on_episode(out.episodes.back());
  }
  out.gradient_steps = gradient_steps_;
  return out;
}

EvalResult summarize(std::vector<double> rewards) {
  EvalResult r;
  r.rewards = std::move(rewards);
  if (r.rewards.empty()) return r;
  for (double v : r.rewards) r.mean += v;
  r.mean /= static_cast<double>(r.rewards.size());
  for (double v : r.rewards) r.stdev += (v - r.mean) * (v - r.mean);
  r.stdev = std::sqrt(r.stdev / static_cast<double>(r.rewards.size()));
  return r;
}

EvalResult evaluate(const Agent& agent, envs::Environment& env, const std::vector<std::uint64_t>& seeds) {
  std::vector<double> rewards;
  rewards.reserve(seeds.size());
  for (auto seed : seeds) {
    envs::History history(env.entity_count());
    history.reset(env.reset(seed));
    double total = 0.0;
    for (bool done = false; !done;) {
      const auto choice = agent.act(history.state(), false);
      const auto step = env.step(choice.executed);
      total += step.reward;
      done = step.done;
      history.push(step.observation);
    }
    rewards.push_back(total);
  }
  return summarize(std::move(rewards));
}

}  // namespace alloc::ddpg
