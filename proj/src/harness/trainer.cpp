#include "cmbac/harness/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmbac/common/errors.hpp"
#include "cmbac/nn/serialize.hpp"

namespace cmbac::harness {

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'M', 'B', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

bool resolve_known_reward(const TrainerConfig& c) {
  if (c.known_reward == "true") return true;
  if (c.known_reward == "false") return false;
  return c.env.rfind("point2d", 0) == 0;
}

std::unique_ptr<envs::Environment> checked_env(const TrainerConfig& c) {
  validate(c);
  return envs::make_env(c.env, c.noise_sigma);
}

AgentConfig agent_config_of(const TrainerConfig& c, const variants::ResolvedVariant& v) {
  AgentConfig a;
  a.critic.hidden = v.big_critic ? c.critic_hidden : c.critic_hidden_small;
  a.critic.activation = nn::parse_activation(c.critic_activation);
  a.critic.lr = c.critic_lr;
  a.critic.tau = c.tau;
  a.actor.hidden = c.policy_hidden;
  a.actor.activation = nn::parse_activation(c.policy_activation);
  a.actor.lr = c.policy_lr;
  a.alpha_init = c.alpha_init;
  a.auto_alpha = c.auto_alpha;
  a.alpha_lr = c.alpha_lr;
  a.target_entropy = c.target_entropy;
  a.gamma = c.gamma;
  return a;
}

std::vector<double> bounds(const Vector& v) { return to_std(v); }

std::size_t model_capacity(const TrainerConfig& c, int horizon) {
  const auto cap = static_cast<std::size_t>(c.model_retain_epochs) * static_cast<std::size_t>(c.steps_per_epoch) *
                   static_cast<std::size_t>(c.rollouts_per_step) * static_cast<std::size_t>(horizon);
  return std::max<std::size_t>(cap, static_cast<std::size_t>(c.batch_size));
}

Rng stream(const TrainerConfig& c, const char* name) { return Rng::derive(c.seed, name); }

model::GaussianEnsemble make_ensemble(const TrainerConfig& c, const envs::EnvSpec& spec) {
  Rng init = stream(c, "model-init");
  return model::GaussianEnsemble(spec.state_dim, spec.action_dim, ensemble_config_of(c), init);
}

Agent make_agent(const TrainerConfig& c, const envs::EnvSpec& spec) {
  Rng init = stream(c, "agent-init");
  const auto v = variants::resolve_variant(variants::parse_variant(c.variant), c.elite_count, knobs_of(c));
  return Agent(spec.state_dim, bounds(spec.action_low), bounds(spec.action_high), v, agent_config_of(c, v), init);
}

}  // namespace

EvalResult evaluate_policy(const envs::Environment& env, const ActFn& act, int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("evaluate_policy: episodes must be >= 1");
  if (env.spec().horizon < 1) throw ConfigError("evaluate_policy: horizon must be >= 1");
  EvalResult r;
  envs::EpisodeRunner runner(env);
  for (int ep = 0; ep < episodes; ++ep) {
    runner.reset(rng);
    bool done = false;
    while (!done) {
      const Tensor s = runner.state().transpose();
      const Tensor a = act(s);
      done = runner.step(a.row(0).transpose(), rng).done;
    }
    r.returns.push_back(runner.episode_return());
  }
  double sum = 0.0;
  for (double x : r.returns) sum += x;
  r.mean = sum / static_cast<double>(episodes);
  double ss = 0.0;
  for (double x : r.returns) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(episodes));
  return r;
}

EvalResult scripted_oracle(const TrainerConfig& config, int episodes) {
  auto env = envs::make_env(config.env, config.noise_sigma);
  if (config.env.rfind("point2d", 0) != 0) throw ConfigError("scripted oracle exists only for point2d");
  Rng rng = stream(config, "eval");
  return evaluate_policy(*env, [](const Tensor& s) { return envs::scripted_point_policy(s); }, episodes, rng);
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["env_steps"] = env_steps;
  j["eval_return_mean"] = eval_return_mean ? nlohmann::json(*eval_return_mean) : nlohmann::json(nullptr);
  j["eval_return_std"] = eval_return_std ? nlohmann::json(*eval_return_std) : nlohmann::json(nullptr);
  j["train_return_mean"] = train_return_mean;
  j["train_episodes"] = train_episodes;
  j["critic_loss"] = critic_loss;
  j["actor_loss"] = actor_loss;
  j["alpha"] = alpha;
  j["entropy"] = entropy;
  j["q_head_mean"] = q_head_mean;
  j["q_head_std"] = q_head_std;
  j["q_conservative_mean"] = q_conservative_mean;
  j["updates"] = updates;
  j["model_trained"] = model_trained;
  j["model_holdout_nll"] = model_holdout_nll;
  j["model_holdout_mse"] = model_holdout_mse;
  j["rollout_horizon"] = rollout_horizon;
  j["rollout_added"] = rollout_added;
  j["rollout_truncated"] = rollout_truncated;
  j["rollout_mean_reward"] = rollout_mean_reward;
  j["rollout_branch_variance"] = rollout_branch_variance;
  j["model_buffer_size"] = model_buffer_size;
  j["aborted"] = aborted;
  return j;
}

Trainer::Trainer(TrainerConfig config)
    : config_(std::move(config)),
      env_(checked_env(config_)),
      known_reward_(resolve_known_reward(config_)),
      model_set_(model::ModelSet::make(config_.elite_count,
                                       variants::resolve_variant(variants::parse_variant(config_.variant),
                                                                 config_.elite_count, knobs_of(config_))
                                           .members_per_model)),
      ensemble_(make_ensemble(config_, env_->spec())),
      env_buffer_(static_cast<std::size_t>(config_.env_buffer_capacity), env_->spec().state_dim,
                  env_->spec().action_dim),
      model_buffer_(model_capacity(config_, 1), env_->spec().state_dim, env_->spec().action_dim, model_set_.size()),
      agent_(make_agent(config_, env_->spec())),
      runner_(*env_),
      env_rng_(stream(config_, "env")),
      explore_rng_(stream(config_, "explore")),
      model_rng_(stream(config_, "model-train")),
      rollout_rng_(stream(config_, "rollout")),
      critic_rng_(stream(config_, "critic")),
      actor_rng_(stream(config_, "actor")) {}

void Trainer::maybe_train_model(EpochMetrics& m) {
  if (env_steps_ < config_.warmup_steps) return;
  if (ensemble_.trained() && steps_since_model_train_ < config_.model_train_interval) return;
  const auto report = ensemble_.train(env_buffer_, model_rng_);
  if (!report.trained) return;
  steps_since_model_train_ = 0;
  m.model_trained = true;
  m.model_holdout_nll = report.mean_elite_nll;
  m.model_holdout_mse = report.mean_elite_mse;
}

void Trainer::env_step(EpochMetrics& m, double& return_sum) {
  const auto& spec = env_->spec();
  if (!runner_.started()) runner_.reset(env_rng_);
  Vector action(spec.action_dim);
  if (env_steps_ < config_.warmup_steps) {
    for (int d = 0; d < spec.action_dim; ++d) action(d) = explore_rng_.uniform(spec.action_low(d), spec.action_high(d));
  } else {
    const Tensor s = runner_.state().transpose();
    action = agent_.policy().sample(s, explore_rng_).actions.row(0).transpose();
  }
  const auto tr = runner_.step(action, env_rng_);
  env_buffer_.add(tr.state, tr.action, tr.reward, tr.next_state, tr.done);
  ++env_steps_;
  ++steps_since_model_train_;
  if (tr.done) {
    return_sum += runner_.episode_return();
    ++m.train_episodes;
    runner_.reset(env_rng_);
  }

  maybe_train_model(m);
  if (!ensemble_.trained()) return;

  if (config_.rollouts_per_step > 0) {
    const auto& policy = agent_.policy();
    model::ActionSampler sampler = [&policy](const Tensor& s, Rng& rng) { return policy.sample(s, rng).actions; };
    model::RewardFn reward = [this](const Tensor& s, const Tensor& a) { return env_->reward(s, a); };
    model::RewardAdjust adjust;
    if (agent_.variant().mopo_penalty > 0.0) adjust = variants::mopo_reward_adjust(ensemble_, agent_.variant().mopo_penalty);
    model::RolloutConfig rc{m.rollout_horizon, config_.rollouts_per_step};
    const auto st = model::branched_rollout(ensemble_, model_set_, sampler, env_buffer_, rc,
                                            known_reward_ ? &reward : nullptr, adjust ? &adjust : nullptr,
                                            rollout_rng_, model_buffer_);
    m.rollout_added += static_cast<std::int64_t>(st.added);
    m.rollout_truncated += static_cast<std::int64_t>(st.truncated);
    m.rollout_mean_reward += st.mean_reward * static_cast<double>(st.added);
    m.rollout_branch_variance += st.branch_variance * static_cast<double>(st.added);
  }

  if (model_buffer_.size() < static_cast<std::size_t>(config_.min_model_samples)) return;
  for (int g = 0; g < config_.updates_per_step; ++g) {
    last_batch_ = model_buffer_.sample(static_cast<std::size_t>(config_.batch_size), critic_rng_);
    const auto rep = agent_.update(last_batch_, critic_rng_, actor_rng_);
    if (!rep.finite) {
      aborted_ = true;
      return;
    }
    double cl = 0.0;
    for (double l : rep.critic_losses) cl += l;
    m.critic_loss += cl / static_cast<double>(rep.critic_losses.size());
    m.actor_loss += rep.actor_loss;
    m.entropy += rep.entropy;
    ++m.updates;
  }
}

void Trainer::probe_q(EpochMetrics& m) const {
  if (last_batch_.size() == 0) return;
  const Tensor& s = last_batch_.states;
  const Tensor a = agent_.policy().deterministic(s);
  std::vector<Tensor> per_net;
  double mean = 0.0, sd = 0.0;
  for (int n = 0; n < agent_.critics().networks(); ++n) {
    const Tensor q = agent_.critics().online(n).values(s, a);
    mean += q.mean();
    const Vector row_mean = q.rowwise().mean();
    sd += ((q.colwise() - row_mean).array().square().rowwise().mean().sqrt()).mean();
    per_net.push_back(q);
  }
  const double nets = static_cast<double>(per_net.size());
  m.q_head_mean = mean / nets;
  m.q_head_std = sd / nets;
  m.q_conservative_mean = agent_.aggregator().plain(per_net).mean();
}

EpochMetrics Trainer::run_epoch() {
  if (aborted_) throw UsageError("run_epoch after abort");
  EpochMetrics m;
  m.epoch = epoch_ + 1;
  m.rollout_horizon = model::rollout_horizon(m.epoch, horizon_schedule_of(config_));
  model_buffer_.set_capacity(model_capacity(config_, m.rollout_horizon));

  double return_sum = 0.0;
  for (int t = 0; t < config_.steps_per_epoch && !aborted_; ++t) env_step(m, return_sum);
  epoch_ = m.epoch;
  m.env_steps = env_steps_;
  m.aborted = aborted_;

  if (m.train_episodes > 0) m.train_return_mean = return_sum / m.train_episodes;
  if (m.updates > 0) {
    const auto n = static_cast<double>(m.updates);
    m.critic_loss /= n;
    m.actor_loss /= n;
    m.entropy /= n;
  }
  if (m.rollout_added > 0) {
    m.rollout_mean_reward /= static_cast<double>(m.rollout_added);
    m.rollout_branch_variance /= static_cast<double>(m.rollout_added);
  }
  m.alpha = agent_.alpha();
  m.model_buffer_size = static_cast<std::int64_t>(model_buffer_.size());
  probe_q(m);
  if (!aborted_ && (m.epoch % config_.eval_every == 0 || m.epoch == config_.epochs)) {
    const auto ev = evaluate(config_.eval_episodes);
    m.eval_return_mean = ev.mean;
    m.eval_return_std = ev.std;
  }
  return m;
}

EvalResult Trainer::evaluate(int episodes) const {
  Rng rng = stream(config_, "eval");
  const auto& policy = agent_.policy();
  return evaluate_policy(*env_, [&policy](const Tensor& s) { return policy.deterministic(s); }, episodes, rng);
}

std::string Trainer::checkpoint() const {
  nn::BinaryWriter w;
  w.str(config_to_json(config_).dump());
  w.i64(epoch_);
  w.i64(env_steps_);
  w.i64(steps_since_model_train_);
  w.boolean(aborted_);
  for (const Rng* r : {&env_rng_, &explore_rng_, &model_rng_, &rollout_rng_, &critic_rng_, &actor_rng_}) {
    w.str(r->state());
  }
  w.boolean(runner_.started());
  w.f64s(to_std(runner_.state()));
  w.i64(runner_.time_step());
  w.f64(runner_.episode_return());
  env_buffer_.save(w);
  model_buffer_.save(w);
  ensemble_.save(w);
  agent_.save(w);
  w.boolean(last_batch_.size() > 0);
  if (last_batch_.size() > 0) {
    w.tensor(last_batch_.states);
  }
  const std::string payload = w.take();

  nn::BinaryWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 4));
  out.u32(kCheckpointVersion);
  out.u64(fnv1a64(payload));
  out.str(payload);
  return out.take();
}

std::unique_ptr<Trainer> Trainer::restore(std::string_view bytes) {
  nn::BinaryReader head(bytes);
  if (head.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw SerializationError("checkpoint: bad magic");
  if (head.u32() != kCheckpointVersion) throw SerializationError("checkpoint: unsupported version");
  const std::uint64_t checksum = head.u64();
  const std::string payload = head.str();
  if (!head.at_end()) throw SerializationError("checkpoint: trailing bytes");
  if (fnv1a64(payload) != checksum) throw SerializationError("checkpoint: checksum mismatch");

  nn::BinaryReader r(payload);
  TrainerConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw SerializationError(std::string("checkpoint: bad config: ") + e.what());
  }
  auto t = std::make_unique<Trainer>(config);
  t->epoch_ = static_cast<int>(r.i64());
  t->env_steps_ = r.i64();
  t->steps_since_model_train_ = r.i64();
  t->aborted_ = r.boolean();
  for (Rng* g : {&t->env_rng_, &t->explore_rng_, &t->model_rng_, &t->rollout_rng_, &t->critic_rng_, &t->actor_rng_}) {
    try {
      g->set_state(r.str());
    } catch (const std::exception& e) {
      throw SerializationError(std::string("checkpoint: bad rng state: ") + e.what());
    }
  }
  const bool started = r.boolean();
  Vector state = from_std(r.f64s());
  const int time_step = static_cast<int>(r.i64());
  const double ret = r.f64();
  if (started) {
    if (state.size() != t->env_->spec().state_dim) throw SerializationError("checkpoint: episode state size");
    t->runner_.restore(std::move(state), time_step, ret);
  }
  t->env_buffer_ = model::EnvBuffer::load(r);
  t->model_buffer_ = model::ModelBuffer::load(r);
  t->ensemble_.load(r);
  t->agent_.load(r);
  if (r.boolean()) t->last_batch_.states = r.tensor();
  if (!r.at_end()) throw SerializationError("checkpoint: trailing payload bytes");
  if (t->env_buffer_.state_dim() != t->env_->spec().state_dim ||
      t->model_buffer_.heads() != t->model_set_.size()) {
    throw SerializationError("checkpoint: buffer layout does not match the configuration");
  }
  return t;
}

std::string RunPaths::checkpoint(int epoch) const { return dir + "/checkpoint_epoch_" + std::to_string(epoch) + ".bin"; }

nlohmann::json make_manifest(const TrainerConfig& config, const variants::ResolvedVariant& v, const RunPaths& paths) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config_to_json(config);
  j["variant"] = {
      {"name", variants::to_string(v.variant)},
      {"members_per_model", v.members_per_model},
      {"heads", v.heads},
      {"drop", v.drop},
      {"target_rule", v.target_rule == critic::TargetRule::PerHead ? "per_head" : "shared"},
      {"aggregation", variants::to_string(v.aggregation)},
      {"big_critic", v.big_critic},
      {"critic_networks", v.critic_networks},
      {"entropy", v.entropy},
      {"uncertainty_penalty", v.uncertainty_penalty},
      {"mopo_penalty", v.mopo_penalty},
  };
  j["known_reward"] = resolve_known_reward(config);
  j["parallel"] = false;
  j["output_dir"] = paths.dir;
  j["metrics"] = "metrics.jsonl";
  j["checkpoints"] = {
      {"every_epochs", config.checkpoint_every},
      {"pattern", "checkpoint_epoch_<N>.bin"},
      {"final", "checkpoint_final.bin"},
  };
  j["rng_streams"] = {"env", "explore", "model-init", "model-train", "rollout", "agent-init", "critic", "actor",
                      "eval"};
  j["rng_derivation"] = "splitmix64(seed ^ fnv1a64(name)) seeds a mt19937_64 per stream";
  return j;
}

RunSummary run_training(const TrainerConfig& config, const std::string& out_dir,
                        const std::function<void(const EpochMetrics&)>& on_epoch) {
  RunPaths paths{out_dir};
  std::filesystem::create_directories(out_dir);
  Trainer trainer(config);
  {
    std::ofstream mf(paths.manifest());
    if (!mf) throw SerializationError("cannot write " + paths.manifest());
    mf << make_manifest(config, trainer.variant(), paths).dump(2) << '\n';
  }
  std::ofstream metrics(paths.metrics());
  if (!metrics) throw SerializationError("cannot write " + paths.metrics());

  RunSummary summary;
  while (!trainer.finished()) {
    const auto m = trainer.run_epoch();
    metrics << m.to_json().dump() << '\n';
    metrics.flush();
    if (on_epoch) on_epoch(m);
    summary.epochs = m.epoch;
    summary.env_steps = m.env_steps;
    if (m.aborted) {
      summary.aborted = true;
      break;
    }
    summary.final_eval = m.eval_return_mean;
    if (config.checkpoint_every > 0 && m.epoch % config.checkpoint_every == 0) {
      nn::write_file(paths.checkpoint(m.epoch), trainer.checkpoint());
      summary.last_checkpoint = paths.checkpoint(m.epoch);
    }
  }
  if (!summary.aborted) {
    nn::write_file(paths.final_checkpoint(), trainer.checkpoint());
    summary.last_checkpoint = paths.final_checkpoint();
  }
  return summary;
}

}  // namespace cmbac::harness
