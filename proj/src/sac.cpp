#include "pir/sac.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pir {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSquashEps = 1e-6;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * kPi);

struct PolicySample {
  Eigen::ArrayXd mu, ls, sigma, eps, t, logp;
  Eigen::Array<bool, Eigen::Dynamic, 1> clamped;
};

PolicySample sample_policy(const Mlp<double>& policy, const MatrixXd& s, Rng& rng, Trace<double>* trace) {
  const MatrixXd out = forward_batch(policy, s, trace);
  const auto n = out.cols();
  PolicySample ps;
  ps.mu = out.row(0).transpose().array();
  const Eigen::ArrayXd raw = out.row(1).transpose().array();
  ps.ls = raw.max(kLogStdMin).min(kLogStdMax);
  ps.clamped = raw < kLogStdMin || raw > kLogStdMax;
  ps.sigma = ps.ls.exp();
  ps.eps.resize(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index b = 0; b < n; ++b) ps.eps(b) = normal(rng);
  ps.t = (ps.mu + ps.sigma * ps.eps).tanh();
  // Gaussian log-density of u, then the change of variables a = pi * tanh(u).
  ps.logp = -0.5 * ps.eps.square() - ps.ls - kHalfLog2Pi - (kPi * (1.0 - ps.t.square()) + kSquashEps).log();
  return ps;
}

MatrixXd critic_input(const MatrixXd& s, const Eigen::ArrayXd& scaled_action) {
  MatrixXd in(s.rows() + 1, s.cols());
  in.topRows(s.rows()) = s;
  in.row(s.rows()) = scaled_action.transpose().matrix();
  return in;
}

void require_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "sac_update: non-finite " << what << " loss (" << v << ") at update " << step;
    throw std::runtime_error(msg.str());
  }
}

std::vector<int> with_io(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

void SacConfig::validate() const {
  if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("sac: gamma must be in [0,1]");
  if (!(tau > 0 && tau <= 1)) throw std::invalid_argument("sac: tau must be in (0,1]");
  if (!(alpha >= 0)) throw std::invalid_argument("sac: alpha must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("sac: batch_size must be >= 1");
  if (warmup < 0) throw std::invalid_argument("sac: warmup must be >= 0");
  if (capacity < static_cast<std::size_t>(batch_size)) throw std::invalid_argument("sac: capacity below batch_size");
  if (!(delta_scale > 0)) throw std::invalid_argument("sac: delta_scale must be > 0");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("sac: hidden sizes must be >= 1");
}

Json sac_config_to_json(const SacConfig& c) {
  return Json{{"hidden", c.hidden},       {"lr_actor", c.lr_actor},
              {"lr_critic", c.lr_critic}, {"lr_alpha", c.lr_alpha},
              {"gamma", c.gamma},         {"tau", c.tau},
              {"alpha", c.alpha},         {"auto_alpha", c.auto_alpha},
              {"target_entropy", c.target_entropy}, {"batch_size", c.batch_size},
              {"warmup", c.warmup},       {"capacity", c.capacity},
              {"delta_scale", c.delta_scale}};
}

SacConfig sac_config_from_json(const Json& doc, SacConfig c) {
  auto take = [&](const char* key, auto& out) {
    if (doc.contains(key)) out = doc.at(key).get<std::decay_t<decltype(out)>>();
  };
  take("hidden", c.hidden);
  take("lr_actor", c.lr_actor);
  take("lr_critic", c.lr_critic);
  take("lr_alpha", c.lr_alpha);
  take("gamma", c.gamma);
  take("tau", c.tau);
  take("alpha", c.alpha);
  take("auto_alpha", c.auto_alpha);
  take("target_entropy", c.target_entropy);
  take("batch_size", c.batch_size);
  take("warmup", c.warmup);
  take("capacity", c.capacity);
  take("delta_scale", c.delta_scale);
  return c;
}

SacAgent SacAgent::create(int state_dim, const SacConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (state_dim < 1) throw std::invalid_argument("sac: state_dim must be >= 1");
  Rng rng(seed);
  SacAgent a;
  a.state_dim = state_dim;
  a.config = cfg;
  a.policy = Mlp<double>::xavier(with_io(state_dim, cfg.hidden, 2), Activation::Tanh, rng);
  a.q1 = Mlp<double>::xavier(with_io(state_dim + 1, cfg.hidden, 1), Activation::Tanh, rng);
  a.q2 = Mlp<double>::xavier(with_io(state_dim + 1, cfg.hidden, 1), Activation::Tanh, rng);
  a.q1_target = a.q1;
  a.q2_target = a.q2;
  a.log_alpha = std::log(std::max(cfg.alpha, 1e-300));
  a.opt_policy = AdamState<double>::for_params(a.policy.params(), AdamConfig{.lr = cfg.lr_actor});
  a.opt_q1 = AdamState<double>::for_params(a.q1.params(), AdamConfig{.lr = cfg.lr_critic});
  a.opt_q2 = AdamState<double>::for_params(a.q2.params(), AdamConfig{.lr = cfg.lr_critic});
  return a;
}

double policy_action(const Mlp<double>& policy, const VectorXd& state) {
  if (state.size() != policy.input_size())
    throw std::invalid_argument("select_action: state has size " + std::to_string(state.size()) + ", policy expects " +
                                std::to_string(policy.input_size()));
  return kPi * std::tanh(forward(policy, state)(0));
}

double select_action(const SacAgent& agent, const VectorXd& state, bool deterministic, Rng& rng) {
  if (deterministic) return policy_action(agent.policy, state);
  if (state.size() != agent.state_dim)
    throw std::invalid_argument("select_action: state has size " + std::to_string(state.size()) + ", expected " +
                                std::to_string(agent.state_dim));
  const auto ps = sample_policy(agent.policy, state, rng, nullptr);
  return kPi * ps.t(0);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (!t.state.allFinite() || !t.next_state.allFinite() || !std::isfinite(t.action) || !std::isfinite(t.reward))
    throw std::invalid_argument("ReplayBuffer: non-finite transition");
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (data_.size() < n || n == 0) throw std::logic_error("ReplayBuffer: not enough transitions to sample");
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

SacBatch SacBatch::gather(const ReplayBuffer& buf, const std::vector<std::size_t>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto d = buf.at(idx.at(0)).state.size();
  SacBatch b;
  b.state.resize(d, n);
  b.next_state.resize(d, n);
  b.action.resize(n);
  b.reward.resize(n);
  b.done.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& t = buf.at(idx[static_cast<std::size_t>(k)]);
    b.state.col(k) = t.state;
    b.next_state.col(k) = t.next_state;
    b.action(k) = t.action;
    b.reward(k) = t.reward;
    b.done(k) = t.done ? 1.0 : 0.0;
  }
  return b;
}

void soft_update(Mlp<double>& target, const Mlp<double>& online, double tau) {
  auto& tp = target.params();
  const auto& op = online.params();
  for (std::size_t l = 0; l < tp.weights.size(); ++l) {
    tp.weights[l] = tau * op.weights[l] + (1.0 - tau) * tp.weights[l];
    tp.biases[l] = tau * op.biases[l] + (1.0 - tau) * tp.biases[l];
  }
}

double actor_objective(const SacAgent& agent, const MatrixXd& states, Rng& rng, ParamSet<double>* grad,
                       Eigen::ArrayXd* logp_out) {
  const int n = static_cast<int>(states.cols());
  const double alpha = agent.alpha();
  Trace<double> tp;
  const auto cur = sample_policy(agent.policy, states, rng, grad ? &tp : nullptr);
  const MatrixXd in = critic_input(states, cur.t);
  Trace<double> t1, t2;
  const Eigen::ArrayXd q1 = forward_batch(agent.q1, in, &t1).row(0).transpose().array();
  const Eigen::ArrayXd q2 = forward_batch(agent.q2, in, &t2).row(0).transpose().array();
  if (logp_out) *logp_out = cur.logp;
  const double loss = (alpha * cur.logp - q1.min(q2)).mean();
  if (!grad) return loss;

  const MatrixXd ones = MatrixXd::Ones(1, n);
  const Eigen::ArrayXd dq1 = backward(agent.q1, t1, ones).input_grad.row(agent.state_dim).transpose().array();
  const Eigen::ArrayXd dq2 = backward(agent.q2, t2, ones).input_grad.row(agent.state_dim).transpose().array();
  const Eigen::ArrayXd dq = (q1 <= q2).select(dq1, dq2);
  // d/du of alpha * log pi - Q(tanh u), with u = mu + sigma * eps.
  const Eigen::ArrayXd sech2 = 1.0 - cur.t.square();
  const Eigen::ArrayXd g_u = alpha * 2.0 * cur.t * kPi * sech2 / (kPi * sech2 + kSquashEps) - dq * sech2;
  MatrixXd g(2, n);
  g.row(0) = (g_u / n).transpose().matrix();
  g.row(1) = ((g_u * cur.sigma * cur.eps - alpha) / n).transpose().matrix();
  for (int b = 0; b < n; ++b)
    if (cur.clamped(b)) g(1, b) = 0.0;
  *grad = backward(agent.policy, tp, g).grads;
  return loss;
}

SacLosses sac_update(SacAgent& agent, const SacBatch& batch, Rng& rng) {
  const int n = batch.size();
  if (n < 1) throw std::invalid_argument("sac_update: empty batch");
  if (batch.state.rows() != agent.state_dim || batch.next_state.rows() != agent.state_dim)
    throw std::invalid_argument("sac_update: state dimension mismatch");
  const auto& cfg = agent.config;
  const double alpha = agent.alpha();
  const std::int64_t step = agent.opt_q1.step;
  SacLosses out;

  // Soft Bellman targets from the target critics and a fresh next action.
  {
    const auto next = sample_policy(agent.policy, batch.next_state, rng, nullptr);
    const MatrixXd in = critic_input(batch.next_state, next.t);
    const Eigen::ArrayXd q1 = forward_batch(agent.q1_target, in).row(0).transpose().array();
    const Eigen::ArrayXd q2 = forward_batch(agent.q2_target, in).row(0).transpose().array();
    const Eigen::ArrayXd soft = q1.min(q2) - alpha * next.logp;
    out.targets = (batch.reward.array() + cfg.gamma * (1.0 - batch.done.array()) * soft).matrix();
  }

  const MatrixXd taken = critic_input(batch.state, batch.action.array() / kPi);
  auto fit_critic = [&](Mlp<double>& q, AdamState<double>& opt, const char* name) {
    Trace<double> tr;
    const Eigen::RowVectorXd diff = forward_batch(q, taken, &tr).row(0) - out.targets.transpose();
    const double loss = diff.squaredNorm() / n;
    require_finite(loss, "critic", step);
    auto bp = backward(q, tr, MatrixXd((2.0 / n) * diff));
    adam_step(q.params(), bp.grads, opt, name);
    return loss;
  };
  out.critic = 0.5 * (fit_critic(agent.q1, agent.opt_q1, "q1") + fit_critic(agent.q2, agent.opt_q2, "q2"));

  ParamSet<double> pg;
  Eigen::ArrayXd logp;
  out.actor = actor_objective(agent, batch.state, rng, &pg, &logp);
  out.entropy = -logp.mean();
  require_finite(out.actor, "actor", step);
  adam_step(agent.policy.params(), pg, agent.opt_policy, "policy");

  if (cfg.auto_alpha) {
    const double grad = -(logp + cfg.target_entropy).mean();
    out.alpha = -agent.log_alpha * (logp + cfg.target_entropy).mean();
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++agent.alpha_steps;
    agent.alpha_m = b1 * agent.alpha_m + (1 - b1) * grad;
    agent.alpha_v = b2 * agent.alpha_v + (1 - b2) * grad * grad;
    const double mh = agent.alpha_m / (1 - std::pow(b1, agent.alpha_steps));
    const double vh = agent.alpha_v / (1 - std::pow(b2, agent.alpha_steps));
    agent.log_alpha -= cfg.lr_alpha * mh / (std::sqrt(vh) + eps);
  }

  soft_update(agent.q1_target, agent.q1, cfg.tau);
  soft_update(agent.q2_target, agent.q2, cfg.tau);
  return out;
}

int state_dim_for(const PirModel* encoder) { return (encoder ? encoder->d_z : 0) + 2; }

VectorXd make_state(const PirModel* encoder, const Observation& obs, const std::array<double, 2>& delta,
                    double delta_scale) {
  const int dz = encoder ? encoder->d_z : 0;
  VectorXd s(dz + 2);
  if (encoder) s.head(dz) = encode(*encoder, obs);
  s(dz) = delta[0] * delta_scale;
  s(dz + 1) = delta[1] * delta_scale;
  return s;
}

std::vector<int> checkpoint_episodes(int episodes, int count) {
  if (count < 1 || episodes < count)
    throw std::invalid_argument("checkpoints: need at least " + std::to_string(count) + " episodes, got " +
                                std::to_string(episodes));
  std::vector<int> at;
  for (int k = 0; k < count; ++k)
    at.push_back(static_cast<int>((static_cast<std::int64_t>(k + 1) * episodes) / count) - 1);
  return at;
}

RlTrainResult train_rl(const EnvConfig& env_cfg, const PirModel* encoder, SacAgent agent, const RlTrainConfig& cfg) {
  if (agent.state_dim != state_dim_for(encoder))
    throw std::invalid_argument("train_rl: agent state_dim does not match the encoder");
  const auto ck_at = checkpoint_episodes(cfg.episodes, cfg.checkpoints);
  EnvConfig ec = env_cfg;
  ec.sensors = encoder != nullptr;
  NavEnv env(ec);
  const std::uint64_t enc_hash =
      encoder ? param_hash(encoder->point_net.params()) ^ param_hash(encoder->head_net.params()) : 0;

  Rng rng(derive_seed(cfg.seed, 0xAC7));
  ReplayBuffer buffer(agent.config.capacity);
  const double scale = agent.config.delta_scale;
  const std::size_t ready = static_cast<std::size_t>(std::max(agent.config.warmup, agent.config.batch_size));
  std::uniform_real_distribution<double> random_heading(-kPi, kPi);

  RlTrainResult result;
  std::size_t next_ck = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    StepResult res = env.reset(derive_seed(cfg.seed, static_cast<std::uint64_t>(ep)));
    VectorXd s = make_state(encoder, res.sensor_obs, res.delta, scale);
    RlHistoryRow row{ep, 0.0, false, 0};
    while (!res.done) {
      const double a =
          buffer.size() < static_cast<std::size_t>(agent.config.warmup) ? random_heading(rng) : select_action(agent, s, false, rng);
      res = env.step(a);
      VectorXd s2 = make_state(encoder, res.sensor_obs, res.delta, scale);
      const bool terminal = res.outcome == Outcome::Success || res.outcome == Outcome::OutOfBounds;
      buffer.push({s, a, res.reward, s2, terminal});
      if (buffer.size() >= ready)
        sac_update(agent, SacBatch::gather(buffer, buffer.sample_indices(agent.config.batch_size, rng)), rng);
      row.ret += res.reward;
      ++row.steps;
      s = std::move(s2);
    }
    row.success = res.outcome == Outcome::Success;
    result.history.push_back(row);
    while (next_ck < ck_at.size() && ck_at[next_ck] == ep) {
      result.checkpoints.push_back({ep, agent.policy, scale});
      ++next_ck;
    }
  }
  if (encoder && (param_hash(encoder->point_net.params()) ^ param_hash(encoder->head_net.params())) != enc_hash)
    throw std::logic_error("train_rl: encoder parameters changed");
  result.agent = std::move(agent);
  return result;
}

Json eval_report_to_json(const EvalReport& r) {
  return Json{{"mean_return", r.mean_return}, {"success_rate", r.success_rate}, {"n_episodes", r.n_episodes},
              {"seed", r.seed}};
}

EvalReport evaluate_policy(const EnvConfig& env_cfg, const PirModel* encoder, const Policy& policy, int n_episodes,
                           std::uint64_t seed, double delta_scale) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate_policy: n_episodes must be >= 1");
  EnvConfig ec = env_cfg;
  ec.sensors = encoder != nullptr;
  NavEnv env(ec);
  EvalReport rep;
  rep.n_episodes = n_episodes;
  rep.seed = seed;
  int successes = 0;
  double total = 0;
  for (int k = 0; k < n_episodes; ++k) {
    StepResult res = env.reset(derive_seed(seed ^ 0xE7A1E7A1ULL, static_cast<std::uint64_t>(k)));
    while (!res.done) {
      const double a = policy(make_state(encoder, res.sensor_obs, res.delta, delta_scale), res.delta);
      res = env.step(std::clamp(a, -kPi, kPi));
      total += res.reward;
    }
    successes += res.outcome == Outcome::Success ? 1 : 0;
  }
  rep.mean_return = total / n_episodes;
  rep.success_rate = static_cast<double>(successes) / n_episodes;
  return rep;
}

Policy deterministic_policy(const Mlp<double>& policy) {
  return [policy](const VectorXd& s, const std::array<double, 2>&) { return policy_action(policy, s); };
}

Policy aim_at_target_policy() {
  return [](const VectorXd&, const std::array<double, 2>& d) { return std::atan2(d[1], d[0]); };
}

Json sac_agent_to_json(const SacAgent& a) {
  return Json{{"format", "pir-ckpt"},
              {"version", 1},
              {"role", "sac-agent"},
              {"state_dim", a.state_dim},
              {"config", sac_config_to_json(a.config)},
              {"log_alpha", a.log_alpha},
              {"nets",
               {{"policy", mlp_to_json(a.policy)},
                {"q1", mlp_to_json(a.q1)},
                {"q2", mlp_to_json(a.q2)},
                {"q1_target", mlp_to_json(a.q1_target)},
                {"q2_target", mlp_to_json(a.q2_target)}}}};
}

SacAgent sac_agent_from_json(const Json& doc) {
  if (doc.value("format", "") != "pir-ckpt" || doc.value("role", "") != "sac-agent")
    throw std::runtime_error("not a SAC agent checkpoint");
  SacAgent a = SacAgent::create(doc.at("state_dim").get<int>(), sac_config_from_json(doc.at("config")), 0);
  const auto& nets = doc.at("nets");
  a.policy = mlp_from_json(nets.at("policy"));
  a.q1 = mlp_from_json(nets.at("q1"));
  a.q2 = mlp_from_json(nets.at("q2"));
  a.q1_target = mlp_from_json(nets.at("q1_target"));
  a.q2_target = mlp_from_json(nets.at("q2_target"));
  a.log_alpha = doc.at("log_alpha").get<double>();
  if (a.policy.input_size() != a.state_dim || a.policy.output_size() != 2)
    throw std::runtime_error("SAC agent checkpoint: policy shape does not match state_dim");
  return a;
}

Json policy_checkpoint_to_json(const PolicyCheckpoint& ck) {
  return Json{{"format", "pir-ckpt"},
              {"version", 1},
              {"role", "sac-policy"},
              {"episode", ck.episode},
              {"state_dim", ck.policy.input_size()},
              {"delta_scale", ck.delta_scale},
              {"policy", mlp_to_json(ck.policy)}};
}

PolicyCheckpoint policy_checkpoint_from_json(const Json& doc) {
  if (doc.value("format", "") != "pir-ckpt" || doc.value("role", "") != "sac-policy")
    throw std::runtime_error("not a policy checkpoint");
  PolicyCheckpoint ck;
  ck.episode = doc.at("episode").get<int>();
  ck.policy = mlp_from_json(doc.at("policy"));
  ck.delta_scale = doc.at("delta_scale").get<double>();
  if (ck.policy.input_size() != doc.at("state_dim").get<int>())
    throw std::runtime_error("policy checkpoint: state_dim mismatch");
  return ck;
}

}  // namespace pir
