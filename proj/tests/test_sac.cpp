#include "pir/sac.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace pir;

namespace {

constexpr double kPi = std::numbers::pi;

SacConfig small_cfg() {
  SacConfig c;
  c.hidden = {16, 16};
  c.batch_size = 32;
  c.warmup = 64;
  c.capacity = 5000;
  return c;
}

SacBatch synthetic_batch(int d, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> a(-kPi, kPi);
  SacBatch b;
  b.state = MatrixXd::NullaryExpr(d, n, [&] { return g(rng); });
  b.next_state = MatrixXd::NullaryExpr(d, n, [&] { return g(rng); });
  b.action = VectorXd::NullaryExpr(n, [&] { return a(rng); });
  b.reward = VectorXd::NullaryExpr(n, [&] { return g(rng); });
  b.done = VectorXd::NullaryExpr(n, [&] { return g(rng) > 1.0 ? 1.0 : 0.0; });
  return b;
}

EnvConfig zero_flow_env() {
  EnvConfig cfg;
  cfg.grid = std::make_shared<FlowGrid>(gen_uniform_flow(0.0, 0.0, 0, 10, -4, 4));
  cfg.max_steps = 40;
  return cfg;
}

}  // namespace

TEST_CASE("select_action: bounded, closed form for a zero-weight policy, deterministic per seed") {
  auto agent = SacAgent::create(4, small_cfg(), 1);
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const VectorXd s = VectorXd::NullaryExpr(4, [&] { return g(rng); });
    CHECK(std::abs(select_action(agent, s, false, rng)) <= kPi);
    CHECK(std::abs(select_action(agent, s, true, rng)) <= kPi);
  }

  for (auto& w : agent.policy.params().weights) w.setZero();
  for (auto& b : agent.policy.params().biases) b.setZero();
  agent.policy.params().biases.back() << 0.3, -1.0;
  CHECK(select_action(agent, VectorXd::Ones(4), true, rng) == doctest::Approx(kPi * std::tanh(0.3)));

  Rng r1(9), r2(9);
  const VectorXd s = VectorXd::LinSpaced(4, -1, 1);
  CHECK(select_action(agent, s, false, r1) == select_action(agent, s, false, r2));
  CHECK_THROWS_AS(select_action(agent, VectorXd::Ones(3), true, rng), std::invalid_argument);
}

TEST_CASE("sac_update: gamma 0 makes the critic target the reward") {
  auto cfg = small_cfg();
  cfg.gamma = 0.0;
  auto agent = SacAgent::create(3, cfg, 4);
  Rng rng(1);
  const auto b = synthetic_batch(3, 32, 5);
  const auto l = sac_update(agent, b, rng);
  for (int i = 0; i < b.size(); ++i) CHECK(l.targets(i) == b.reward(i));
}

TEST_CASE("sac_update: tau 1 copies the critics; general tau follows the blend") {
  auto cfg = small_cfg();
  cfg.tau = 1.0;
  auto agent = SacAgent::create(3, cfg, 4);
  Rng rng(1);
  sac_update(agent, synthetic_batch(3, 32, 5), rng);
  CHECK(agent.q1_target.params() == agent.q1.params());
  CHECK(agent.q2_target.params() == agent.q2.params());

  cfg.tau = 0.3;
  auto b = SacAgent::create(3, cfg, 7);
  sac_update(b, synthetic_batch(3, 32, 6), rng);  // targets now differ from the online critics
  const auto old_target = b.q1_target.params();
  sac_update(b, synthetic_batch(3, 32, 8), rng);
  const auto& online = b.q1.params();
  const auto& fresh = b.q1_target.params();
  for (std::size_t i = 0; i < online.size(); ++i)
    CHECK(std::abs(fresh.at(i) - (0.3 * online.at(i) + 0.7 * old_target.at(i))) <= 1e-15);
}

TEST_CASE("actor_objective: policy gradient matches finite differences") {
  auto cfg = small_cfg();
  cfg.alpha = 0.3;
  auto agent = SacAgent::create(3, cfg, 11);
  const auto b = synthetic_batch(3, 16, 12);
  ParamSet<double> grad;
  Rng rng(5);
  actor_objective(agent, b.state, rng, &grad);
  auto& p = agent.policy.params();
  for (std::size_t i = 0; i < p.size(); i += 7) {
    const double h = 1e-6, orig = p.at(i);
    p.at(i) = orig + h;
    Rng ra(5);
    const double lp = actor_objective(agent, b.state, ra);
    p.at(i) = orig - h;
    Rng rb(5);
    const double lm = actor_objective(agent, b.state, rb);
    p.at(i) = orig;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(grad.at(i) - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("sac_update: critic loss decreases when overfitting one batch") {
  auto agent = SacAgent::create(4, small_cfg(), 3);
  const auto b = synthetic_batch(4, 64, 4);
  Rng rng(6);
  std::vector<double> loss;
  for (int k = 0; k < 200; ++k) loss.push_back(sac_update(agent, b, rng).critic);
  // Means over consecutive windows of 20 updates.
  double prev = 1e300;
  for (int w = 0; w < 10; ++w) {
    double m = 0;
    for (int k = 0; k < 20; ++k) m += loss[static_cast<std::size_t>(w * 20 + k)];
    m /= 20;
    CHECK(m < prev);
    prev = m;
  }
}

TEST_CASE("replay buffer: ring capacity and uniform sampling") {
  ReplayBuffer buf(100);
  for (int i = 0; i < 250; ++i) {
    buf.push({VectorXd::Constant(1, i), 0.0, static_cast<double>(i), VectorXd::Zero(1), false});
    CHECK(buf.size() <= 100);
  }
  // The oldest entries were overwritten.
  double min_reward = 1e9;
  for (std::size_t i = 0; i < buf.size(); ++i) min_reward = std::min(min_reward, buf.at(i).reward);
  CHECK(min_reward == 150.0);

  Rng rng(3);
  std::vector<int> counts(100, 0);
  const int draws = 100000;
  for (int k = 0; k < draws / 100; ++k)
    for (auto i : buf.sample_indices(100, rng)) ++counts[i];
  double chi2 = 0;
  const double expect = draws / 100.0;
  for (int c : counts) {
    CHECK(c > 0);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  // Upper 0.001 quantile of chi-square with 99 degrees of freedom.
  CHECK(chi2 < 148.23);
  CHECK_THROWS(ReplayBuffer(5).sample_indices(1, rng));
}

TEST_CASE("checkpoint schedule: exactly the requested count, evenly spaced") {
  for (int m : {100, 150, 1000, 2345}) {
    const auto at = checkpoint_episodes(m, 100);
    CHECK(at.size() == 100);
    CHECK(at.back() == m - 1);
    for (std::size_t k = 1; k < at.size(); ++k) CHECK(at[k] > at[k - 1]);
  }
  CHECK_THROWS(checkpoint_episodes(99, 100));
}

TEST_CASE("evaluate_policy: scripted oracles") {
  auto cfg = zero_flow_env();
  const auto aim = evaluate_policy(cfg, nullptr, aim_at_target_policy(), 50, 1, 0.25);
  CHECK(aim.success_rate == 1.0);
  CHECK(aim.n_episodes == 50);

  auto uni = zero_flow_env();
  uni.grid = std::make_shared<FlowGrid>(gen_uniform_flow(1.0, 0.0, 0, 10, -4, 4));
  uni.start_region = {6, 7, -1, 1};
  uni.target_region = {2, 3, -1, 1};
  const auto upstream =
      evaluate_policy(uni, nullptr, [](const VectorXd&, const std::array<double, 2>&) { return kPi; }, 20, 1, 0.25);
  CHECK(upstream.success_rate == 0.0);
  CHECK(upstream.mean_return < 0);
}

TEST_CASE("train_rl: deterministic, 100 checkpoints, encoder untouched") {
  auto env = zero_flow_env();
  env.max_steps = 10;
  env.obs_history = 2;
  env.scenario.sensor_count = 4;
  PirArch arch;
  arch.d_z = 3;
  arch.point_hidden = {8};
  arch.feature_width = 8;
  arch.decoder_hidden = {8};
  const auto enc = PirModel::create(arch, {1, 9, -3, 3, 1.0}, 2);
  const auto point_before = enc.point_net.params();
  const auto head_before = enc.head_net.params();

  auto cfg = small_cfg();
  const RlTrainConfig tc{.episodes = 120, .checkpoints = 100, .seed = 4};
  const auto a = train_rl(env, &enc, SacAgent::create(state_dim_for(&enc), cfg, 1), tc);
  const auto b = train_rl(env, &enc, SacAgent::create(state_dim_for(&enc), cfg, 1), tc);
  CHECK(enc.point_net.params() == point_before);
  CHECK(enc.head_net.params() == head_before);
  CHECK(a.checkpoints.size() == 100);
  CHECK(a.checkpoints.back().episode == 119);
  REQUIRE(a.history.size() == 120);
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].ret == b.history[i].ret);
  CHECK(a.agent.policy.params() == b.agent.policy.params());
  CHECK_THROWS(train_rl(env, nullptr, SacAgent::create(state_dim_for(&enc), cfg, 1), tc));
}

TEST_CASE("agent and policy checkpoints round trip") {
  auto agent = SacAgent::create(5, small_cfg(), 3);
  agent.log_alpha = -1.25;
  const auto back = sac_agent_from_json(Json::parse(sac_agent_to_json(agent).dump()));
  CHECK(back.policy.params() == agent.policy.params());
  CHECK(back.q2_target.params() == agent.q2_target.params());
  CHECK(back.log_alpha == -1.25);
  CHECK(back.config.batch_size == 32);

  const PolicyCheckpoint ck{17, agent.policy, 0.5};
  const auto ck2 = policy_checkpoint_from_json(Json::parse(policy_checkpoint_to_json(ck).dump()));
  CHECK(ck2.episode == 17);
  CHECK(ck2.delta_scale == 0.5);
  CHECK(ck2.policy.params() == agent.policy.params());
  CHECK_THROWS(policy_checkpoint_from_json(sac_agent_to_json(agent)));
}
