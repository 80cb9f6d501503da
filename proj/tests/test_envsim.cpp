#include "pir/envsim.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace pir;

namespace {

constexpr double kPi = std::numbers::pi;

EnvConfig uniform_env(double u, double v = 0.0) {
  EnvConfig cfg;
  cfg.grid = std::make_shared<FlowGrid>(gen_uniform_flow(u, v, 0, 10, -4, 4));
  return cfg;
}

}  // namespace

TEST_CASE("robot velocity: swim vector added to the flow") {
  const auto cfg = uniform_env(1.0);
  const auto back = robot_velocity(cfg, 0, 4, 0, kPi);
  CHECK(back[0] == doctest::Approx(0.2));
  CHECK(std::abs(back[1]) < 1e-15);
  const auto up = robot_velocity(cfg, 0, 4, 0, kPi / 2);
  CHECK(up[0] == doctest::Approx(1.0));
  CHECK(up[1] == doctest::Approx(0.8));
}

TEST_CASE("step: zero flow moves swim_ratio * u_inf * dt along the heading") {
  auto cfg = uniform_env(0.0);
  cfg.sensors = false;
  NavEnv env(cfg);
  env.reset(3);
  const double x0 = env.state().x, y0 = env.state().y, h = 0.7;
  env.step(h);
  CHECK(std::abs(env.state().x - (x0 + 0.8 * 0.25 * std::cos(h))) < 1e-12);
  CHECK(std::abs(env.state().y - (y0 + 0.8 * 0.25 * std::sin(h))) < 1e-12);
  CHECK(env.state().t == doctest::Approx(env.log().rows[0].t + 0.25));
}

TEST_CASE("step: heading upstream still drifts downstream") {
  auto cfg = uniform_env(1.0);
  cfg.sensors = false;
  NavEnv env(cfg);
  env.reset(0);
  for (int k = 0; k < 5 && !env.state().terminal(); ++k) {
    const double x = env.state().x;
    env.step(kPi);
    CHECK(env.state().x - x == doctest::Approx(0.2 * 0.25));
  }
}

TEST_CASE("step: Euclidean reward and the literal variant") {
  auto cfg = uniform_env(0.0);
  cfg.sensors = false;
  cfg.omega = 0.1;
  cfg.start_region = {2, 2, 0, 0};
  cfg.target_region = {5, 5, 4, 4};
  cfg.bounds = {0, 10, -4, 4};
  NavEnv env(cfg);
  env.reset(1);
  // Swim straight down for one step: robot at (2, -0.2), delta (3, 4.2).
  auto r = env.step(-kPi / 2);
  CHECK(r.delta[0] == doctest::Approx(3.0));
  CHECK(r.delta[1] == doctest::Approx(4.2));
  CHECK(r.reward == doctest::Approx(-std::hypot(3.0, 4.2) - 0.1));

  cfg.reward_literal_paper = true;
  NavEnv lit(cfg);
  lit.reset(1);
  CHECK(lit.step(-kPi / 2).reward == doctest::Approx(-7.2 - 0.1));

  // delta (3, 4) exactly: start at (2, -0.2) moving up by 0.2.
  cfg.reward_literal_paper = false;
  cfg.start_region = {2, 2, -0.2, -0.2};
  NavEnv e(cfg);
  e.reset(0);
  const auto s = e.step(kPi / 2);
  CHECK(s.delta[1] == doctest::Approx(4.0));
  CHECK(s.reward == doctest::Approx(-5.1));
  CHECK_FALSE(s.done);
}

TEST_CASE("step: success, out of bounds and timeout") {
  auto cfg = uniform_env(0.0);
  cfg.sensors = false;
  cfg.start_region = {5, 5, 0, 0};
  cfg.target_region = {5.4, 5.4, 0, 0};
  cfg.target_tolerance = 0.05;
  NavEnv env(cfg);
  env.reset(0);
  auto r = env.step(0.0);
  CHECK(r.outcome == Outcome::Running);
  r = env.step(0.0);
  CHECK(r.outcome == Outcome::Success);
  CHECK(r.done);
  CHECK(r.reward == doctest::Approx(-0.1 + 100));
  CHECK_THROWS_AS(env.step(0.0), std::logic_error);

  cfg.start_region = {1.05, 1.05, 0, 0};
  NavEnv oob(cfg);
  oob.reset(0);
  r = oob.step(kPi);
  CHECK(r.outcome == Outcome::OutOfBounds);
  CHECK(r.reward < -100);

  cfg.start_region = {3, 3, 0, 0};
  cfg.max_steps = 3;
  NavEnv slow(cfg);
  slow.reset(0);
  slow.step(kPi / 2);
  slow.step(-kPi / 2);
  r = slow.step(kPi / 2);
  CHECK(r.outcome == Outcome::Timeout);
  CHECK(r.done);
}

TEST_CASE("reset: deterministic and inside the regions, phase uniform") {
  auto cfg = uniform_env(1.0);
  cfg.sensors = false;
  cfg.shed_period = 4.0;
  NavEnv env(cfg);
  env.reset(42);
  const auto a = env.state();
  env.reset(7);
  env.reset(42);
  CHECK(env.state().x == a.x);
  CHECK(env.state().target_y == a.target_y);
  CHECK(env.state().t == a.t);

  double phase_sum = 0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    env.reset(static_cast<std::uint64_t>(k));
    const auto& s = env.state();
    if (k < 1000) {
      CHECK(cfg.start_region.contains(s.x, s.y));
      CHECK(cfg.target_region.contains(s.target_x, s.target_y));
    }
    CHECK(s.t >= 0);
    CHECK(s.t < 4.0);
    phase_sum += s.t;
  }
  CHECK(std::abs(phase_sum / n - 2.0) < 0.02 * 2.0);
}

TEST_CASE("config: invalid settings are rejected") {
  auto cfg = uniform_env(1.0);
  cfg.swim_ratio = 1.0;
  CHECK_THROWS(NavEnv{cfg});
  cfg = uniform_env(1.0);
  cfg.target_region = {8, 12, 0, 1};
  CHECK_THROWS(NavEnv{cfg});
  cfg = uniform_env(1.0);
  cfg.grid = std::make_shared<FlowGrid>(gen_taylor_green(9, 9, 4, 0.01, 1.0));
  CHECK_THROWS(NavEnv{cfg});
}

TEST_CASE("observe: scenario contracts inside the environment") {
  auto cfg = uniform_env(1.0, 0.5);
  cfg.obs_history = 2;
  SUBCASE("irregular positions stay fixed across steps") {
    cfg.scenario.kind = ScenarioKind::IrregularFixed;
    NavEnv env(cfg);
    const auto a = env.reset(0).sensor_obs;
    const auto b = env.step(0.3).sensor_obs;
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      CHECK(a.points[i].x == b.points[i].x);
      CHECK(a.points[i].y == b.points[i].y);
    }
  }
  SUBCASE("regular lattice with no faults reads every sensor") {
    cfg.scenario.kind = ScenarioKind::RegularFaulty;
    cfg.scenario.fault_prob = 0.0;
    NavEnv env(cfg);
    CHECK(env.reset(0).sensor_obs.points.size() == 2 * 200);
    CHECK(env.step(0.0).sensor_obs.points.size() == 2 * 200);
  }
  SUBCASE("surrounding sensors stay near the robot") {
    cfg.scenario.kind = ScenarioKind::SurroundingRandom;
    cfg.obs_history = 1;
    NavEnv env(cfg);
    for (int e = 0; e < 200; ++e) {
      const auto obs = env.reset(static_cast<std::uint64_t>(e)).sensor_obs;
      for (const auto& p : obs.points) {
        CHECK(std::hypot(p.x - env.state().x, p.y - env.state().y) <= cfg.scenario.surround_radius + 1e-12);
        CHECK(p.any_observed());
      }
    }
  }
}

TEST_CASE("episode log: identical seeds and actions give identical logs, CSV round trip") {
  auto cfg = uniform_env(1.0, 0.1);
  cfg.scenario.kind = ScenarioKind::RegularFaulty;
  auto run = [&] {
    NavEnv env(cfg);
    env.reset(11);
    for (double h : {0.1, 1.2, -2.0, 3.0})
      if (!env.state().terminal()) env.step(h);
    return env.log();
  };
  const auto a = run(), b = run();
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].x == b.rows[i].x);
    CHECK(a.rows[i].reward == b.rows[i].reward);
  }
  const auto dir = std::filesystem::temp_directory_path() / "pir_env_test";
  std::filesystem::create_directories(dir);
  write_episode(a, cfg, dir / "ep.csv");
  CHECK(std::filesystem::exists(dir / "ep.json"));
  const auto back = EpisodeLog::read_csv(dir / "ep.csv");
  REQUIRE(back.rows.size() == a.rows.size());
  CHECK(back.rows.back().y == a.rows.back().y);
  CHECK(back.rows.back().outcome == a.rows.back().outcome);
}

TEST_CASE("config JSON round trip") {
  auto cfg = uniform_env(1.0);
  cfg.omega = 0.37;
  cfg.scenario.kind = ScenarioKind::SurroundingRandom;
  cfg.scenario.drop_prob = {0, 0.5, 1};
  const auto back = env_config_from_json(Json::parse(env_config_to_json(cfg).dump()));
  CHECK(back.omega == 0.37);
  CHECK(back.scenario.kind == ScenarioKind::SurroundingRandom);
  CHECK(back.scenario.drop_prob[1] == 0.5);
  CHECK(back.target_region.y_max == cfg.target_region.y_max);
}
