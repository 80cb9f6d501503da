#include "pir/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pir {

namespace {

Json rect_to_json(const Rect& r) { return Json::array({r.x_min, r.x_max, r.y_min, r.y_max}); }

Rect rect_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("rectangle must be [x_min, x_max, y_min, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

template <class T>
void take(const Json& doc, const char* key, T& out) {
  if (doc.contains(key)) out = doc.at(key).get<T>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Outcome outcome_from_string(const std::string& s) {
  for (auto o : {Outcome::Running, Outcome::Success, Outcome::OutOfBounds, Outcome::Timeout})
    if (to_string(o) == s) return o;
  throw std::runtime_error("unknown outcome '" + s + "'");
}

}  // namespace

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Running:
      return "running";
    case Outcome::Success:
      return "success";
    case Outcome::OutOfBounds:
      return "out_of_bounds";
    case Outcome::Timeout:
      return "timeout";
  }
  return "?";
}

void EnvConfig::validate() const {
  if (!grid) throw std::invalid_argument("env: no flow grid");
  if (!grid->periodic_t) throw std::invalid_argument("env: flow grid must be time-periodic");
  if (!(swim_ratio > 0 && swim_ratio < 1)) throw std::invalid_argument("env: swim_ratio must be in (0,1)");
  if (!(u_inf > 0) || !(dt_control > 0)) throw std::invalid_argument("env: u_inf and dt_control must be > 0");
  if (!(target_tolerance > 0)) throw std::invalid_argument("env: target_tolerance must be > 0");
  if (max_steps < 1) throw std::invalid_argument("env: max_steps must be >= 1");
  if (obs_history < 1) throw std::invalid_argument("env: obs_history must be >= 1");
  if (!bounds.inside(Rect::of_grid(*grid))) throw std::invalid_argument("env: bounds exceed the flow grid");
  if (!start_region.inside(bounds)) throw std::invalid_argument("env: start_region outside bounds");
  if (!target_region.inside(bounds)) throw std::invalid_argument("env: target_region outside bounds");
  if (!(phase_period() > 0)) throw std::invalid_argument("env: phase period must be > 0");
  scenario.validate();
}

Json scenario_to_json(const ScenarioSpec& s) {
  return Json{{"kind", std::string(to_string(s.kind))},
              {"sensor_count", s.sensor_count},
              {"lattice", {s.lattice_nx, s.lattice_ny}},
              {"fault_prob", s.fault_prob},
              {"surround_count", s.surround_count},
              {"surround_radius", s.surround_radius},
              {"drop_prob", s.drop_prob}};
}

ScenarioSpec scenario_from_json(const Json& doc, ScenarioSpec s) {
  if (doc.contains("kind")) s.kind = scenario_from_string(doc.at("kind").get<std::string>());
  take(doc, "sensor_count", s.sensor_count);
  if (doc.contains("lattice")) {
    s.lattice_nx = doc.at("lattice").at(0).get<int>();
    s.lattice_ny = doc.at("lattice").at(1).get<int>();
  }
  take(doc, "fault_prob", s.fault_prob);
  take(doc, "surround_count", s.surround_count);
  take(doc, "surround_radius", s.surround_radius);
  take(doc, "drop_prob", s.drop_prob);
  return s;
}

Json env_config_to_json(const EnvConfig& c) {
  return Json{{"bounds", rect_to_json(c.bounds)},
              {"swim_ratio", c.swim_ratio},
              {"u_inf", c.u_inf},
              {"dt_control", c.dt_control},
              {"omega", c.omega},
              {"max_steps", c.max_steps},
              {"target_tolerance", c.target_tolerance},
              {"start_region", rect_to_json(c.start_region)},
              {"target_region", rect_to_json(c.target_region)},
              {"r_success", c.r_success},
              {"r_fail", c.r_fail},
              {"reward_literal_paper", c.reward_literal_paper},
              {"scenario", scenario_to_json(c.scenario)},
              {"obs_history", c.obs_history},
              {"sensors", c.sensors},
              {"shed_period", c.shed_period},
              {"seed", c.seed}};
}

EnvConfig env_config_from_json(const Json& doc, EnvConfig c) {
  if (doc.contains("bounds")) c.bounds = rect_from_json(doc.at("bounds"));
  take(doc, "swim_ratio", c.swim_ratio);
  take(doc, "u_inf", c.u_inf);
  take(doc, "dt_control", c.dt_control);
  take(doc, "omega", c.omega);
  take(doc, "max_steps", c.max_steps);
  take(doc, "target_tolerance", c.target_tolerance);
  if (doc.contains("start_region")) c.start_region = rect_from_json(doc.at("start_region"));
  if (doc.contains("target_region")) c.target_region = rect_from_json(doc.at("target_region"));
  take(doc, "r_success", c.r_success);
  take(doc, "r_fail", c.r_fail);
  take(doc, "reward_literal_paper", c.reward_literal_paper);
  if (doc.contains("scenario")) c.scenario = scenario_from_json(doc.at("scenario"), c.scenario);
  take(doc, "obs_history", c.obs_history);
  take(doc, "sensors", c.sensors);
  take(doc, "shed_period", c.shed_period);
  take(doc, "seed", c.seed);
  return c;
}

std::array<double, 2> robot_velocity(const EnvConfig& cfg, double t, double x, double y, double heading) {
  const auto f = sample(*cfg.grid, t, x, y);
  const double s = cfg.swim_ratio * cfg.u_inf;
  // Outside the grid the robot only swims; the caller flags leaving the bounds.
  const double fu = f.valid ? f.u : 0.0, fv = f.valid ? f.v : 0.0;
  return {fu + s * std::cos(heading), fv + s * std::sin(heading)};
}

NavEnv::NavEnv(EnvConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      build_rng_(derive_seed(cfg_.seed, 0xB111D)),
      rig_(cfg_.scenario, cfg_.bounds, build_rng_),
      episode_rng_(derive_seed(cfg_.seed, 0)) {}

StepResult NavEnv::reset(std::uint64_t episode_seed) {
  episode_rng_.seed(derive_seed(cfg_.seed ^ 0x5EED5EEDULL, episode_seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto in = [&](const Rect& r) -> std::array<double, 2> {
    const double a = u01(episode_rng_), b = u01(episode_rng_);
    return {r.x_min + a * r.width(), r.y_min + b * r.height()};
  };
  const auto start = in(cfg_.start_region);
  const auto target = in(cfg_.target_region);
  state_ = {};
  state_.x = start[0];
  state_.y = start[1];
  state_.target_x = target[0];
  state_.target_y = target[1];
  state_.t = cfg_.phase_period() * u01(episode_rng_);
  rig_.begin_episode(episode_rng_);
  started_ = true;

  log_ = {};
  log_.episode_seed = episode_seed;
  log_.rows.push_back({0, state_.t, state_.x, state_.y, state_.target_x, state_.target_y, 0.0, 0.0, Outcome::Running});
  return result(0.0);
}

StepResult NavEnv::step(double heading) {
  if (!started_) throw std::logic_error("env: step before reset");
  if (state_.terminal()) throw std::logic_error("env: step on a terminal state");
  if (!std::isfinite(heading)) throw std::invalid_argument("env: non-finite heading");

  // Midpoint rule: sample the flow at the start and at the half step.
  const double h = cfg_.dt_control;
  const auto k1 = robot_velocity(cfg_, state_.t, state_.x, state_.y, heading);
  const auto k2 =
      robot_velocity(cfg_, state_.t + 0.5 * h, state_.x + 0.5 * h * k1[0], state_.y + 0.5 * h * k1[1], heading);
  state_.x += h * k2[0];
  state_.y += h * k2[1];
  state_.t += h;
  ++state_.step;

  const double dx = state_.target_x - state_.x, dy = state_.target_y - state_.y;
  const double dist = std::hypot(dx, dy);
  double reward = (cfg_.reward_literal_paper ? -std::abs(dx + dy) : -dist) - cfg_.omega;
  if (!cfg_.bounds.contains(state_.x, state_.y)) {
    reward += cfg_.r_fail;
    state_.outcome = Outcome::OutOfBounds;
  } else if (dist <= cfg_.target_tolerance) {
    reward += cfg_.r_success;
    state_.outcome = Outcome::Success;
  } else if (state_.step >= cfg_.max_steps) {
    state_.outcome = Outcome::Timeout;
  }
  log_.rows.push_back(
      {state_.step, state_.t, state_.x, state_.y, state_.target_x, state_.target_y, heading, reward, state_.outcome});
  return result(reward);
}

StepResult NavEnv::result(double reward) {
  StepResult r;
  r.delta = {state_.target_x - state_.x, state_.target_y - state_.y};
  r.reward = reward;
  r.outcome = state_.outcome;
  r.done = state_.terminal();
  // Terminal states still get readings; out-of-bounds points are simply skipped.
  if (cfg_.sensors) r.sensor_obs = observe();
  return r;
}

Observation NavEnv::observe() {
  const double dt = cfg_.grid->dt;
  std::vector<double> times;
  for (int k = cfg_.obs_history - 1; k >= 0; --k) times.push_back(state_.t - k * dt);
  auto obs = rig_.observe(*cfg_.grid, times.front(), times, state_.x, state_.y, episode_rng_);
  if (obs.empty()) {
    // Every reading fell outside the grid; fall back to the nearest valid sensor location.
    const double x = std::clamp(state_.x, cfg_.bounds.x_min, cfg_.bounds.x_max);
    const double y = std::clamp(state_.y, cfg_.bounds.y_min, cfg_.bounds.y_max);
    const auto s = sample(*cfg_.grid, state_.t, x, y);
    ObsPoint p;
    p.t = state_.t;
    p.x = x;
    p.y = y;
    p.mask = draw_mask(cfg_.scenario.drop_prob, episode_rng_);
    const std::array<double, 3> v{s.u, s.v, s.p};
    for (int m = 0; m < kNumModalities; ++m) p.value[m] = p.mask[m] ? v[m] : 0.0;
    obs.points.push_back(p);
  }
  return obs;
}

void EpisodeLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,t,x,y,target_x,target_y,heading,reward,outcome\n";
  for (const auto& r : rows)
    out << r.step << ',' << fmt(r.t) << ',' << fmt(r.x) << ',' << fmt(r.y) << ',' << fmt(r.target_x) << ','
        << fmt(r.target_y) << ',' << fmt(r.heading) << ',' << fmt(r.reward) << ',' << to_string(r.outcome) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EpisodeLog EpisodeLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("step,t,x,y", 0) != 0) throw std::runtime_error(path.string() + ": not an episode log");
  EpisodeLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    EpisodeRow r;
    r.step = std::stoi(cells[0]);
    r.t = std::stod(cells[1]);
    r.x = std::stod(cells[2]);
    r.y = std::stod(cells[3]);
    r.target_x = std::stod(cells[4]);
    r.target_y = std::stod(cells[5]);
    r.heading = std::stod(cells[6]);
    r.reward = std::stod(cells[7]);
    r.outcome = outcome_from_string(cells[8]);
    log.rows.push_back(r);
  }
  if (log.rows.empty()) throw std::runtime_error(path.string() + ": empty episode log");
  return log;
}

void write_episode(const EpisodeLog& log, const EnvConfig& cfg, const std::filesystem::path& csv_path) {
  log.write_csv(csv_path);
  auto sidecar = csv_path;
  sidecar.replace_extension(".json");
  write_json_file(sidecar, Json{{"env", env_config_to_json(cfg)}, {"episode_seed", log.episode_seed}});
}

}  // namespace pir
