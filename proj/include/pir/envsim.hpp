#pragma once

// Vortex-street navigation: a particle robot that only chooses its heading,
// swims at a fixed fraction of the free-stream speed and is advected by the
// flow. Episodes start on one side of the wake with the target on the other.

#include "pir/checkpoint.hpp"
#include "pir/flowfield.hpp"
#include "pir/observation.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <string_view>
#include <vector>

namespace pir {

struct EnvConfig {
  std::shared_ptr<const FlowGrid> grid;  // must be time-periodic
  Rect bounds{1, 9, -3, 3};
  double swim_ratio = 0.8;
  double u_inf = 1.0;
  double dt_control = 0.25;
  double omega = 0.1;  // per-step time cost
  int max_steps = 100;
  double target_tolerance = 0.3;
  Rect start_region{1.5, 3.0, -2.5, -1.0};
  Rect target_region{5.0, 7.0, 1.0, 2.5};
  double r_success = 100;
  double r_fail = -100;
  // -|dx + dy| instead of the Euclidean distance.
  bool reward_literal_paper = false;
  ScenarioSpec scenario;
  int obs_history = 5;  // grid instants per observation, ending at the current time
  bool sensors = true;  // false leaves sensor_obs empty (agents that ignore it)
  double shed_period = 0;  // reset phase range; 0 uses the grid's time period
  std::uint64_t seed = 0;

  void validate() const;
  double phase_period() const { return shed_period > 0 ? shed_period : grid->time_period(); }
};

Json scenario_to_json(const ScenarioSpec& s);
ScenarioSpec scenario_from_json(const Json& doc, ScenarioSpec base = {});

Json env_config_to_json(const EnvConfig& cfg);
/// Fields missing from `doc` keep their values in `base`; the grid is not serialized.
EnvConfig env_config_from_json(const Json& doc, EnvConfig base = {});

enum class Outcome { Running, Success, OutOfBounds, Timeout };
std::string_view to_string(Outcome o);

struct EnvState {
  double x = 0, y = 0;
  double target_x = 0, target_y = 0;
  double t = 0;  // absolute flow time
  int step = 0;
  Outcome outcome = Outcome::Running;

  bool terminal() const { return outcome != Outcome::Running; }
};

struct StepResult {
  std::array<double, 2> delta{};  // target minus robot
  Observation sensor_obs;
  double reward = 0;
  bool done = false;
  Outcome outcome = Outcome::Running;
};

struct EpisodeRow {
  int step = 0;
  double t = 0, x = 0, y = 0, target_x = 0, target_y = 0;
  double heading = 0;
  double reward = 0;
  Outcome outcome = Outcome::Running;
};

struct EpisodeLog {
  std::vector<EpisodeRow> rows;  // row 0 is the reset state
  std::uint64_t episode_seed = 0;

  void write_csv(const std::filesystem::path& path) const;
  static EpisodeLog read_csv(const std::filesystem::path& path);
};

/// Flow velocity at (t, x, y) plus the commanded swim velocity.
std::array<double, 2> robot_velocity(const EnvConfig& cfg, double t, double x, double y, double heading);

class NavEnv {
 public:
  explicit NavEnv(EnvConfig cfg);

  StepResult reset(std::uint64_t episode_seed);
  StepResult step(double heading);

  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }
  const EpisodeLog& log() const { return log_; }
  const SensorRig& rig() const { return rig_; }
  /// Sensor readings over the observation history ending at the current time.
  Observation observe();

 private:
  StepResult result(double reward);

  EnvConfig cfg_;
  Rng build_rng_;
  SensorRig rig_;
  Rng episode_rng_;
  EnvState state_;
  EpisodeLog log_;
  bool started_ = false;
};

void write_episode(const EpisodeLog& log, const EnvConfig& cfg, const std::filesystem::path& csv_path);

}  // namespace pir
