#pragma once

// Sparse multi-modal sensor observations and the three sensor-placement
// scenarios shared by dataset construction and the navigation environment.

#include "pir/flowfield.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace pir {

using Rng = std::mt19937_64;

enum Modality : int { kU = 0, kV = 1, kP = 2 };
inline constexpr int kNumModalities = 3;

struct ObsPoint {
  double t = 0, x = 0, y = 0;
  std::array<double, kNumModalities> value{};
  std::array<bool, kNumModalities> mask{};

  bool any_observed() const { return mask[0] || mask[1] || mask[2]; }
};

struct Observation {
  std::vector<ObsPoint> points;
  double t_ref = 0;  // window start; point times are rebased against it

  bool empty() const { return points.empty(); }
  std::size_t observed_entries() const;
  // Throws unless every point has a set mask bit, finite present values and
  // a time inside [t_ref, t_ref + span].
  void validate(double span) const;
};

struct Rect {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  bool inside(const Rect& outer) const {
    return x_min >= outer.x_min && x_max <= outer.x_max && y_min >= outer.y_min && y_max <= outer.y_max;
  }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  static Rect of_grid(const FlowGrid& g) { return {g.x0, g.x_max(), g.y0, g.y_max()}; }
};

enum class ScenarioKind { IrregularFixed, RegularFaulty, SurroundingRandom };

std::string_view to_string(ScenarioKind kind);
ScenarioKind scenario_from_string(std::string_view name);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::IrregularFixed;
  int sensor_count = 16;                // IrregularFixed
  int lattice_nx = 20, lattice_ny = 10;  // RegularFaulty
  double fault_prob = 0.3;
  int surround_count = 8;  // SurroundingRandom
  double surround_radius = 0.75;
  std::array<double, kNumModalities> drop_prob{1.0 / 3, 1.0 / 3, 1.0 / 3};

  int nominal_sensor_count() const;
  void validate() const;
};

/// Per-modality presence drawn independently, rejection-resampled until at
/// least one modality is present.
std::array<bool, kNumModalities> draw_mask(const std::array<double, kNumModalities>& drop_prob, Rng& rng);

/// Sensor layout for one scenario inside `region`. IrregularFixed positions are
/// drawn at construction and never change; its modality masks change only on
/// begin_episode(). RegularFaulty uses a fixed lattice with per-instant faults.
/// SurroundingRandom redraws positions around the robot at every instant.
class SensorRig {
 public:
  SensorRig(const ScenarioSpec& spec, const Rect& region, Rng& rng);

  void begin_episode(Rng& rng);

  /// Readings of every working sensor at each of `times`, rebased on `t_ref`.
  Observation observe(const FlowGrid& grid, double t_ref, std::span<const double> times, double robot_x,
                      double robot_y, Rng& rng) const;

  const ScenarioSpec& spec() const { return spec_; }
  const Rect& region() const { return region_; }
  const std::vector<std::array<double, 2>>& fixed_positions() const { return positions_; }

 private:
  ScenarioSpec spec_;
  Rect region_;
  std::vector<std::array<double, 2>> positions_;
  std::vector<std::array<bool, kNumModalities>> episode_masks_;
};

/// SplitMix64 step; used to derive independent child seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pir
