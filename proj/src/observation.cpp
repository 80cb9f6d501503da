#include "pir/observation.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pir {

std::size_t Observation::observed_entries() const {
  std::size_t n = 0;
  for (const auto& p : points)
    for (bool m : p.mask) n += m ? 1 : 0;
  return n;
}

void Observation::validate(double span) const {
  constexpr double tol = 1e-9;
  for (const auto& p : points) {
    if (!p.any_observed()) throw std::invalid_argument("Observation: point with no observed modality");
    for (int m = 0; m < kNumModalities; ++m)
      if (p.mask[m] && !std::isfinite(p.value[m])) throw std::invalid_argument("Observation: non-finite value");
    if (p.t < t_ref - tol || p.t > t_ref + span + tol)
      throw std::invalid_argument("Observation: point time outside the window");
  }
}

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::IrregularFixed:
      return "irregular";
    case ScenarioKind::RegularFaulty:
      return "regular_faulty";
    case ScenarioKind::SurroundingRandom:
      return "surrounding";
  }
  return "?";
}

ScenarioKind scenario_from_string(std::string_view name) {
  if (name == "irregular") return ScenarioKind::IrregularFixed;
  if (name == "regular_faulty") return ScenarioKind::RegularFaulty;
  if (name == "surrounding") return ScenarioKind::SurroundingRandom;
  throw std::invalid_argument("unknown scenario '" + std::string(name) +
                              "' (expected irregular, regular_faulty or surrounding)");
}

int ScenarioSpec::nominal_sensor_count() const {
  switch (kind) {
    case ScenarioKind::IrregularFixed:
      return sensor_count;
    case ScenarioKind::RegularFaulty:
      return lattice_nx * lattice_ny;
    case ScenarioKind::SurroundingRandom:
      return surround_count;
  }
  return 0;
}

void ScenarioSpec::validate() const {
  if (nominal_sensor_count() < 1 || lattice_nx < 1 || lattice_ny < 1)
    throw std::invalid_argument("scenario: at least one sensor must be configured");
  if (!(fault_prob >= 0 && fault_prob <= 1)) throw std::invalid_argument("scenario: fault_prob must be in [0,1]");
  bool any_possible = false;
  for (double d : drop_prob) {
    if (!(d >= 0 && d <= 1)) throw std::invalid_argument("scenario: drop probabilities must be in [0,1]");
    any_possible = any_possible || d < 1;
  }
  if (!any_possible) throw std::invalid_argument("scenario: every modality is always dropped");
  if (kind == ScenarioKind::SurroundingRandom && !(surround_radius > 0))
    throw std::invalid_argument("scenario: surround_radius must be > 0");
}

std::array<bool, kNumModalities> draw_mask(const std::array<double, kNumModalities>& drop_prob, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::array<bool, kNumModalities> mask{};
    for (int m = 0; m < kNumModalities; ++m) mask[m] = u(rng) >= drop_prob[m];
    if (mask[0] || mask[1] || mask[2]) return mask;
  }
}

SensorRig::SensorRig(const ScenarioSpec& spec, const Rect& region, Rng& rng) : spec_(spec), region_(region) {
  spec_.validate();
  if (!(region.width() > 0) || !(region.height() > 0)) throw std::invalid_argument("SensorRig: empty region");
  if (spec_.kind == ScenarioKind::IrregularFixed) {
    std::uniform_real_distribution<double> ux(region.x_min, region.x_max), uy(region.y_min, region.y_max);
    for (int i = 0; i < spec_.sensor_count; ++i) positions_.push_back({ux(rng), uy(rng)});
  } else if (spec_.kind == ScenarioKind::RegularFaulty) {
    // Cell-centred lattice so no sensor sits on the region boundary.
    for (int j = 0; j < spec_.lattice_ny; ++j)
      for (int i = 0; i < spec_.lattice_nx; ++i)
        positions_.push_back({region.x_min + (i + 0.5) * region.width() / spec_.lattice_nx,
                              region.y_min + (j + 0.5) * region.height() / spec_.lattice_ny});
  }
  begin_episode(rng);
}

void SensorRig::begin_episode(Rng& rng) {
  episode_masks_.clear();
  if (spec_.kind == ScenarioKind::IrregularFixed)
    for (std::size_t i = 0; i < positions_.size(); ++i) episode_masks_.push_back(draw_mask(spec_.drop_prob, rng));
}

Observation SensorRig::observe(const FlowGrid& grid, double t_ref, std::span<const double> times, double robot_x,
                               double robot_y, Rng& rng) const {
  Observation obs;
  obs.t_ref = t_ref;
  auto read = [&](double t, double x, double y, const std::array<bool, kNumModalities>& mask) {
    const auto s = sample(grid, t, x, y);
    if (!s.valid) return;
    ObsPoint p;
    p.t = t;
    p.x = x;
    p.y = y;
    p.mask = mask;
    const std::array<double, kNumModalities> values{s.u, s.v, s.p};
    for (int m = 0; m < kNumModalities; ++m) p.value[m] = mask[m] ? values[m] : 0.0;
    obs.points.push_back(p);
  };

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double t : times) {
    switch (spec_.kind) {
      case ScenarioKind::IrregularFixed:
        for (std::size_t i = 0; i < positions_.size(); ++i) read(t, positions_[i][0], positions_[i][1], episode_masks_[i]);
        break;
      case ScenarioKind::RegularFaulty: {
        bool any = false;
        for (const auto& pos : positions_) {
          if (unit(rng) < spec_.fault_prob) continue;
          any = true;
          read(t, pos[0], pos[1], draw_mask(spec_.drop_prob, rng));
        }
        if (!any) {
          // Every sensor faulted: fall back to the one closest to the robot.
          std::size_t best = 0;
          double best_d = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < positions_.size(); ++i) {
            const double d = std::hypot(positions_[i][0] - robot_x, positions_[i][1] - robot_y);
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
          read(t, positions_[best][0], positions_[best][1], draw_mask(spec_.drop_prob, rng));
        }
        break;
      }
      case ScenarioKind::SurroundingRandom:
        for (int i = 0; i < spec_.surround_count; ++i) {
          // Uniform in the disc; redraw points that fall outside the region.
          double x = robot_x, y = robot_y;
          for (int attempt = 0; attempt < 64; ++attempt) {
            const double r = spec_.surround_radius * std::sqrt(unit(rng));
            const double a = 2.0 * std::numbers::pi * unit(rng);
            x = robot_x + r * std::cos(a);
            y = robot_y + r * std::sin(a);
            if (region_.contains(x, y)) break;
            x = robot_x;
            y = robot_y;
          }
          read(t, x, y, draw_mask(spec_.drop_prob, rng));
        }
        break;
    }
  }
  return obs;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace pir
