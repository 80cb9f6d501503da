#pragma once

// Ground-truth 2-D flow fields on regular space-time grids: analytic
// generators, interpolation, trajectory windows and the FFGRID file format.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pir {

/// (u, v, p) on an nt x ny x nx lattice, stored t-major, then y, then x.
struct FlowGrid {
  int nx = 0, ny = 0, nt = 0;
  double x0 = 0, y0 = 0, dx = 1, dy = 1;
  double t0 = 0, dt = 1;
  double nu = 0, rho = 1;
  // When set, the field repeats in time with period nt*dt.
  bool periodic_t = false;
  std::vector<double> u, v, p;

  std::size_t size() const { return static_cast<std::size_t>(nt) * ny * nx; }
  std::size_t index(int it, int iy, int ix) const {
    return (static_cast<std::size_t>(it) * ny + iy) * nx + ix;
  }
  double x_at(int ix) const { return x0 + ix * dx; }
  double y_at(int iy) const { return y0 + iy * dy; }
  double t_at(int it) const { return t0 + it * dt; }
  double x_max() const { return x0 + (nx - 1) * dx; }
  double y_max() const { return y0 + (ny - 1) * dy; }
  double time_period() const { return nt * dt; }

  void validate() const;
  void allocate();
};

struct FlowSample {
  double u = 0, v = 0, p = 0;
  bool valid = false;
};

struct TrajectoryWindow {
  int start = 0;
  int length = 0;
};

/// Exact decaying Taylor-Green vortex on [0, 2pi]^2.
FlowSample taylor_green(double t, double x, double y, double nu, double rho);
FlowGrid gen_taylor_green(int nx, int ny, int nt, double nu, double rho, double dt = 0.1);

struct VortexStreetParams {
  int nx = 81, ny = 61, nt = 40;
  double u_inf = 1.0;
  double cylinder_radius = 0.5;
  double shed_period = 4.0;
  double vortex_strength = 2.0;  // circulation magnitude of each shed vortex
  double nu = 0.01;
  double rho = 1.0;
  // Grid extent (cylinder at the origin, domain downstream of it).
  double x_min = 1.0, x_max = 9.0;
  double y_min = -3.0, y_max = 3.0;
  // Grid time step is shed_period / steps_per_period; the grid is flagged
  // periodic when nt is a multiple of steps_per_period.
  int steps_per_period = 40;
};

/// Analytic synthetic wake: uniform stream, cylinder doublet and two staggered
/// rows of opposite-signed Oseen vortices convecting at 0.7 u_inf.
class VortexStreet {
 public:
  explicit VortexStreet(const VortexStreetParams& params);

  FlowSample at(double t, double x, double y) const;
  double advection_speed() const { return 0.7 * params_.u_inf; }
  double core_radius() const { return 0.5 * params_.cylinder_radius; }
  const VortexStreetParams& params() const { return params_; }

 private:
  VortexStreetParams params_;
  double row_offset_;   // half the lateral spacing of the two rows
  double shed_x_;       // where vortices are born
  int lifetime_periods_;
};

FlowGrid gen_vortex_street(const VortexStreetParams& params);

/// Constant flow (u, v) with p = 0 on the given box; time-periodic.
FlowGrid gen_uniform_flow(double u, double v, double x_min, double x_max, double y_min, double y_max, int nx = 11,
                          int ny = 11, double rho = 1.0);

/// Bilinear in space, linear in time; valid=false outside the space-time box.
FlowSample sample(const FlowGrid& grid, double t, double x, double y);

std::vector<TrajectoryWindow> slice_trajectories(const FlowGrid& grid, int n, int stride = 1);

class FfgridError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadManifest, Truncated, SizeMismatch };
  FfgridError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

void write_ffgrid(const FlowGrid& grid, const std::filesystem::path& path);
FlowGrid read_ffgrid(const std::filesystem::path& path);

}  // namespace pir
