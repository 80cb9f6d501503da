#include "pir/flowfield.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pir {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr char kMagic[8] = {'F', 'F', 'G', 'R', 'I', 'D', '0', '1'};

double smooth_ramp(double s) {
  s = std::clamp(s, 0.0, 1.0);
  const double v = std::sin(0.5 * kPi * s);
  return v * v;
}

void add_oseen(double gamma, double xc, double yc, double core2, double x, double y, double& u, double& v) {
  const double dx = x - xc;
  const double dy = y - yc;
  const double r2 = dx * dx + dy * dy;
  // (1 - exp(-r2/c2)) / r2 -> 1/c2 as r -> 0
  const double shape = r2 < 1e-14 * core2 ? 1.0 / core2 : -std::expm1(-r2 / core2) / r2;
  const double f = gamma / (2.0 * kPi) * shape;
  u -= f * dy;
  v += f * dx;
}

void put_le(std::ostream& out, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double d : values) {
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      std::reverse(b, b + 8);
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
}

void get_le(const char* src, std::vector<double>& values) {
  std::memcpy(values.data(), src, values.size() * sizeof(double));
  if constexpr (std::endian::native != std::endian::little) {
    for (double& d : values) {
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      std::reverse(b, b + 8);
      std::memcpy(&d, b, 8);
    }
  }
}

}  // namespace

void FlowGrid::validate() const {
  if (nx < 1 || ny < 1 || nt < 1) throw std::invalid_argument("FlowGrid: sizes must be positive");
  if (!(dx > 0) || !(dy > 0) || !(dt > 0)) throw std::invalid_argument("FlowGrid: dx, dy, dt must be > 0");
  if (u.size() != size() || v.size() != size() || p.size() != size())
    throw std::invalid_argument("FlowGrid: field arrays must have nt*ny*nx entries");
  auto finite = [](const std::vector<double>& f) {
    return std::all_of(f.begin(), f.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(u) || !finite(v) || !finite(p)) throw std::invalid_argument("FlowGrid: non-finite field value");
}

void FlowGrid::allocate() {
  u.assign(size(), 0.0);
  v.assign(size(), 0.0);
  p.assign(size(), 0.0);
}

FlowSample taylor_green(double t, double x, double y, double nu, double rho) {
  const double decay = std::exp(-2.0 * nu * t);
  FlowSample s;
  s.u = -std::cos(x) * std::sin(y) * decay;
  s.v = std::sin(x) * std::cos(y) * decay;
  s.p = -0.25 * rho * (std::cos(2.0 * x) + std::cos(2.0 * y)) * decay * decay;
  s.valid = true;
  return s;
}

FlowGrid gen_taylor_green(int nx, int ny, int nt, double nu, double rho, double dt) {
  if (nx < 2 || ny < 2 || nt < 2) throw std::invalid_argument("gen_taylor_green: sizes must be >= 2");
  FlowGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nt = nt;
  g.x0 = 0;
  g.y0 = 0;
  g.dx = 2 * kPi / (nx - 1);
  g.dy = 2 * kPi / (ny - 1);
  g.t0 = 0;
  g.dt = dt;
  g.nu = nu;
  g.rho = rho;
  g.allocate();
  for (int it = 0; it < nt; ++it)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const auto s = taylor_green(g.t_at(it), g.x_at(ix), g.y_at(iy), nu, rho);
        const auto k = g.index(it, iy, ix);
        g.u[k] = s.u;
        g.v[k] = s.v;
        g.p[k] = s.p;
      }
  g.validate();
  return g;
}

VortexStreet::VortexStreet(const VortexStreetParams& params) : params_(params) {
  if (!(params.u_inf > 0) || !(params.cylinder_radius > 0) || !(params.shed_period > 0))
    throw std::invalid_argument("VortexStreet: u_inf, cylinder_radius and shed_period must be > 0");
  const double wavelength = advection_speed() * params.shed_period;
  // Stable Karman ratio of row spacing to wavelength.
  row_offset_ = 0.5 * 0.281 * wavelength;
  shed_x_ = 2.0 * params.cylinder_radius;
  lifetime_periods_ = static_cast<int>(std::ceil((params.x_max - shed_x_) / wavelength)) + 4;
}

FlowSample VortexStreet::at(double t, double x, double y) const {
  const auto& P = params_;
  const double U = P.u_inf;
  const double R2 = P.cylinder_radius * P.cylinder_radius;
  double u = U;
  double v = 0;
  const double r2 = x * x + y * y;
  if (r2 > 1e-12) {
    const double r4 = r2 * r2;
    u -= U * R2 * (x * x - y * y) / r4;
    v -= 2.0 * U * R2 * x * y / r4;
  }

  const double T = P.shed_period;
  const double core2 = core_radius() * core_radius();
  const double life = lifetime_periods_ * T;
  const double speed = advection_speed();
  // Upper row (clockwise) sheds at phase 0, lower row half a period later.
  for (int row = 0; row < 2; ++row) {
    const double sign = row == 0 ? -1.0 : 1.0;
    const double yc = row == 0 ? row_offset_ : -row_offset_;
    double phase = std::fmod(t - row * 0.5 * T, T);
    if (phase < 0) phase += T;
    for (int j = 0; j < lifetime_periods_; ++j) {
      const double age = phase + j * T;
      const double strength = smooth_ramp(age / (0.5 * T)) * smooth_ramp((life - age) / T);
      if (strength == 0.0) continue;
      add_oseen(sign * P.vortex_strength * strength, shed_x_ + speed * age, yc, core2, x, y, u, v);
    }
  }
  FlowSample s;
  s.u = u;
  s.v = v;
  s.p = 0.5 * P.rho * (U * U - (u * u + v * v));
  s.valid = true;
  return s;
}

FlowGrid gen_vortex_street(const VortexStreetParams& params) {
  if (params.nx < 2 || params.ny < 2 || params.nt < 1 || params.steps_per_period < 1)
    throw std::invalid_argument("gen_vortex_street: invalid grid sizes");
  if (!(params.x_max > params.x_min) || !(params.y_max > params.y_min))
    throw std::invalid_argument("gen_vortex_street: empty domain");
  const double cx = std::clamp(0.0, params.x_min, params.x_max);
  const double cy = std::clamp(0.0, params.y_min, params.y_max);
  if (cx * cx + cy * cy < params.cylinder_radius * params.cylinder_radius)
    throw std::invalid_argument("gen_vortex_street: domain must exclude the cylinder");
  const VortexStreet street(params);
  FlowGrid g;
  g.nx = params.nx;
  g.ny = params.ny;
  g.nt = params.nt;
  g.x0 = params.x_min;
  g.y0 = params.y_min;
  g.dx = (params.x_max - params.x_min) / (params.nx - 1);
  g.dy = (params.y_max - params.y_min) / (params.ny - 1);
  g.t0 = 0;
  g.dt = params.shed_period / params.steps_per_period;
  g.nu = params.nu;
  g.rho = params.rho;
  g.periodic_t = params.nt % params.steps_per_period == 0;
  g.allocate();
  for (int it = 0; it < g.nt; ++it)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const auto s = street.at(g.t_at(it), g.x_at(ix), g.y_at(iy));
        const auto k = g.index(it, iy, ix);
        g.u[k] = s.u;
        g.v[k] = s.v;
        g.p[k] = s.p;
      }
  g.validate();
  return g;
}

FlowGrid gen_uniform_flow(double u, double v, double x_min, double x_max, double y_min, double y_max, int nx, int ny,
                          double rho) {
  if (nx < 2 || ny < 2 || !(x_max > x_min) || !(y_max > y_min))
    throw std::invalid_argument("gen_uniform_flow: invalid box");
  FlowGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nt = 1;
  g.x0 = x_min;
  g.y0 = y_min;
  g.dx = (x_max - x_min) / (nx - 1);
  g.dy = (y_max - y_min) / (ny - 1);
  g.dt = 1.0;
  g.rho = rho;
  g.periodic_t = true;
  g.allocate();
  std::fill(g.u.begin(), g.u.end(), u);
  std::fill(g.v.begin(), g.v.end(), v);
  return g;
}

FlowSample sample(const FlowGrid& g, double t, double x, double y) {
  constexpr double tol = 1e-9;
  FlowSample s;
  const double fx_raw = (x - g.x0) / g.dx;
  const double fy_raw = (y - g.y0) / g.dy;
  if (!(fx_raw >= -tol && fx_raw <= g.nx - 1 + tol && fy_raw >= -tol && fy_raw <= g.ny - 1 + tol)) return s;

  int it0 = 0, it1 = 0;
  double ft = 0;
  double tau = (t - g.t0) / g.dt;
  if (!std::isfinite(tau)) return s;
  if (g.periodic_t) {
    tau = std::fmod(tau, static_cast<double>(g.nt));
    if (tau < 0) tau += g.nt;
    it0 = std::min(static_cast<int>(std::floor(tau)), g.nt - 1);
    ft = tau - it0;
    it1 = (it0 + 1) % g.nt;
  } else {
    if (tau < -tol || tau > g.nt - 1 + tol) return s;
    tau = std::clamp(tau, 0.0, static_cast<double>(g.nt - 1));
    it0 = std::min(static_cast<int>(std::floor(tau)), std::max(g.nt - 2, 0));
    ft = tau - it0;
    it1 = std::min(it0 + 1, g.nt - 1);
  }

  auto cell = [](double f, int n, int& i0, double& w) {
    f = std::clamp(f, 0.0, static_cast<double>(n - 1));
    i0 = n == 1 ? 0 : std::min(static_cast<int>(std::floor(f)), n - 2);
    w = f - i0;
  };
  int ix, iy;
  double wx, wy;
  cell(fx_raw, g.nx, ix, wx);
  cell(fy_raw, g.ny, iy, wy);
  const int ix1 = std::min(ix + 1, g.nx - 1);
  const int iy1 = std::min(iy + 1, g.ny - 1);

  auto slab = [&](const std::vector<double>& f, int it) {
    const double a = f[g.index(it, iy, ix)] * (1 - wx) + f[g.index(it, iy, ix1)] * wx;
    const double b = f[g.index(it, iy1, ix)] * (1 - wx) + f[g.index(it, iy1, ix1)] * wx;
    return a * (1 - wy) + b * wy;
  };
  auto interp = [&](const std::vector<double>& f) { return slab(f, it0) * (1 - ft) + slab(f, it1) * ft; };
  s.u = interp(g.u);
  s.v = interp(g.v);
  s.p = interp(g.p);
  s.valid = true;
  return s;
}

std::vector<TrajectoryWindow> slice_trajectories(const FlowGrid& grid, int n, int stride) {
  if (n < 2) throw std::invalid_argument("slice_trajectories: window length must be >= 2");
  if (stride < 1) throw std::invalid_argument("slice_trajectories: stride must be >= 1");
  if (n > grid.nt)
    throw std::invalid_argument("slice_trajectories: window length " + std::to_string(n) + " exceeds nt=" +
                                std::to_string(grid.nt));
  std::vector<TrajectoryWindow> out;
  for (int s = 0; s + n <= grid.nt; s += stride) out.push_back({s, n});
  return out;
}

void write_ffgrid(const FlowGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  const nlohmann::json manifest = {{"nx", grid.nx}, {"ny", grid.ny}, {"nt", grid.nt},   {"x0", grid.x0},
                                   {"y0", grid.y0}, {"dx", grid.dx}, {"dy", grid.dy},   {"t0", grid.t0},
                                   {"dt", grid.dt}, {"nu", grid.nu}, {"rho", grid.rho}, {"periodic_t", grid.periodic_t}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FfgridError(FfgridError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  out << manifest.dump() << '\n';
  put_le(out, grid.u);
  put_le(out, grid.v);
  put_le(out, grid.p);
  if (!out) throw FfgridError(FfgridError::Kind::Io, "write failed: " + path.string());
}

FlowGrid read_ffgrid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FfgridError(FfgridError::Kind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FfgridError(FfgridError::Kind::BadMagic, path.string() + ": not an FFGRID file");
  const auto eol = bytes.find('\n', sizeof kMagic);
  if (eol == std::string::npos)
    throw FfgridError(FfgridError::Kind::Truncated, path.string() + ": truncated manifest");

  FlowGrid g;
  try {
    const auto m = nlohmann::json::parse(bytes.substr(sizeof kMagic, eol - sizeof kMagic));
    g.nx = m.at("nx").get<int>();
    g.ny = m.at("ny").get<int>();
    g.nt = m.at("nt").get<int>();
    g.x0 = m.at("x0").get<double>();
    g.y0 = m.at("y0").get<double>();
    g.dx = m.at("dx").get<double>();
    g.dy = m.at("dy").get<double>();
    g.t0 = m.at("t0").get<double>();
    g.dt = m.at("dt").get<double>();
    g.nu = m.at("nu").get<double>();
    g.rho = m.at("rho").get<double>();
    g.periodic_t = m.at("periodic_t").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FfgridError(FfgridError::Kind::BadManifest, path.string() + ": bad manifest: " + e.what());
  }
  if (g.nx < 1 || g.ny < 1 || g.nt < 1)
    throw FfgridError(FfgridError::Kind::BadManifest, path.string() + ": bad manifest: non-positive size");

  const std::size_t payload = bytes.size() - eol - 1;
  const std::size_t expected = 3 * g.size() * sizeof(double);
  if (payload < expected)
    throw FfgridError(FfgridError::Kind::Truncated, path.string() + ": truncated payload (" + std::to_string(payload) +
                                                        " of " + std::to_string(expected) + " bytes)");
  if (payload > expected)
    throw FfgridError(FfgridError::Kind::SizeMismatch,
                      path.string() + ": payload size " + std::to_string(payload) +
                          " does not match manifest (" + std::to_string(expected) + " bytes)");
  g.u.resize(g.size());
  g.v.resize(g.size());
  g.p.resize(g.size());
  const char* data = bytes.data() + eol + 1;
  get_le(data, g.u);
  get_le(data + g.size() * sizeof(double), g.v);
  get_le(data + 2 * g.size() * sizeof(double), g.p);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw FfgridError(FfgridError::Kind::BadManifest, path.string() + ": " + e.what());
  }
  return g;
}

}  // namespace pir
