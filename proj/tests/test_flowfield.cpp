#include "pir/flowfield.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace pir;

namespace {

constexpr double kPi = std::numbers::pi;

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pir_flowfield_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Straight trilinear interpolation written against raw arrays.
double reference_interp(const FlowGrid& g, const std::vector<double>& f, double t, double x, double y) {
  const double a = (x - g.x0) / g.dx, b = (y - g.y0) / g.dy, c = (t - g.t0) / g.dt;
  const int i = std::min(static_cast<int>(a), g.nx - 2);
  const int j = std::min(static_cast<int>(b), g.ny - 2);
  const int k = std::min(static_cast<int>(c), g.nt - 2);
  const double wa = a - i, wb = b - j, wc = c - k;
  double acc = 0;
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) {
        const double w = (di ? wa : 1 - wa) * (dj ? wb : 1 - wb) * (dk ? wc : 1 - wc);
        acc += w * f[(static_cast<std::size_t>(k + dk) * g.ny + (j + dj)) * g.nx + (i + di)];
      }
  return acc;
}

}  // namespace

TEST_CASE("taylor-green: closed-form sample") {
  const auto s = taylor_green(0.0, 0.0, kPi / 2, 0.01, 1.0);
  CHECK(s.u == doctest::Approx(-1.0));
  CHECK(std::abs(s.v) < 1e-15);
  CHECK(std::abs(s.p) < 1e-15);
  const auto g = gen_taylor_green(9, 9, 3, 0.01, 1.0);
  const auto node = sample(g, 0.0, 0.0, kPi / 2);
  CHECK(node.valid);
  CHECK(node.u == doctest::Approx(-1.0));
}

TEST_CASE("taylor-green: analytic derivatives satisfy the momentum and continuity equations") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(0, 2 * kPi), tim(0, 5);
  const double nu = 0.05, rho = 1.3;
  for (int k = 0; k < 100; ++k) {
    const double t = tim(rng), x = pos(rng), y = pos(rng);
    const double E = std::exp(-2 * nu * t);
    const double u = -std::cos(x) * std::sin(y) * E, v = std::sin(x) * std::cos(y) * E;
    const double ut = 2 * nu * std::cos(x) * std::sin(y) * E, ux = std::sin(x) * std::sin(y) * E,
                 uy = -std::cos(x) * std::cos(y) * E, ulap = 2 * std::cos(x) * std::sin(y) * E;
    const double vt = -2 * nu * std::sin(x) * std::cos(y) * E, vx = std::cos(x) * std::cos(y) * E,
                 vy = -std::sin(x) * std::sin(y) * E, vlap = -2 * std::sin(x) * std::cos(y) * E;
    const double px = 0.5 * rho * std::sin(2 * x) * E * E, py = 0.5 * rho * std::sin(2 * y) * E * E;
    // Values must agree with the generator before checking the residual.
    const auto s = taylor_green(t, x, y, nu, rho);
    CHECK(std::abs(s.u - u) < 1e-15);
    CHECK(std::abs(s.v - v) < 1e-15);
    CHECK(std::abs(ut + u * ux + v * uy + px / rho - nu * ulap) < 1e-12);
    CHECK(std::abs(vt + u * vx + v * vy + py / rho - nu * vlap) < 1e-12);
    CHECK(std::abs(ux + vy) < 1e-12);
  }
}

TEST_CASE("vortex street: far upstream flow is the free stream") {
  VortexStreetParams p;
  const VortexStreet street(p);
  for (double t : {0.0, 1.3, 2.9}) {
    const auto s = street.at(t, -50 * p.cylinder_radius, 0.3);
    CHECK(std::abs(s.u - p.u_inf) < 0.01 * p.u_inf);
    CHECK(std::abs(s.v) < 0.01 * p.u_inf);
  }
}

TEST_CASE("vortex street: periodic in time") {
  VortexStreetParams p;
  const VortexStreet street(p);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(p.x_min, p.x_max), y(p.y_min, p.y_max), t(0, 10);
  for (int k = 0; k < 200; ++k) {
    const double tt = t(rng), xx = x(rng), yy = y(rng);
    const auto a = street.at(tt, xx, yy);
    const auto b = street.at(tt + p.shed_period, xx, yy);
    CHECK(std::abs(a.u - b.u) < 1e-10);
    CHECK(std::abs(a.v - b.v) < 1e-10);
    CHECK(std::abs(a.p - b.p) < 1e-10);
  }
}

TEST_CASE("vortex street: central-difference divergence is small on interior nodes") {
  VortexStreetParams p;
  p.x_min = 2.0;
  p.x_max = 5.0;
  p.y_min = -1.5;
  p.y_max = 1.5;
  p.nx = 121;
  p.ny = 121;
  p.nt = 4;
  p.steps_per_period = 4;
  const auto g = gen_vortex_street(p);
  CHECK(g.periodic_t);
  double worst = 0;
  for (int it = 0; it < g.nt; ++it)
    for (int iy = 1; iy + 1 < g.ny; ++iy)
      for (int ix = 1; ix + 1 < g.nx; ++ix) {
        const double div = (g.u[g.index(it, iy, ix + 1)] - g.u[g.index(it, iy, ix - 1)]) / (2 * g.dx) +
                           (g.v[g.index(it, iy + 1, ix)] - g.v[g.index(it, iy - 1, ix)]) / (2 * g.dy);
        worst = std::max(worst, std::abs(div));
      }
  CHECK(worst < 1e-3 * p.u_inf / g.dx);
}

TEST_CASE("vortex street: domain must exclude the cylinder") {
  VortexStreetParams p;
  p.x_min = -1;
  CHECK_THROWS_AS(gen_vortex_street(p), std::invalid_argument);
}

TEST_CASE("sample: node identity, bilinear centre and out-of-box flag") {
  FlowGrid g;
  g.nx = 2;
  g.ny = 2;
  g.nt = 2;
  g.allocate();
  // u = 0 on the y=0 row, 4 on the y=1 row, both time slabs.
  for (int it = 0; it < 2; ++it)
    for (int ix = 0; ix < 2; ++ix) g.u[g.index(it, 1, ix)] = 4;
  g.v[g.index(1, 1, 1)] = 7;
  CHECK(sample(g, 0.5, 0.5, 0.5).u == doctest::Approx(2.0));
  CHECK(sample(g, 1.0, 1.0, 1.0).v == 7.0);
  CHECK(sample(g, 0.0, 1.0, 1.0).v == 0.0);
  CHECK_FALSE(sample(g, 0.5, 1.5, 0.5).valid);
  CHECK_FALSE(sample(g, 1.5, 0.5, 0.5).valid);
  g.periodic_t = true;
  CHECK(sample(g, 1.5, 1.0, 1.0).valid);
  CHECK(sample(g, 1.5, 1.0, 1.0).v == doctest::Approx(3.5));  // wraps back toward slab 0
}

TEST_CASE("sample: agrees with an independent trilinear interpolator") {
  const auto g = gen_taylor_green(17, 13, 6, 0.1, 1.0, 0.2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> x(0, g.x_max()), y(0, g.y_max()), t(0, g.t_at(g.nt - 1));
  for (int k = 0; k < 1000; ++k) {
    const double tt = t(rng), xx = x(rng), yy = y(rng);
    const auto s = sample(g, tt, xx, yy);
    REQUIRE(s.valid);
    CHECK(std::abs(s.u - reference_interp(g, g.u, tt, xx, yy)) < 1e-12);
    CHECK(std::abs(s.p - reference_interp(g, g.p, tt, xx, yy)) < 1e-12);
  }
}

TEST_CASE("sample: exact for fields affine in x, y, t and continuous") {
  FlowGrid g;
  g.nx = 5;
  g.ny = 4;
  g.nt = 3;
  g.x0 = -1;
  g.dx = 0.5;
  g.dy = 0.25;
  g.dt = 0.3;
  g.allocate();
  auto f = [](double t, double x, double y) { return 1.5 * x - 2.0 * y + 0.7 * t + 0.25; };
  for (int it = 0; it < g.nt; ++it)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) g.u[g.index(it, iy, ix)] = f(g.t_at(it), g.x_at(ix), g.y_at(iy));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> x(g.x0, g.x_max()), y(g.y0, g.y_max()), t(0, g.t_at(g.nt - 1));
  for (int k = 0; k < 200; ++k) {
    const double tt = t(rng), xx = x(rng), yy = y(rng);
    CHECK(std::abs(sample(g, tt, xx, yy).u - f(tt, xx, yy)) < 1e-12);
    const double range = 10.0;
    CHECK(std::abs(sample(g, tt, xx, yy).u - sample(g, tt, xx + 1e-9, yy).u) < 1e-6 * range);
  }
}

TEST_CASE("slice_trajectories: window counts") {
  auto g = gen_taylor_green(3, 3, 10, 0.1, 1.0);
  CHECK(slice_trajectories(g, 5, 1).size() == 6);
  CHECK(slice_trajectories(g, 10, 1).size() == 1);
  CHECK(slice_trajectories(g, 4, 3).size() == 3);
  CHECK_THROWS_AS(slice_trajectories(g, 11, 1), std::invalid_argument);
  CHECK_THROWS_AS(slice_trajectories(g, 1, 1), std::invalid_argument);
  g = gen_taylor_green(3, 3, 210, 0.1, 1.0);
  const auto w = slice_trajectories(g, 10, 1);
  CHECK(w.size() == 201);
  CHECK(w.back().start + w.back().length == 210);
}

TEST_CASE("ffgrid: round trip is bitwise and guards are distinct") {
  auto g = gen_taylor_green(7, 5, 4, 0.037, 1.1, 0.13);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (auto& x : g.p) x += n(rng);
  g.periodic_t = true;
  const auto path = temp_file("roundtrip.ffgrid");
  write_ffgrid(g, path);
  const auto back = read_ffgrid(path);
  CHECK(back.nx == g.nx);
  CHECK(back.dt == g.dt);
  CHECK(back.nu == g.nu);
  CHECK(back.periodic_t);
  CHECK(back.u == g.u);
  CHECK(back.v == g.v);
  CHECK(back.p == g.p);

  auto expect_kind = [](const std::filesystem::path& p, FfgridError::Kind kind, const std::string& text) {
    try {
      read_ffgrid(p);
      FAIL("expected FfgridError");
    } catch (const FfgridError& e) {
      CHECK(e.kind() == kind);
      CHECK(std::string(e.what()).find(text) != std::string::npos);
    }
  };

  {
    std::ofstream out(temp_file("magic.ffgrid"), std::ios::binary);
    out << "NOTAGRID{}\n";
  }
  expect_kind(temp_file("magic.ffgrid"), FfgridError::Kind::BadMagic, "not an FFGRID file");

  const auto full = std::filesystem::file_size(path);
  std::filesystem::copy_file(path, temp_file("short.ffgrid"), std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(temp_file("short.ffgrid"), full - 8);
  expect_kind(temp_file("short.ffgrid"), FfgridError::Kind::Truncated, "truncated");

  std::filesystem::copy_file(path, temp_file("long.ffgrid"), std::filesystem::copy_options::overwrite_existing);
  {
    std::ofstream out(temp_file("long.ffgrid"), std::ios::binary | std::ios::app);
    out << "12345678";
  }
  expect_kind(temp_file("long.ffgrid"), FfgridError::Kind::SizeMismatch, "does not match");
}
