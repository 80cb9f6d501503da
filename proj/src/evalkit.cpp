#include "pir/evalkit.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pir {

namespace {

std::string num(double v, const char* f = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

VectorXd distances_to_first(const LatentSeries& s) {
  VectorXd d(static_cast<Eigen::Index>(s.size() - 1));
  for (std::size_t k = 1; k < s.size(); ++k) d(static_cast<Eigen::Index>(k - 1)) = (s.z[k] - s.z[0]).squaredNorm();
  return d;
}

}  // namespace

void LatentSeries::validate() const {
  if (t.size() != z.size()) throw std::invalid_argument("LatentSeries: t and z lengths differ");
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (!(t[k] > t[k - 1])) throw std::invalid_argument("LatentSeries: times must be strictly increasing");
    if (z[k].size() != z[0].size()) throw std::invalid_argument("LatentSeries: latent sizes differ");
  }
}

double error_consist(const LatentSeries& a, const LatentSeries& b) {
  a.validate();
  b.validate();
  if (a.size() != b.size()) throw std::invalid_argument("error_consist: series lengths differ");
  if (a.size() < 2) throw std::invalid_argument("error_consist: need at least two latents");
  const VectorXd d = distances_to_first(a), e = distances_to_first(b);
  const double norm = d.norm();
  if (norm == 0) throw std::domain_error("error_consist: reference latent series is constant");
  return (d - e).norm() / norm;
}

VectorXd magnitude_spectrum(const MatrixXd& signals) {
  const auto n = signals.cols();
  if (n < 8) throw std::invalid_argument("magnitude_spectrum: need at least 8 samples");
  const auto bins = n / 2;
  Eigen::FFT<double> fft;
  VectorXd acc = VectorXd::Zero(bins);
  std::vector<double> row(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spec;
  for (Eigen::Index r = 0; r < signals.rows(); ++r) {
    for (Eigen::Index k = 0; k < n; ++k) row[static_cast<std::size_t>(k)] = signals(r, k);
    fft.fwd(spec, row);
    // Bin 0 (the mean) is dropped; bins 1..n/2 are the positive frequencies.
    for (Eigen::Index k = 1; k <= bins; ++k) acc(k - 1) += std::abs(spec[static_cast<std::size_t>(k)]);
  }
  acc /= static_cast<double>(std::max<Eigen::Index>(signals.rows(), 1));
  const double e = acc.norm();
  return e > 0 ? VectorXd(acc / e) : acc;
}

MatrixXd latent_matrix(const LatentSeries& s) {
  s.validate();
  if (s.size() == 0) return {};
  MatrixXd m(s.z[0].size(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = s.z[k];
  return m;
}

double error_freq(const LatentSeries& latent, const MatrixXd& reference) {
  if (static_cast<Eigen::Index>(latent.size()) != reference.cols())
    throw std::invalid_argument("error_freq: latent has " + std::to_string(latent.size()) +
                                " samples, reference has " + std::to_string(reference.cols()));
  const VectorXd s_ref = magnitude_spectrum(reference);
  const double ref_norm = s_ref.norm();
  if (ref_norm == 0) throw std::domain_error("error_freq: reference has no temporal variation");
  return (s_ref - magnitude_spectrum(latent_matrix(latent))).norm() / ref_norm;
}

void LatentProtocol::validate() const {
  if (sensor_count < 1) throw std::invalid_argument("LatentProtocol: sensor_count must be >= 1");
  if (window < 2) throw std::invalid_argument("LatentProtocol: window must be >= 2");
  if (length < 8) throw std::invalid_argument("LatentProtocol: length must be >= 8");
  if (start < 0) throw std::invalid_argument("LatentProtocol: start must be >= 0");
  for (double q : degraded_drop)
    if (!(q >= 0 && q <= 1)) throw std::invalid_argument("LatentProtocol: drop probabilities must be in [0,1]");
}

LatentStreams latent_streams(const PirModel& model, const FlowGrid& grid, const LatentProtocol& protocol,
                             std::uint64_t seed) {
  protocol.validate();
  const int last = protocol.start + protocol.length + protocol.window - 2;
  if (!grid.periodic_t && last >= grid.nt)
    throw std::invalid_argument("latent_streams: needs " + std::to_string(last + 1) + " frames, grid has " +
                                std::to_string(grid.nt));
  const Rect region = protocol.region.value_or(Rect::of_grid(grid));
  ScenarioSpec full;
  full.kind = ScenarioKind::IrregularFixed;
  full.sensor_count = protocol.sensor_count;
  full.drop_prob = {0, 0, 0};
  ScenarioSpec degraded = full;
  degraded.drop_prob = protocol.degraded_drop;
  // Same seed, so both rigs place sensors identically; only the masks differ.
  Rng ra(derive_seed(seed, 0x5E45)), rb(derive_seed(seed, 0x5E45));
  const SensorRig rig_full(full, region, ra), rig_degraded(degraded, region, rb);
  Rng unused(seed);
  const double cx = 0.5 * (region.x_min + region.x_max), cy = 0.5 * (region.y_min + region.y_max);

  LatentStreams out;
  out.reference.resize(3 * protocol.sensor_count, protocol.length);
  const auto& pos = rig_full.fixed_positions();
  for (int k = 0; k < protocol.length; ++k) {
    std::vector<double> times;
    for (int j = 0; j < protocol.window; ++j) times.push_back(grid.t_at(protocol.start + k + j));
    const double t0 = times.front();
    out.full.t.push_back(t0);
    out.degraded.t.push_back(t0);
    out.full.z.push_back(encode(model, rig_full.observe(grid, t0, times, cx, cy, unused)));
    out.degraded.z.push_back(encode(model, rig_degraded.observe(grid, t0, times, cx, cy, unused)));
    for (int i = 0; i < protocol.sensor_count; ++i) {
      const auto f = sample(grid, t0, pos[static_cast<std::size_t>(i)][0], pos[static_cast<std::size_t>(i)][1]);
      out.reference(3 * i, k) = f.u;
      out.reference(3 * i + 1, k) = f.v;
      out.reference(3 * i + 2, k) = f.p;
    }
  }
  return out;
}

std::vector<double> smooth(std::span<const double> series, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("smooth: window must be a positive odd integer");
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(series.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - half), hi = std::min(n - 1, i + half);
    double acc = 0;
    for (auto k = lo; k <= hi; ++k) acc += series[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<CurveRow> return_curve(const std::vector<CurvePoint>& points, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("return_curve: no checkpoints");
  std::vector<CurveRow> rows;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points[k];
    // Every checkpoint sees the same evaluation episodes.
    const auto rep = evaluate_policy(env, encoder, p.policy, episodes, seed, p.delta_scale);
    rows.push_back({static_cast<int>(k), p.episode, rep.mean_return, rep.success_rate});
  }
  return rows;
}

std::vector<CurveRow> return_curve(const std::vector<PolicyCheckpoint>& checkpoints, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed) {
  std::vector<CurvePoint> points;
  for (const auto& ck : checkpoints) points.push_back({ck.episode, deterministic_policy(ck.policy), ck.delta_scale});
  return return_curve(points, env, encoder, episodes, seed);
}

std::vector<CurveRow> return_curve(const std::vector<std::filesystem::path>& files, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed) {
  std::vector<PolicyCheckpoint> cks;
  for (const auto& f : files) {
    try {
      cks.push_back(policy_checkpoint_from_json(read_json_file(f)));
    } catch (const std::exception& e) {
      const std::string what = e.what();
      throw std::runtime_error(what.find(f.string()) == std::string::npos ? f.string() + ": " + what : what);
    }
  }
  return return_curve(cks, env, encoder, episodes, seed);
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::string out = "checkpoint,episode,mean_return,success_rate\n";
  for (const auto& r : rows)
    out += std::to_string(r.checkpoint) + ',' + std::to_string(r.episode) + ',' + num(r.mean_return) + ',' +
           num(r.success_rate) + '\n';
  return out;
}

std::string trajectory_svg(const EpisodeLog& log, const EnvConfig& env) {
  if (log.rows.empty()) throw std::invalid_argument("render_trajectory: empty episode log");
  const Rect b = env.bounds;
  const double scale = 80.0;  // pixels per unit length
  const double w = b.width() * scale, h = b.height() * scale;
  auto px = [&](double x) { return num((x - b.x_min) * scale, "%.6f"); };
  auto py = [&](double y) { return num((b.y_max - y) * scale, "%.6f"); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w, "%.0f") << "\" height=\"" << num(h, "%.0f")
      << "\" viewBox=\"0 0 " << num(w, "%.0f") << ' ' << num(h, "%.0f") << "\">\n";
  svg << "<defs>\n";
  for (const char* c : {"red", "blue", "green"})
    svg << "<marker id=\"head-" << c << "\" markerWidth=\"8\" markerHeight=\"8\" refX=\"6\" refY=\"3\" orient=\"auto\">"
        << "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"" << c << "\"/></marker>\n";
  svg << "</defs>\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << num(w, "%.0f") << "\" height=\"" << num(h, "%.0f")
      << "\" fill=\"white\" stroke=\"black\"/>\n";

  const auto& first = log.rows.front();
  svg << "<circle class=\"target\" cx=\"" << px(first.target_x) << "\" cy=\"" << py(first.target_y) << "\" r=\""
      << num(env.target_tolerance * scale, "%.6f") << "\" fill=\"none\" stroke=\"orange\" stroke-width=\"2\"/>\n";
  svg << "<circle class=\"start\" cx=\"" << px(first.x) << "\" cy=\"" << py(first.y)
      << "\" r=\"5\" fill=\"black\"/>\n";

  svg << "<polyline class=\"path\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < log.rows.size(); ++i) svg << (i ? " " : "") << px(log.rows[i].x) << ',' << py(log.rows[i].y);
  svg << "\"/>\n";

  // Arrows at up to eight evenly spaced steps; the heading used at row i is
  // the one recorded on row i + 1.
  const std::size_t steps = log.rows.size() - 1;
  const std::size_t every = std::max<std::size_t>(1, (steps + 7) / 8);
  const double arrow = 0.6 * scale;
  auto line = [&](const EpisodeRow& r, double vx, double vy, const char* colour) {
    svg << "<line class=\"arrow-" << colour << "\" x1=\"" << px(r.x) << "\" y1=\"" << py(r.y) << "\" x2=\""
        << num((r.x - b.x_min) * scale + arrow * vx, "%.6f") << "\" y2=\"" << num((b.y_max - r.y) * scale - arrow * vy, "%.6f")
        << "\" stroke=\"" << colour << "\" stroke-width=\"2\" marker-end=\"url(#head-" << colour << ")\"/>\n";
  };
  for (std::size_t i = 0; i < steps; i += every) {
    const auto& r = log.rows[i];
    const double heading = log.rows[i + 1].heading;
    const double s = env.swim_ratio * env.u_inf;
    const double sx = s * std::cos(heading), sy = s * std::sin(heading);
    const auto f = sample(*env.grid, r.t, r.x, r.y);
    const double fx = f.valid ? f.u : 0.0, fy = f.valid ? f.v : 0.0;
    line(r, sx, sy, "red");
    line(r, fx, fy, "blue");
    line(r, sx + fx, sy + fy, "green");
  }
  svg << "</svg>\n";
  return svg.str();
}

void render_trajectory(const EpisodeLog& log, const EnvConfig& env, const std::filesystem::path& path) {
  write_text_file(path, trajectory_svg(log, env));
}

Json metric_to_json(const MetricReport& m) {
  if (!std::isfinite(m.value)) throw std::domain_error("metric '" + m.name + "' is not finite");
  return Json{{"name", m.name}, {"value", m.value}, {"config_hash", m.config_hash}, {"seed", m.seed}};
}

std::uint64_t config_hash(const Json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricReport>& metrics) {
  std::string text;
  for (const auto& m : metrics) text += metric_to_json(m).dump() + '\n';
  write_text_file(path, text);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace pir
