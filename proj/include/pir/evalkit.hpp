#pragma once

// Evaluation protocol: latent consistency and spectral errors, return curves
// over saved policy checkpoints, smoothing, SVG trajectory plots and
// JSON-lines metric reports.

#include "pir/checkpoint.hpp"
#include "pir/envsim.hpp"
#include "pir/pir.hpp"
#include "pir/sac.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pir {

/// Latents of one trajectory at increasing, uniformly spaced times.
struct LatentSeries {
  std::vector<double> t;
  std::vector<VectorXd> z;

  std::size_t size() const { return z.size(); }
  void validate() const;
};

/// ||d - d'|| / ||d|| with d_t = ||z_t - z_0||^2 for t >= 1.
double error_consist(const LatentSeries& a, const LatentSeries& b);

/// Unit-energy averaged magnitude spectrum over bins 1..T/2 of each row of
/// `signals` (channels x T).
VectorXd magnitude_spectrum(const MatrixXd& signals);
/// Stack a latent series as a (d_z x T) matrix.
MatrixXd latent_matrix(const LatentSeries& s);
/// ||S_ref - S_z|| / ||S_ref|| between the normalized spectra.
double error_freq(const LatentSeries& latent, const MatrixXd& reference);

/// One fixed sensor layout read twice per latent: with every modality and with
/// modalities dropped per sensor. Latent k encodes grid frames
/// [start + k, start + k + window).
struct LatentProtocol {
  int sensor_count = 16;
  std::optional<Rect> region;  // whole grid when unset
  int window = 10;
  int length = 32;
  int start = 0;
  std::array<double, kNumModalities> degraded_drop{1.0 / 3, 1.0 / 3, 1.0 / 3};

  void validate() const;
};

struct LatentStreams {
  LatentSeries full, degraded;
  MatrixXd reference;  // (3 * sensors) x length: u, v, p at the sensors at each latent's first frame
};

LatentStreams latent_streams(const PirModel& model, const FlowGrid& grid, const LatentProtocol& protocol,
                             std::uint64_t seed);

/// Centered moving average; the window shrinks at the edges.
std::vector<double> smooth(std::span<const double> series, int window = 11);

struct CurveRow {
  int checkpoint = 0;
  int episode = 0;
  double mean_return = 0;
  double success_rate = 0;
};

/// Any policy evaluated like a checkpoint.
struct CurvePoint {
  int episode = 0;
  Policy policy;
  double delta_scale = 0.25;
};

std::vector<CurveRow> return_curve(const std::vector<CurvePoint>& points, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed);
std::vector<CurveRow> return_curve(const std::vector<PolicyCheckpoint>& checkpoints, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed);
/// Loads every checkpoint first; a bad file is reported by name.
std::vector<CurveRow> return_curve(const std::vector<std::filesystem::path>& files, const EnvConfig& env,
                                   const PirModel* encoder, int episodes, std::uint64_t seed);
std::string curve_csv(const std::vector<CurveRow>& rows);

/// Robot path, start and target markers and swim/flow/resultant arrows.
std::string trajectory_svg(const EpisodeLog& log, const EnvConfig& env);
void render_trajectory(const EpisodeLog& log, const EnvConfig& env, const std::filesystem::path& path);

struct MetricReport {
  std::string name;
  double value = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

Json metric_to_json(const MetricReport& m);
/// FNV-1a over the compact dump of `config`.
std::uint64_t config_hash(const Json& config);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricReport>& metrics);

/// Writes `text` to `path`, throwing with the path on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pir
