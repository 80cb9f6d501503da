#pragma once

// Physics-informed representation learner: a permutation-invariant encoder
// over sparse multi-modal observations, a coordinate decoder conditioned on
// the latent, the masked data loss, the incompressible Navier-Stokes residual
// loss, and two-loss training where the residual only reaches the decoder.

#include "pir/checkpoint.hpp"
#include "pir/flowfield.hpp"
#include "pir/observation.hpp"
#include "pir/tensorcore.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pir {

/// Maps physical coordinates onto [-1, 1]; t is measured from the window start.
struct CoordBox {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  double t_span = 1;

  double nx(double x) const { return 2.0 * (x - x_min) / (x_max - x_min) - 1.0; }
  double ny(double y) const { return 2.0 * (y - y_min) / (y_max - y_min) - 1.0; }
  double nt(double t_rel) const { return 2.0 * t_rel / t_span - 1.0; }
  double sx() const { return 2.0 / (x_max - x_min); }
  double sy() const { return 2.0 / (y_max - y_min); }
  double st() const { return 2.0 / t_span; }
};

struct PirArch {
  int d_z = 16;
  std::vector<int> point_hidden = {64};
  int feature_width = 64;
  std::vector<int> decoder_hidden = {64, 64, 64};
};

inline constexpr int kPointEncodingWidth = 9;

struct PirModel {
  Mlp<double> point_net;  // encoded point -> feature
  Mlp<double> head_net;   // pooled feature -> z
  Mlp<double> decoder;    // (z, x, y, t_rel) -> (u, v, p)
  int d_z = 0;
  CoordBox box;

  static PirModel create(const PirArch& arch, const CoordBox& box, std::uint64_t seed);
  void validate() const;
};

/// Encoder parameters are point_net and head_net; decoder is separate.
struct PirGrads {
  ParamSet<double> point, head, decoder;

  static PirGrads zeros_like(const PirModel& m);
};

VectorXd encode(const PirModel& model, const Observation& obs);
Eigen::Vector3d decode(const PirModel& model, const VectorXd& z, double t_rel, double x, double y);

/// Value and the t/x/y/xx/yy derivatives of one scalar field.
struct ScalarJet {
  double val = 0, t = 0, x = 0, y = 0, xx = 0, yy = 0;
};
struct FieldJet {
  ScalarJet u, v, p;
};

/// Momentum (x, y) and continuity residuals of the incompressible NSE.
std::array<double, 3> nse_residual(const FieldJet& f, double nu, double rho);

FieldJet decode_jet(const PirModel& model, const VectorXd& z, double t_rel, double x, double y);
std::array<double, 3> pde_residual(const PirModel& model, const VectorXd& z, double t_rel, double x, double y,
                                   double nu, double rho);

/// A collocation point (t_rel, x, y).
using Collocation = std::array<double, 3>;

double data_loss(const PirModel& model, const Observation& obs_in, const Observation& obs_target);
double pde_loss(const PirModel& model, const VectorXd& z, std::span<const Collocation> points, double nu, double rho);

/// Loss value; adds `weight * grad` into `grads` (encoder and decoder).
double data_loss_grad(const PirModel& model, const Observation& obs_in, const Observation& obs_target,
                      PirGrads& grads, double weight = 1.0);
/// Loss value; adds `weight * grad` into the decoder gradient only. z is a constant.
double pde_loss_grad(const PirModel& model, const VectorXd& z, std::span<const Collocation> points, double nu,
                     double rho, ParamSet<double>& decoder_grads, double weight = 1.0);

struct PirSample {
  Observation obs_in;
  Observation obs_target;
  int window_start = 0;
  double t_ref = 0;
  double t_span = 0;
  Rect region;  // spatial part of the collocation box
};

struct DatasetConfig {
  ScenarioSpec scenario;
  std::optional<Rect> region;  // sensor region; the whole grid when unset
  double input_fraction = 0.5;
};

/// Deterministic per seed. obs_in and obs_target split each window's readings.
std::vector<PirSample> build_dataset(const FlowGrid& grid, const std::vector<TrajectoryWindow>& windows,
                                     const DatasetConfig& cfg, std::uint64_t seed);

std::vector<Collocation> sample_collocation(const PirSample& sample, int n, Rng& rng);

struct PirTrainConfig {
  double gamma_pde = 1.0;
  int n_collocation = 64;
  int epochs = 100;
  int batch_size = 4;
  double lr_encoder = 1e-3;
  double lr_decoder = 1e-3;
  // Learning rates decay geometrically to lr * lr_final_ratio at the last step.
  double lr_final_ratio = 1.0;
  int max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 0;
};

struct PirHistoryRow {
  int epoch = 0;
  double data_loss = 0;
  double pde_loss = 0;
};

struct StepLosses {
  double data_loss = 0;
  double pde_loss = 0;
};

/// One optimizer per parameter block. Every step of train_pir goes through here.
class PirTrainer {
 public:
  PirTrainer(PirModel model, PirTrainConfig cfg, double nu, double rho);

  /// Both losses at the current parameters; encoder and decoder step on the
  /// data loss, and the decoder additionally on gamma times the PDE loss.
  StepLosses step(std::span<const PirSample* const> batch);
  /// Data loss only (the auto-encoder baseline). The PDE loss is still
  /// measured on the same collocation points but never applied.
  StepLosses autoencoder_step(std::span<const PirSample* const> batch);
  /// gamma * PDE loss applied to the decoder; the encoder is untouched.
  double pde_only_step(std::span<const PirSample* const> batch);

  void set_lr_scale(double s);
  const PirModel& model() const { return model_; }
  PirModel release() && { return std::move(model_); }
  std::int64_t steps() const { return steps_; }

 private:
  StepLosses run(std::span<const PirSample* const> batch, bool apply_data, bool apply_pde);

  PirModel model_;
  PirTrainConfig cfg_;
  double nu_, rho_;
  AdamState<double> opt_point_, opt_head_, opt_decoder_;
  Rng colloc_rng_;
  std::int64_t steps_ = 0;
};

struct PirTrainResult {
  PirModel model;
  std::vector<PirHistoryRow> history;
};

PirTrainResult train_pir(const std::vector<PirSample>& dataset, PirModel model, const PirTrainConfig& cfg,
                         double nu, double rho);
/// Same schedule with the PDE term never applied.
PirTrainResult train_autoencoder(const std::vector<PirSample>& dataset, PirModel model, const PirTrainConfig& cfg,
                                 double nu, double rho);

/// Mean PDE loss over `n_points` fresh collocation points per sample.
double mean_pde_loss(const PirModel& model, const std::vector<PirSample>& dataset, int n_points, double nu,
                     double rho, std::uint64_t seed);
/// Root mean square error over every observed target entry.
double heldout_rmse(const PirModel& model, const std::vector<PirSample>& dataset);

Json pir_to_json(const PirModel& model);
PirModel pir_from_json(const Json& doc);

}  // namespace pir
