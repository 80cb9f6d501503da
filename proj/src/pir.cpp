#include "pir/pir.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pir {

namespace {

struct EncodeTrace {
  Trace<double> point;
  Trace<double> head;
};

MatrixXd point_encodings(const PirModel& m, const Observation& obs) {
  const auto n = static_cast<Eigen::Index>(obs.points.size());
  MatrixXd x(kPointEncodingWidth, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = obs.points[static_cast<std::size_t>(i)];
    x(0, i) = m.box.nt(p.t - obs.t_ref);
    x(1, i) = m.box.nx(p.x);
    x(2, i) = m.box.ny(p.y);
    for (int k = 0; k < kNumModalities; ++k) {
      x(3 + k, i) = p.mask[k] ? p.value[k] : 0.0;
      x(6 + k, i) = p.mask[k] ? 1.0 : 0.0;
    }
  }
  return x;
}

VectorXd encode_impl(const PirModel& m, const Observation& obs, EncodeTrace* trace) {
  if (obs.empty()) throw std::invalid_argument("encode: empty observation");
  const MatrixXd features = forward_batch(m.point_net, point_encodings(m, obs), trace ? &trace->point : nullptr);
  const MatrixXd pooled = features.rowwise().mean();
  return forward_batch(m.head_net, pooled, trace ? &trace->head : nullptr).col(0);
}

MatrixXd decoder_inputs(const PirModel& m, const VectorXd& z, const Observation& target) {
  const auto n = static_cast<Eigen::Index>(target.points.size());
  MatrixXd x(m.d_z + 3, n);
  x.topRows(m.d_z) = z.replicate(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = target.points[static_cast<std::size_t>(i)];
    x(m.d_z, i) = m.box.nx(p.x);
    x(m.d_z + 1, i) = m.box.ny(p.y);
    x(m.d_z + 2, i) = m.box.nt(p.t - target.t_ref);
  }
  return x;
}

Jet<double> decoder_jet_input(const PirModel& m, const VectorXd& z, std::span<const Collocation> points) {
  const auto n = static_cast<int>(points.size());
  Jet<double> jet(m.d_z + 3, n);
  auto val = jet.value();
  val.topRows(m.d_z) = z.replicate(1, n);
  for (int i = 0; i < n; ++i) {
    const auto& [t, x, y] = points[static_cast<std::size_t>(i)];
    val(m.d_z, i) = m.box.nx(x);
    val(m.d_z + 1, i) = m.box.ny(y);
    val(m.d_z + 2, i) = m.box.nt(t);
  }
  // Inputs are affine in the physical coordinates, so the seeds carry the scale.
  jet.seed(m.d_z, kSeedX, m.box.sx());
  jet.seed(m.d_z + 1, kSeedY, m.box.sy());
  jet.seed(m.d_z + 2, kSeedT, m.box.st());
  return jet;
}

void check_z(const PirModel& m, const VectorXd& z) {
  if (z.size() != m.d_z)
    throw std::invalid_argument("decoder: latent has size " + std::to_string(z.size()) + ", expected " +
                                std::to_string(m.d_z));
}

double data_loss_impl(const PirModel& m, const Observation& in, const Observation& target, PirGrads* grads,
                      double weight, VectorXd* z_out) {
  const std::size_t count = target.observed_entries();
  if (target.empty() || count == 0) throw std::invalid_argument("data_loss: target has no observed entries");
  EncodeTrace et;
  const VectorXd z = encode_impl(m, in, grads ? &et : nullptr);
  if (z_out) *z_out = z;
  Trace<double> dt;
  const MatrixXd y = forward_batch(m.decoder, decoder_inputs(m, z, target), grads ? &dt : nullptr);

  const auto n = static_cast<Eigen::Index>(target.points.size());
  MatrixXd resid = MatrixXd::Zero(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = target.points[static_cast<std::size_t>(i)];
    for (int k = 0; k < kNumModalities; ++k)
      if (p.mask[k]) resid(k, i) = y(k, i) - p.value[k];
  }
  const double inv = 1.0 / static_cast<double>(count);
  const double loss = resid.squaredNorm() * inv;
  if (!grads) return loss;

  const auto bd = backward(m.decoder, dt, MatrixXd(2.0 * weight * inv * resid));
  grads->decoder += bd.grads;
  const VectorXd gz = bd.input_grad.topRows(m.d_z).rowwise().sum();
  const auto bh = backward(m.head_net, et.head, MatrixXd(gz));
  grads->head += bh.grads;
  const auto np = static_cast<Eigen::Index>(in.points.size());
  const MatrixXd gfeat = bh.input_grad.replicate(1, np) / static_cast<double>(np);
  grads->point += backward(m.point_net, et.point, gfeat).grads;
  return loss;
}

double pde_loss_impl(const PirModel& m, const VectorXd& z, std::span<const Collocation> points, double nu,
                     double rho, ParamSet<double>* decoder_grads, double weight) {
  if (points.empty()) throw std::invalid_argument("pde_loss: empty collocation set");
  check_z(m, z);
  const int n = static_cast<int>(points.size());
  Trace<double> trace;
  const auto out = forward_jet(m.decoder, decoder_jet_input(m, z, points), decoder_grads ? &trace : nullptr);

  const auto V = out.value().array();
  const auto Dt = out.d1(kSeedT).array();
  const auto Dx = out.d1(kSeedX).array();
  const auto Dy = out.d1(kSeedY).array();
  const auto Dxx = out.d2(0).array();
  const auto Dyy = out.d2(1).array();
  const Eigen::ArrayXXd u = V.row(0), v = V.row(1);
  const Eigen::ArrayXXd ux = Dx.row(0), uy = Dy.row(0), vx = Dx.row(1), vy = Dy.row(1);
  const Eigen::ArrayXXd r1 =
      Dt.row(0) + u * ux + v * uy + Dx.row(2) / rho - nu * (Dxx.row(0) + Dyy.row(0));
  const Eigen::ArrayXXd r2 =
      Dt.row(1) + u * vx + v * vy + Dy.row(2) / rho - nu * (Dxx.row(1) + Dyy.row(1));
  const Eigen::ArrayXXd r3 = ux + vy;
  const double loss = (r1.square() + r2.square() + r3.square()).sum() / n;
  if (!decoder_grads) return loss;

  const double c = 2.0 * weight / n;
  const Eigen::ArrayXXd e1 = c * r1, e2 = c * r2, e3 = c * r3;
  Jet<double> g(3, n);
  g.value().row(0) = (e1 * ux + e2 * vx).matrix();
  g.value().row(1) = (e1 * uy + e2 * vy).matrix();
  g.d1(kSeedT).row(0) = e1.matrix();
  g.d1(kSeedT).row(1) = e2.matrix();
  g.d1(kSeedX).row(0) = (e1 * u + e3).matrix();
  g.d1(kSeedX).row(1) = (e2 * u).matrix();
  g.d1(kSeedX).row(2) = (e1 / rho).matrix();
  g.d1(kSeedY).row(0) = (e1 * v).matrix();
  g.d1(kSeedY).row(1) = (e2 * v + e3).matrix();
  g.d1(kSeedY).row(2) = (e2 / rho).matrix();
  for (int j = 0; j < kNumSecond; ++j) {
    g.d2(j).row(0) = (-nu * e1).matrix();
    g.d2(j).row(1) = (-nu * e2).matrix();
  }
  *decoder_grads += backward(m.decoder, trace, g.stacked()).grads;
  return loss;
}

std::vector<int> concat_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

PirModel PirModel::create(const PirArch& arch, const CoordBox& box, std::uint64_t seed) {
  if (arch.d_z < 1 || arch.feature_width < 1) throw std::invalid_argument("PirArch: sizes must be positive");
  if (!(box.x_max > box.x_min) || !(box.y_max > box.y_min) || !(box.t_span > 0))
    throw std::invalid_argument("PirModel: empty coordinate box");
  Rng rng(seed);
  PirModel m;
  m.d_z = arch.d_z;
  m.box = box;
  m.point_net = Mlp<double>::xavier(concat_sizes(kPointEncodingWidth, arch.point_hidden, arch.feature_width),
                                    Activation::Tanh, rng);
  m.head_net = Mlp<double>::xavier({arch.feature_width, arch.d_z}, Activation::Tanh, rng);
  m.decoder = Mlp<double>::xavier(concat_sizes(arch.d_z + 3, arch.decoder_hidden, 3), Activation::Tanh, rng);
  return m;
}

void PirModel::validate() const {
  point_net.validate();
  head_net.validate();
  decoder.validate();
  if (point_net.input_size() != kPointEncodingWidth) throw std::invalid_argument("PirModel: point_net input must be 9");
  if (head_net.input_size() != point_net.output_size() || head_net.output_size() != d_z)
    throw std::invalid_argument("PirModel: head_net shape mismatch");
  if (decoder.input_size() != d_z + 3 || decoder.output_size() != 3)
    throw std::invalid_argument("PirModel: decoder must map d_z+3 inputs to 3 outputs");
}

PirGrads PirGrads::zeros_like(const PirModel& m) {
  return {m.point_net.params().zeros_like(), m.head_net.params().zeros_like(), m.decoder.params().zeros_like()};
}

VectorXd encode(const PirModel& model, const Observation& obs) { return encode_impl(model, obs, nullptr); }

Eigen::Vector3d decode(const PirModel& model, const VectorXd& z, double t_rel, double x, double y) {
  check_z(model, z);
  VectorXd in(model.d_z + 3);
  in << z, model.box.nx(x), model.box.ny(y), model.box.nt(t_rel);
  return forward(model.decoder, in);
}

std::array<double, 3> nse_residual(const FieldJet& f, double nu, double rho) {
  const auto& u = f.u;
  const auto& v = f.v;
  const auto& p = f.p;
  return {u.t + u.val * u.x + v.val * u.y + p.x / rho - nu * (u.xx + u.yy),
          v.t + u.val * v.x + v.val * v.y + p.y / rho - nu * (v.xx + v.yy), u.x + v.y};
}

FieldJet decode_jet(const PirModel& model, const VectorXd& z, double t_rel, double x, double y) {
  check_z(model, z);
  const std::array<Collocation, 1> pt{Collocation{t_rel, x, y}};
  const auto out = forward_jet(model.decoder, decoder_jet_input(model, z, pt));
  auto row = [&](int r) {
    return ScalarJet{out.value()(r, 0), out.d1(kSeedT)(r, 0), out.d1(kSeedX)(r, 0),
                     out.d1(kSeedY)(r, 0), out.d2(0)(r, 0),    out.d2(1)(r, 0)};
  };
  return {row(0), row(1), row(2)};
}

std::array<double, 3> pde_residual(const PirModel& model, const VectorXd& z, double t_rel, double x, double y,
                                   double nu, double rho) {
  return nse_residual(decode_jet(model, z, t_rel, x, y), nu, rho);
}

double data_loss(const PirModel& model, const Observation& obs_in, const Observation& obs_target) {
  return data_loss_impl(model, obs_in, obs_target, nullptr, 1.0, nullptr);
}

double pde_loss(const PirModel& model, const VectorXd& z, std::span<const Collocation> points, double nu,
                double rho) {
  return pde_loss_impl(model, z, points, nu, rho, nullptr, 1.0);
}

double data_loss_grad(const PirModel& model, const Observation& obs_in, const Observation& obs_target,
                      PirGrads& grads, double weight) {
  return data_loss_impl(model, obs_in, obs_target, &grads, weight, nullptr);
}

double pde_loss_grad(const PirModel& model, const VectorXd& z, std::span<const Collocation> points, double nu,
                     double rho, ParamSet<double>& decoder_grads, double weight) {
  return pde_loss_impl(model, z, points, nu, rho, &decoder_grads, weight);
}

std::vector<PirSample> build_dataset(const FlowGrid& grid, const std::vector<TrajectoryWindow>& windows,
                                     const DatasetConfig& cfg, std::uint64_t seed) {
  if (windows.empty()) throw std::invalid_argument("build_dataset: no trajectory windows");
  cfg.scenario.validate();
  if (!(cfg.input_fraction > 0 && cfg.input_fraction < 1))
    throw std::invalid_argument("build_dataset: input_fraction must be in (0,1)");
  const Rect region = cfg.region.value_or(Rect::of_grid(grid));
  if (!region.inside(Rect::of_grid(grid))) throw std::invalid_argument("build_dataset: region exceeds the grid");
  std::vector<PirSample> out;
  out.reserve(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    if (win.length < 2 || win.start < 0 || win.start + win.length > grid.nt)
      throw std::invalid_argument("build_dataset: window outside the grid");
    Rng rng(derive_seed(seed, w));
    SensorRig rig(cfg.scenario, region, rng);
    std::vector<double> times;
    for (int k = 0; k < win.length; ++k) times.push_back(grid.t_at(win.start + k));
    std::uniform_real_distribution<double> cx(region.x_min, region.x_max), cy(region.y_min, region.y_max);
    const double rx = cx(rng), ry = cy(rng);
    const Observation all = rig.observe(grid, times.front(), times, rx, ry, rng);
    if (all.points.size() < 2) throw std::runtime_error("build_dataset: window produced fewer than two readings");

    PirSample s;
    s.window_start = win.start;
    s.t_ref = times.front();
    s.t_span = times.back() - times.front();
    s.region = region;
    s.obs_in.t_ref = s.obs_target.t_ref = s.t_ref;
    std::bernoulli_distribution to_input(cfg.input_fraction);
    for (const auto& p : all.points) (to_input(rng) ? s.obs_in : s.obs_target).points.push_back(p);
    if (s.obs_in.empty()) {
      s.obs_in.points.push_back(s.obs_target.points.back());
      s.obs_target.points.pop_back();
    } else if (s.obs_target.empty()) {
      s.obs_target.points.push_back(s.obs_in.points.back());
      s.obs_in.points.pop_back();
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Collocation> sample_collocation(const PirSample& s, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_collocation: need at least one point");
  std::uniform_real_distribution<double> ut(0.0, s.t_span), ux(s.region.x_min, s.region.x_max),
      uy(s.region.y_min, s.region.y_max);
  std::vector<Collocation> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) {
    p[0] = ut(rng);
    p[1] = ux(rng);
    p[2] = uy(rng);
  }
  return pts;
}

PirTrainer::PirTrainer(PirModel model, PirTrainConfig cfg, double nu, double rho)
    : model_(std::move(model)),
      cfg_(cfg),
      nu_(nu),
      rho_(rho),
      opt_point_(AdamState<double>::for_params(model_.point_net.params(), AdamConfig{.lr = cfg.lr_encoder})),
      opt_head_(AdamState<double>::for_params(model_.head_net.params(), AdamConfig{.lr = cfg.lr_encoder})),
      opt_decoder_(AdamState<double>::for_params(model_.decoder.params(), AdamConfig{.lr = cfg.lr_decoder})),
      colloc_rng_(derive_seed(cfg.seed, 0xC011)) {
  model_.validate();
  if (cfg_.gamma_pde < 0) throw std::invalid_argument("PirTrainConfig: gamma_pde must be >= 0");
  if (cfg_.n_collocation < 1) throw std::invalid_argument("PirTrainConfig: n_collocation must be >= 1");
  if (cfg_.batch_size < 1) throw std::invalid_argument("PirTrainConfig: batch_size must be >= 1");
}

void PirTrainer::set_lr_scale(double s) {
  opt_point_.config.lr = cfg_.lr_encoder * s;
  opt_head_.config.lr = cfg_.lr_encoder * s;
  opt_decoder_.config.lr = cfg_.lr_decoder * s;
}

StepLosses PirTrainer::run(std::span<const PirSample* const> batch, bool apply_data, bool apply_pde) {
  if (batch.empty()) throw std::invalid_argument("PirTrainer: empty batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  PirGrads data = PirGrads::zeros_like(model_);
  ParamSet<double> physics = model_.decoder.params().zeros_like();
  StepLosses losses;
  for (const PirSample* s : batch) {
    VectorXd z;
    losses.data_loss += weight * data_loss_impl(model_, s->obs_in, s->obs_target, apply_data ? &data : nullptr,
                                                 weight, &z);
    const auto colloc = sample_collocation(*s, cfg_.n_collocation, colloc_rng_);
    losses.pde_loss += weight * pde_loss_impl(model_, z, colloc, nu_, rho_, apply_pde ? &physics : nullptr, weight);
  }
  if (!std::isfinite(losses.data_loss) || !std::isfinite(losses.pde_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << steps_ << " (data " << losses.data_loss << ", pde " << losses.pde_loss
        << ") for windows starting at";
    for (const PirSample* s : batch) msg << ' ' << s->window_start;
    throw std::runtime_error(msg.str());
  }

  if (apply_data) {
    adam_step(model_.point_net.params(), data.point, opt_point_, "encoder.point");
    adam_step(model_.head_net.params(), data.head, opt_head_, "encoder.head");
  }
  ParamSet<double> decoder_grad = apply_data ? std::move(data.decoder) : model_.decoder.params().zeros_like();
  if (apply_pde && cfg_.gamma_pde != 0.0) {
    physics *= cfg_.gamma_pde;
    decoder_grad += physics;
  }
  adam_step(model_.decoder.params(), decoder_grad, opt_decoder_, "decoder");
  ++steps_;
  return losses;
}

StepLosses PirTrainer::step(std::span<const PirSample* const> batch) { return run(batch, true, true); }

StepLosses PirTrainer::autoencoder_step(std::span<const PirSample* const> batch) { return run(batch, true, false); }

double PirTrainer::pde_only_step(std::span<const PirSample* const> batch) { return run(batch, false, true).pde_loss; }

namespace {

PirTrainResult train_impl(const std::vector<PirSample>& dataset, PirModel model, const PirTrainConfig& cfg, double nu,
                          double rho, bool with_pde) {
  if (dataset.empty()) throw std::invalid_argument("train_pir: empty dataset");
  if (cfg.epochs < 1) throw std::invalid_argument("train_pir: epochs must be >= 1");
  PirTrainer trainer(std::move(model), cfg, nu, rho);
  const int bs = cfg.batch_size;
  const int per_epoch = static_cast<int>((dataset.size() + bs - 1) / bs);
  std::int64_t total = static_cast<std::int64_t>(per_epoch) * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min<std::int64_t>(total, cfg.max_steps);

  Rng shuffle_rng(derive_seed(cfg.seed, 0x5417));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  PirTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs && trainer.steps() < total; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    PirHistoryRow row{epoch, 0, 0};
    int batches = 0;
    for (std::size_t b = 0; b < order.size() && trainer.steps() < total; b += bs) {
      std::vector<const PirSample*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) batch.push_back(&dataset[order[k]]);
      trainer.set_lr_scale(std::pow(cfg.lr_final_ratio, static_cast<double>(trainer.steps()) / total));
      const auto l = with_pde ? trainer.step(batch) : trainer.autoencoder_step(batch);
      row.data_loss += l.data_loss;
      row.pde_loss += l.pde_loss;
      ++batches;
    }
    row.data_loss /= batches;
    row.pde_loss /= batches;
    result.history.push_back(row);
  }
  result.model = std::move(trainer).release();
  return result;
}

}  // namespace

PirTrainResult train_pir(const std::vector<PirSample>& dataset, PirModel model, const PirTrainConfig& cfg, double nu,
                         double rho) {
  return train_impl(dataset, std::move(model), cfg, nu, rho, true);
}

PirTrainResult train_autoencoder(const std::vector<PirSample>& dataset, PirModel model, const PirTrainConfig& cfg,
                                 double nu, double rho) {
  return train_impl(dataset, std::move(model), cfg, nu, rho, false);
}

double mean_pde_loss(const PirModel& model, const std::vector<PirSample>& dataset, int n_points, double nu,
                     double rho, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("mean_pde_loss: empty dataset");
  double acc = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto pts = sample_collocation(dataset[i], n_points, rng);
    acc += pde_loss(model, encode(model, dataset[i].obs_in), pts, nu, rho);
  }
  return acc / static_cast<double>(dataset.size());
}

double heldout_rmse(const PirModel& model, const std::vector<PirSample>& dataset) {
  double sq = 0;
  std::size_t n = 0;
  for (const auto& s : dataset) {
    const VectorXd z = encode(model, s.obs_in);
    const MatrixXd y = forward_batch(model.decoder, decoder_inputs(model, z, s.obs_target));
    for (std::size_t i = 0; i < s.obs_target.points.size(); ++i) {
      const auto& p = s.obs_target.points[i];
      for (int k = 0; k < kNumModalities; ++k)
        if (p.mask[k]) {
          const double e = y(k, static_cast<Eigen::Index>(i)) - p.value[k];
          sq += e * e;
          ++n;
        }
    }
  }
  if (n == 0) throw std::invalid_argument("heldout_rmse: no observed target entries");
  return std::sqrt(sq / static_cast<double>(n));
}

Json pir_to_json(const PirModel& m) {
  return Json{{"format", "pir-ckpt"},
              {"version", 1},
              {"role", "pir"},
              {"d_z", m.d_z},
              {"box",
               {{"x_min", m.box.x_min},
                {"x_max", m.box.x_max},
                {"y_min", m.box.y_min},
                {"y_max", m.box.y_max},
                {"t_span", m.box.t_span}}},
              {"nets", {{"point", mlp_to_json(m.point_net)}, {"head", mlp_to_json(m.head_net)},
                        {"decoder", mlp_to_json(m.decoder)}}}};
}

PirModel pir_from_json(const Json& doc) {
  if (doc.value("format", "") != "pir-ckpt" || doc.value("role", "") != "pir")
    throw std::runtime_error("not a PIR model checkpoint");
  PirModel m;
  m.d_z = doc.at("d_z").get<int>();
  const auto& b = doc.at("box");
  m.box = {b.at("x_min").get<double>(), b.at("x_max").get<double>(), b.at("y_min").get<double>(),
           b.at("y_max").get<double>(), b.at("t_span").get<double>()};
  const auto& nets = doc.at("nets");
  m.point_net = mlp_from_json(nets.at("point"));
  m.head_net = mlp_from_json(nets.at("head"));
  m.decoder = mlp_from_json(nets.at("decoder"));
  m.validate();
  return m;
}

}  // namespace pir
