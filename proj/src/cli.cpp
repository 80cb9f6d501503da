#include "pir/cli.hpp"

#include "pir/envsim.hpp"
#include "pir/evalkit.hpp"
#include "pir/flowfield.hpp"
#include "pir/pir.hpp"
#include "pir/sac.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace pir::cli {

namespace fs = std::filesystem;

namespace {

/// Bad config, bad flag or missing input file: exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Rect rect_from(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("a region must be [x_min, x_max, y_min, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Json flow_defaults() {
  const VortexStreetParams v;
  return Json{{"kind", "vortex_street"},
              {"path", ""},
              {"nx", v.nx},
              {"ny", v.ny},
              {"nt", v.nt},
              {"nu", v.nu},
              {"rho", v.rho},
              {"dt", 0.1},
              {"u", 0.0},
              {"v", 0.0},
              {"u_inf", v.u_inf},
              {"cylinder_radius", v.cylinder_radius},
              {"shed_period", v.shed_period},
              {"vortex_strength", v.vortex_strength},
              {"x_min", v.x_min},
              {"x_max", v.x_max},
              {"y_min", v.y_min},
              {"y_max", v.y_max},
              {"steps_per_period", v.steps_per_period}};
}

Json pir_defaults() {
  const PirArch a;
  const PirTrainConfig t;
  const DatasetConfig d;
  const LatentProtocol p;
  return Json{
      {"method", "pir"},
      {"model", ""},
      {"arch",
       {{"d_z", a.d_z}, {"point_hidden", a.point_hidden}, {"feature_width", a.feature_width},
        {"decoder_hidden", a.decoder_hidden}}},
      {"train",
       {{"gamma_pde", t.gamma_pde},
        {"n_collocation", t.n_collocation},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr_encoder", t.lr_encoder},
        {"lr_decoder", t.lr_decoder},
        {"lr_final_ratio", t.lr_final_ratio},
        {"max_steps", t.max_steps}}},
      {"dataset",
       {{"window", 10},
        {"stride", 1},
        {"max_windows", 0},
        {"region", nullptr},
        {"input_fraction", d.input_fraction},
        {"scenario", scenario_to_json(d.scenario)}}},
      {"eval",
       {{"pde_points", 64},
        {"sensor_count", p.sensor_count},
        {"window", p.window},
        {"length", p.length},
        {"start", p.start},
        {"degraded_drop", p.degraded_drop}}}};
}

Json env_defaults() {
  Json e = env_config_to_json(EnvConfig{});
  e.erase("seed");  // the run seed drives the environment
  e.erase("sensors");  // set by whether an encoder is used
  return e;
}

void check_known(const Json& doc, const Json& defaults, const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const auto& d = defaults.at(key);
    if (d.is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + path + "' must be an object");
      check_known(value, d, path);
    }
  }
}

void deep_merge(Json& into, const Json& from) {
  for (const auto& [key, value] : from.items()) {
    if (value.is_object() && into.contains(key) && into.at(key).is_object())
      deep_merge(into.at(key), value);
    else
      into[key] = value;
  }
}

std::uint64_t parse_seed(const Json& j) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  throw ConfigError("seed must be a non-negative 64-bit integer");
}

fs::path existing(const Json& config, const std::string& section, const std::string& key, const char* what) {
  const auto p = config.at(section).at(key).get<std::string>();
  if (p.empty()) throw ConfigError(section + "." + key + " must name " + what);
  if (!fs::exists(p)) throw ConfigError(section + "." + key + ": no such file '" + p + "'");
  return p;
}

FlowGrid make_grid(const Json& f) {
  const auto kind = f.at("kind").get<std::string>();
  if (kind == "file") return read_ffgrid(f.at("path").get<std::string>());
  if (kind == "taylor_green")
    return gen_taylor_green(f.at("nx").get<int>(), f.at("ny").get<int>(), f.at("nt").get<int>(),
                            f.at("nu").get<double>(), f.at("rho").get<double>(), f.at("dt").get<double>());
  if (kind == "uniform")
    return gen_uniform_flow(f.at("u").get<double>(), f.at("v").get<double>(), f.at("x_min").get<double>(),
                            f.at("x_max").get<double>(), f.at("y_min").get<double>(), f.at("y_max").get<double>(),
                            f.at("nx").get<int>(), f.at("ny").get<int>(), f.at("rho").get<double>());
  if (kind == "vortex_street") {
    VortexStreetParams v;
    v.nx = f.at("nx").get<int>();
    v.ny = f.at("ny").get<int>();
    v.nt = f.at("nt").get<int>();
    v.u_inf = f.at("u_inf").get<double>();
    v.cylinder_radius = f.at("cylinder_radius").get<double>();
    v.shed_period = f.at("shed_period").get<double>();
    v.vortex_strength = f.at("vortex_strength").get<double>();
    v.nu = f.at("nu").get<double>();
    v.rho = f.at("rho").get<double>();
    v.x_min = f.at("x_min").get<double>();
    v.x_max = f.at("x_max").get<double>();
    v.y_min = f.at("y_min").get<double>();
    v.y_max = f.at("y_max").get<double>();
    v.steps_per_period = f.at("steps_per_period").get<int>();
    return gen_vortex_street(v);
  }
  throw ConfigError("flow.kind must be taylor_green, vortex_street, uniform or file, got '" + kind + "'");
}

PirArch arch_from(const Json& j) {
  PirArch a;
  a.d_z = j.at("d_z").get<int>();
  a.point_hidden = j.at("point_hidden").get<std::vector<int>>();
  a.feature_width = j.at("feature_width").get<int>();
  a.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
  return a;
}

PirTrainConfig train_from(const Json& j, std::uint64_t seed) {
  PirTrainConfig t;
  t.gamma_pde = j.at("gamma_pde").get<double>();
  t.n_collocation = j.at("n_collocation").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.lr_encoder = j.at("lr_encoder").get<double>();
  t.lr_decoder = j.at("lr_decoder").get<double>();
  t.lr_final_ratio = j.at("lr_final_ratio").get<double>();
  t.max_steps = j.at("max_steps").get<int>();
  t.seed = seed;
  if (t.epochs < 1) throw ConfigError("pir.train.epochs must be >= 1");
  if (t.max_steps < 0) throw ConfigError("pir.train.max_steps must be >= 0");
  if (!(t.lr_final_ratio > 0)) throw ConfigError("pir.train.lr_final_ratio must be > 0");
  return t;
}

/// Resolved config plus the metrics a command reports.
struct Run {
  Json config;
  fs::path outdir;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;
  std::vector<MetricReport> metrics;

  void metric(const std::string& name, double value) { metrics.push_back({name, value, hash, seed}); }
};

struct DatasetPlan {
  DatasetConfig cfg;
  int window = 10, stride = 1, max_windows = 0;
};

DatasetPlan dataset_from(const Json& j) {
  DatasetPlan d;
  d.window = j.at("window").get<int>();
  d.stride = j.at("stride").get<int>();
  d.max_windows = j.at("max_windows").get<int>();
  if (!j.at("region").is_null()) d.cfg.region = rect_from(j.at("region"));
  d.cfg.input_fraction = j.at("input_fraction").get<double>();
  d.cfg.scenario = scenario_from_json(j.at("scenario"));
  d.cfg.scenario.validate();
  if (d.window < 2) throw ConfigError("pir.dataset.window must be >= 2");
  if (d.stride < 1) throw ConfigError("pir.dataset.stride must be >= 1");
  if (d.max_windows < 0) throw ConfigError("pir.dataset.max_windows must be >= 0");
  return d;
}

std::vector<PirSample> make_dataset(const FlowGrid& grid, const DatasetPlan& plan, std::uint64_t seed) {
  auto windows = slice_trajectories(grid, plan.window, plan.stride);
  if (plan.max_windows > 0 && static_cast<int>(windows.size()) > plan.max_windows)
    windows.resize(static_cast<std::size_t>(plan.max_windows));
  return build_dataset(grid, windows, plan.cfg, seed);
}

LatentProtocol protocol_from(const Json& j, const DatasetPlan& plan) {
  LatentProtocol p;
  p.sensor_count = j.at("sensor_count").get<int>();
  p.window = j.at("window").get<int>();
  p.length = j.at("length").get<int>();
  p.start = j.at("start").get<int>();
  p.degraded_drop = j.at("degraded_drop").get<std::array<double, kNumModalities>>();
  p.region = plan.cfg.region;
  p.validate();
  return p;
}

EnvConfig env_from(const Run& r, const FlowGrid& grid) {
  EnvConfig e = env_config_from_json(r.config.at("env"));
  e.grid = std::make_shared<FlowGrid>(grid);
  e.seed = r.seed;
  e.validate();
  return e;
}

std::optional<PirModel> encoder_from(const Run& r) {
  if (!r.config.at("rl").at("use_encoder").get<bool>()) return std::nullopt;
  return pir_from_json(read_json_file(existing(r.config, "pir", "model", "a trained PIR model")));
}

void finish(Run& r, std::ostream& out) {
  write_metrics(r.outdir / "metrics.jsonl", r.metrics);
  for (const auto& m : r.metrics) out << m.name << " = " << fmt(m.value) << '\n';
}

// ---- commands ----

void flow_gen(Run& r, std::ostream& out) {
  const auto grid = make_grid(r.config.at("flow"));
  write_ffgrid(grid, r.outdir / "flow.ffgrid");
  double umax = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) umax = std::max(umax, std::hypot(grid.u[i], grid.v[i]));
  r.metric("grid_points", static_cast<double>(grid.size()));
  r.metric("max_speed", umax);
  out << "wrote " << (r.outdir / "flow.ffgrid").string() << '\n';
}

void flow_info(Run& r, std::ostream& out) {
  const auto path = existing(r.config, "flow", "path", "an FFGRID file");
  const auto grid = read_ffgrid(path);
  const Json info{{"nx", grid.nx}, {"ny", grid.ny}, {"nt", grid.nt}, {"x0", grid.x0}, {"y0", grid.y0},
                  {"dx", grid.dx}, {"dy", grid.dy}, {"t0", grid.t0}, {"dt", grid.dt}, {"nu", grid.nu},
                  {"rho", grid.rho}, {"periodic_t", grid.periodic_t}};
  write_json_file(r.outdir / "info.json", info);
  r.metric("grid_points", static_cast<double>(grid.size()));
  out << info.dump() << '\n';
}

void pir_train(Run& r, std::ostream& out) {
  const auto& pc = r.config.at("pir");
  const auto method = pc.at("method").get<std::string>();
  if (method != "pir" && method != "ae") throw ConfigError("pir.method must be 'pir' or 'ae'");
  const auto arch = arch_from(pc.at("arch"));
  const auto tc = train_from(pc.at("train"), derive_seed(r.seed, 3));
  const auto plan = dataset_from(pc.at("dataset"));
  const auto grid = make_grid(r.config.at("flow"));

  const auto data = make_dataset(grid, plan, derive_seed(r.seed, 1));
  const Rect region = plan.cfg.region.value_or(Rect::of_grid(grid));
  const CoordBox box{region.x_min, region.x_max, region.y_min, region.y_max, data.front().t_span};
  const auto init = PirModel::create(arch, box, derive_seed(r.seed, 2));
  const double pde0 = mean_pde_loss(init, data, tc.n_collocation, grid.nu, grid.rho, derive_seed(r.seed, 4));
  const auto res = method == "pir" ? train_pir(data, init, tc, grid.nu, grid.rho)
                                   : train_autoencoder(data, init, tc, grid.nu, grid.rho);

  write_json_file(r.outdir / "model.json", pir_to_json(res.model));
  std::string hist = "epoch,data_loss,pde_loss\n";
  for (const auto& h : res.history) hist += std::to_string(h.epoch) + ',' + fmt(h.data_loss) + ',' + fmt(h.pde_loss) + '\n';
  write_text_file(r.outdir / "history.csv", hist);

  r.metric("windows", static_cast<double>(data.size()));
  r.metric("final_data_loss", res.history.back().data_loss);
  r.metric("final_pde_loss", res.history.back().pde_loss);
  r.metric("initial_mean_pde_loss", pde0);
  r.metric("mean_pde_loss",
           mean_pde_loss(res.model, data, tc.n_collocation, grid.nu, grid.rho, derive_seed(r.seed, 4)));
  r.metric("heldout_rmse", heldout_rmse(res.model, data));
  out << "trained " << method << " on " << data.size() << " windows; wrote " << (r.outdir / "model.json").string()
      << '\n';
}

void pir_eval(Run& r, std::ostream& out) {
  const auto& pc = r.config.at("pir");
  const auto model = pir_from_json(read_json_file(existing(r.config, "pir", "model", "a trained PIR model")));
  const auto plan = dataset_from(pc.at("dataset"));
  const auto proto = protocol_from(pc.at("eval"), plan);
  const int pde_points = pc.at("eval").at("pde_points").get<int>();
  const auto grid = make_grid(r.config.at("flow"));

  // Fresh sensor draws, so the held-out points were never seen in training.
  const auto data = make_dataset(grid, plan, derive_seed(r.seed, 5));
  const auto streams = latent_streams(model, grid, proto, derive_seed(r.seed, 6));
  std::string csv = "t,stream";
  for (int i = 0; i < model.d_z; ++i) csv += ",z" + std::to_string(i);
  csv += '\n';
  for (const auto* s : {&streams.full, &streams.degraded})
    for (std::size_t k = 0; k < s->size(); ++k) {
      csv += fmt(s->t[k]) + (s == &streams.full ? ",full" : ",degraded");
      for (Eigen::Index i = 0; i < s->z[k].size(); ++i) csv += ',' + fmt(s->z[k](i));
      csv += '\n';
    }
  write_text_file(r.outdir / "latents.csv", csv);

  r.metric("heldout_rmse", heldout_rmse(model, data));
  r.metric("mean_pde_loss", mean_pde_loss(model, data, pde_points, grid.nu, grid.rho, derive_seed(r.seed, 4)));
  r.metric("error_consist", error_consist(streams.full, streams.degraded));
  r.metric("error_freq", error_freq(streams.degraded, streams.reference));
  out << "evaluated " << (r.outdir / "latents.csv").string() << '\n';
}

void rl_train(Run& r, std::ostream& out) {
  const auto& rc = r.config.at("rl");
  const RlTrainConfig tc{.episodes = rc.at("episodes").get<int>(), .checkpoints = 100, .seed = r.seed};
  if (tc.episodes < 100) throw ConfigError("rl.episodes must be >= 100 to hold 100 checkpoints");
  const auto sac = sac_config_from_json(r.config.at("sac"));
  sac.validate();
  const int eval_n = r.config.at("eval").at("episodes").get<int>();
  if (eval_n < 1) throw ConfigError("eval.episodes must be >= 1");
  const auto encoder = encoder_from(r);
  const auto grid = make_grid(r.config.at("flow"));
  const auto env = env_from(r, grid);
  const PirModel* enc = encoder ? &*encoder : nullptr;

  auto res = train_rl(env, enc, SacAgent::create(state_dim_for(enc), sac, derive_seed(r.seed, 7)), tc);

  fs::create_directories(r.outdir / "checkpoints");
  for (std::size_t k = 0; k < res.checkpoints.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%03zu.json", k);
    write_json_file(r.outdir / "checkpoints" / name, policy_checkpoint_to_json(res.checkpoints[k]));
  }
  write_json_file(r.outdir / "agent.json", sac_agent_to_json(res.agent));
  std::string hist = "episode,return,success,steps\n";
  int tail_success = 0;
  for (const auto& h : res.history) {
    hist += std::to_string(h.episode) + ',' + fmt(h.ret) + ',' + (h.success ? "1" : "0") + ',' +
            std::to_string(h.steps) + '\n';
    if (h.episode >= tc.episodes - 100) tail_success += h.success ? 1 : 0;
  }
  write_text_file(r.outdir / "history.csv", hist);

  const auto rep = evaluate_policy(env, enc, deterministic_policy(res.agent.policy), eval_n,
                                   r.config.at("eval").at("seed").get<std::uint64_t>(), sac.delta_scale);
  r.metric("checkpoints", static_cast<double>(res.checkpoints.size()));
  r.metric("train_success_last100", tail_success / 100.0);
  r.metric("eval_mean_return", rep.mean_return);
  r.metric("eval_success_rate", rep.success_rate);
  out << "trained " << tc.episodes << " episodes; wrote " << res.checkpoints.size() << " checkpoints\n";
}

Policy policy_from(const Run& r, double& delta_scale) {
  const auto p = r.config.at("eval").at("policy").get<std::string>();
  if (p == "oracle") return aim_at_target_policy();
  const auto ck = policy_checkpoint_from_json(read_json_file(existing(r.config, "eval", "policy", "a policy checkpoint")));
  delta_scale = ck.delta_scale;
  return deterministic_policy(ck.policy);
}

void rl_eval(Run& r, std::ostream& out) {
  const auto& ec = r.config.at("eval");
  const int n = ec.at("episodes").get<int>();
  if (n < 1) throw ConfigError("eval.episodes must be >= 1");
  double scale = r.config.at("sac").at("delta_scale").get<double>();
  const auto policy = policy_from(r, scale);
  const auto encoder = encoder_from(r);
  const auto grid = make_grid(r.config.at("flow"));
  const auto env = env_from(r, grid);
  const auto rep = evaluate_policy(env, encoder ? &*encoder : nullptr, policy, n, ec.at("seed").get<std::uint64_t>(),
                                   scale);
  write_json_file(r.outdir / "eval.json", eval_report_to_json(rep));
  r.metric("mean_return", rep.mean_return);
  r.metric("success_rate", rep.success_rate);
  out << "evaluated " << n << " episodes\n";
}

void report_curve(Run& r, std::ostream& out) {
  const auto& ec = r.config.at("eval");
  const auto dir = existing(r.config, "eval", "checkpoints", "a checkpoint directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("eval.checkpoints: no .json checkpoints in '" + dir.string() + "'");
  const int n = ec.at("episodes").get<int>();
  const int window = ec.at("smooth_window").get<int>();
  if (n < 1) throw ConfigError("eval.episodes must be >= 1");
  if (window < 1 || window % 2 == 0) throw ConfigError("eval.smooth_window must be a positive odd integer");
  const auto encoder = encoder_from(r);
  const auto grid = make_grid(r.config.at("flow"));
  const auto env = env_from(r, grid);

  const auto rows = return_curve(files, env, encoder ? &*encoder : nullptr, n, ec.at("seed").get<std::uint64_t>());
  write_text_file(r.outdir / "curve.csv", curve_csv(rows));
  std::vector<double> ret, succ;
  for (const auto& row : rows) {
    ret.push_back(row.mean_return);
    succ.push_back(row.success_rate);
  }
  const auto sr = smooth(ret, window), ss = smooth(succ, window);
  std::string csv = "checkpoint,episode,mean_return_smooth,success_rate_smooth\n";
  for (std::size_t k = 0; k < rows.size(); ++k)
    csv += std::to_string(rows[k].checkpoint) + ',' + std::to_string(rows[k].episode) + ',' + fmt(sr[k]) + ',' +
           fmt(ss[k]) + '\n';
  write_text_file(r.outdir / "curve_smooth.csv", csv);
  r.metric("curve_rows", static_cast<double>(rows.size()));
  r.metric("final_mean_return", rows.back().mean_return);
  r.metric("final_success_rate", rows.back().success_rate);
  out << "wrote " << rows.size() << " curve rows\n";
}

void report_render(Run& r, std::ostream& out) {
  const auto& ec = r.config.at("eval");
  const auto encoder = encoder_from(r);
  const auto grid = make_grid(r.config.at("flow"));
  auto env_cfg = env_from(r, grid);
  env_cfg.sensors = encoder.has_value();
  EpisodeLog log;
  const auto log_path = ec.at("log").get<std::string>();
  if (!log_path.empty()) {
    log = EpisodeLog::read_csv(existing(r.config, "eval", "log", "an episode CSV"));
  } else {
    double scale = r.config.at("sac").at("delta_scale").get<double>();
    const auto policy = policy_from(r, scale);
    NavEnv env(env_cfg);
    StepResult res = env.reset(ec.at("episode_seed").get<std::uint64_t>());
    while (!res.done)
      res = env.step(std::clamp(policy(make_state(encoder ? &*encoder : nullptr, res.sensor_obs, res.delta, scale),
                                       res.delta),
                                -std::numbers::pi, std::numbers::pi));
    log = env.log();
    write_episode(log, env_cfg, r.outdir / "episode.csv");
  }
  render_trajectory(log, env_cfg, r.outdir / "trajectory.svg");
  double ret = 0;
  for (std::size_t k = 1; k < log.rows.size(); ++k) ret += log.rows[k].reward;
  r.metric("episode_return", ret);
  r.metric("episode_steps", static_cast<double>(log.rows.size() - 1));
  r.metric("episode_success", log.rows.back().outcome == Outcome::Success ? 1.0 : 0.0);
  out << "wrote " << (r.outdir / "trajectory.svg").string() << '\n';
}

using Command = void (*)(Run&, std::ostream&);

}  // namespace

Json default_run_config() {
  return Json{{"seed", 0},
              {"outdir", "run"},
              {"flow", flow_defaults()},
              {"pir", pir_defaults()},
              {"env", env_defaults()},
              {"sac", sac_config_to_json(SacConfig{})},
              {"rl", {{"episodes", 1000}, {"use_encoder", false}}},
              {"eval",
               {{"episodes", 20},
                {"seed", 0},
                {"policy", ""},
                {"checkpoints", ""},
                {"smooth_window", 11},
                {"episode_seed", 0},
                {"log", ""}}}};
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &config;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("--set: bad key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("--set: '" + key.substr(0, dot) + "' is not an object");
    pos = dot + 1;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physics-informed flow representations and navigation"};
  app.require_subcommand(1);
  std::string config_path, outdir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->add_option("--set", sets, "dotted.key=value override (repeatable)");
    sub->add_option("--outdir", outdir, "output directory");
    sub->add_option("--seed", seed, "run seed");
  };
  struct Leaf {
    CLI::App* app;
    Command fn;
  };
  std::vector<Leaf> leaves;
  auto group = [&](const char* name, const char* help,
                   std::initializer_list<std::tuple<const char*, const char*, Command>> subs) {
    auto* g = app.add_subcommand(name, help);
    g->require_subcommand(1);
    for (const auto& [n, h, fn] : subs) {
      auto* s = g->add_subcommand(n, h);
      common(s);
      leaves.push_back({s, fn});
    }
  };
  group("flow", "ground-truth flow fields",
        {{"gen", "generate a grid and write flow.ffgrid", flow_gen},
         {"info", "describe an FFGRID file", flow_info}});
  group("pir", "representation learning",
        {{"train", "train a PIR (or auto-encoder) model", pir_train},
         {"eval", "held-out, physics and latent metrics", pir_eval}});
  group("rl", "navigation agents",
        {{"train", "train SAC, saving 100 policy checkpoints", rl_train},
         {"eval", "evaluate one policy", rl_eval}});
  group("report", "figures and curves",
        {{"curve", "return curve over saved checkpoints", report_curve},
         {"render", "SVG of one episode", report_render}});

  std::vector<std::string> argv_store{"pirctl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }
  Command fn = nullptr;
  for (const auto& l : leaves)
    if (l.app->parsed()) fn = l.fn;
  if (!fn) {
    err << app.help();
    return kExitConfig;
  }

  Run r;
  try {
    if (!fs::exists(config_path)) throw ConfigError("config file not found: '" + config_path + "'");
    Json user;
    try {
      user = read_json_file(config_path);
    } catch (const std::exception& e) {
      throw ConfigError(config_path + ": " + e.what());
    }
    if (!user.is_object()) throw ConfigError(config_path + ": top level must be an object");
    r.config = default_run_config();
    check_known(user, r.config, "");
    deep_merge(r.config, user);
    for (const auto& s : sets) {
      Json patch = Json::object();
      apply_override(patch, s);
      check_known(patch, r.config, "");
      deep_merge(r.config, patch);
    }
    if (seed) r.config["seed"] = *seed;
    if (!outdir.empty()) r.config["outdir"] = outdir;
    r.seed = parse_seed(r.config.at("seed"));
    r.outdir = r.config.at("outdir").get<std::string>();
    if (r.outdir.empty()) throw ConfigError("outdir must not be empty");
    if (r.config.at("flow").at("kind") == "file") existing(r.config, "flow", "path", "an FFGRID file");
    Json hashed = r.config;
    hashed.erase("outdir");
    r.hash = config_hash(hashed);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    fs::create_directories(r.outdir);
    write_json_file(r.outdir / "resolved.json", r.config);
    fn(r, out);
    finish(r, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pir::cli
