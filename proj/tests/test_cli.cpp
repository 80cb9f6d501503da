#include "pir/cli.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using pir::Json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result pirctl(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = pir::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "pir_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const Json& doc) {
  const auto p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(dir)) names.insert(fs::relative(e.path(), dir).string());
  return names;
}

// Small enough that every command finishes in a second or two.
Json tiny_config() {
  return Json{{"seed", 5},
              {"flow", {{"kind", "taylor_green"}, {"nx", 12}, {"ny", 12}, {"nt", 12}, {"dt", 0.1}}},
              {"pir",
               {{"arch", {{"d_z", 3}, {"point_hidden", {8}}, {"feature_width", 8}, {"decoder_hidden", {8}}}},
                {"train", {{"epochs", 2}, {"n_collocation", 8}, {"batch_size", 2}}},
                {"dataset", {{"window", 4}, {"stride", 2}, {"max_windows", 4}, {"scenario", {{"sensor_count", 6}}}}},
                {"eval", {{"sensor_count", 4}, {"window", 3}, {"length", 8}}}}}};
}

Json tiny_rl_config() {
  return Json{{"seed", 2},
              {"flow", {{"kind", "uniform"}, {"u", 0.0}, {"v", 0.0}, {"x_min", 0}, {"x_max", 10}, {"y_min", -4}, {"y_max", 4}}},
              {"env", {{"max_steps", 8}, {"obs_history", 2}, {"scenario", {{"sensor_count", 4}}}}},
              {"sac", {{"hidden", {8}}, {"batch_size", 16}, {"warmup", 32}}},
              {"rl", {{"episodes", 100}}},
              {"eval", {{"episodes", 3}}}};
}

}  // namespace

TEST_CASE("flow gen writes the grid, the resolved config and metrics") {
  const auto dir = fresh_dir("flowgen");
  const auto cfg = write_config(dir, tiny_config());
  const auto out = dir / "out";
  const auto r = pirctl({"flow", "gen", "--config", cfg.string(), "--outdir", out.string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "flow.ffgrid"));
  CHECK(fs::exists(out / "resolved.json"));
  CHECK(fs::exists(out / "metrics.jsonl"));

  // The echo is itself a config reproducing the run.
  const auto again = dir / "again";
  CHECK(pirctl({"flow", "gen", "--config", (out / "resolved.json").string(), "--outdir", again.string()}).code == 0);
  CHECK(slurp(out / "metrics.jsonl") == slurp(again / "metrics.jsonl"));
  CHECK(slurp(out / "flow.ffgrid") == slurp(again / "flow.ffgrid"));

  const auto info = dir / "info";
  CHECK(pirctl({"flow", "info", "--config", cfg.string(), "--set", "flow.kind=file", "--set",
                "flow.path=" + (out / "flow.ffgrid").string(), "--outdir", info.string()})
            .code == 0);
  CHECK(pir::read_json_file(info / "info.json").at("nx") == 12);
}

TEST_CASE("config errors exit 1 and name the problem") {
  const auto dir = fresh_dir("errors");
  auto r = pirctl({"pir", "train", "--config", (dir / "missing.json").string(), "--outdir", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.json") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o"));

  r = pirctl({"pir", "fly"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = pirctl({"flow", "gen", "--config", "x.json", "--bogus"});
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
  CHECK(pirctl({}).code == 1);

  const auto cfg = write_config(dir, tiny_config());
  r = pirctl({"flow", "gen", "--config", cfg.string(), "--set", "flow.colour=3", "--outdir", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("flow.colour") != std::string::npos);
  r = pirctl({"flow", "gen", "--config", cfg.string(), "--set", "flow.nx=\"many\"", "--outdir", (dir / "o").string()});
  CHECK(r.code == 1);
  r = pirctl({"pir", "eval", "--config", cfg.string(), "--set", "pir.model=nowhere.json", "--outdir",
              (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("nowhere.json") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{\"flow\": ";
  r = pirctl({"flow", "gen", "--config", (dir / "broken.json").string(), "--outdir", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("broken.json") != std::string::npos);

  const auto rl = write_config(dir, tiny_rl_config());
  CHECK(pirctl({"rl", "train", "--config", rl.string(), "--set", "rl.episodes=50", "--outdir", (dir / "o").string()})
            .code == 1);
}

TEST_CASE("runtime failures exit 2") {
  const auto dir = fresh_dir("runtime");
  std::ofstream(dir / "junk.ffgrid") << "not a grid";
  Json cfg = tiny_config();
  cfg["flow"] = {{"kind", "file"}, {"path", (dir / "junk.ffgrid").string()}};
  const auto r = pirctl({"flow", "info", "--config", write_config(dir, cfg).string(), "--outdir", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("--set parses JSON values and falls back to strings") {
  Json c = Json::object();
  pir::cli::apply_override(c, "a.b.c=3");
  pir::cli::apply_override(c, "a.list=[1,2]");
  pir::cli::apply_override(c, "name=vortex");
  pir::cli::apply_override(c, "flag=true");
  CHECK(c.at("a").at("b").at("c") == 3);
  CHECK(c.at("a").at("list").size() == 2);
  CHECK(c.at("name") == "vortex");
  CHECK(c.at("flag") == true);
  CHECK_THROWS(pir::cli::apply_override(c, "novalue"));
  CHECK_THROWS(pir::cli::apply_override(c, "a..b=1"));
}

TEST_CASE("every command is byte-deterministic and writes only under its outdir") {
  const auto dir = fresh_dir("pipeline");
  const auto pir_cfg = dir / "pir.json";
  std::ofstream(pir_cfg) << tiny_config().dump();
  auto rl_doc = tiny_rl_config();
  const auto rl_cfg = dir / "rl.json";
  std::ofstream(rl_cfg) << rl_doc.dump();

  auto twice = [&](std::vector<std::string> cmd, const std::string& name, std::vector<std::string> files) {
    for (const char* tag : {"a", "b"}) {
      auto args = cmd;
      args.push_back("--outdir");
      args.push_back((dir / (name + "_" + tag)).string());
      const auto before = listing(dir);
      const auto r = pirctl(args);
      INFO(name << ": " << r.err);
      REQUIRE(r.code == 0);
      // Only the new outdir appeared.
      for (const auto& f : listing(dir))
        if (!before.count(f)) CHECK(f.rfind(name + "_" + tag, 0) == 0);
    }
    files.push_back("metrics.jsonl");
    for (const auto& f : files) {
      INFO(name << "/" << f);
      CHECK(slurp(dir / (name + "_a") / f) == slurp(dir / (name + "_b") / f));
    }
  };

  twice({"flow", "gen", "--config", pir_cfg.string()}, "flowgen", {"flow.ffgrid"});
  twice({"pir", "train", "--config", pir_cfg.string()}, "pirtrain", {"history.csv", "model.json"});
  const auto model = (dir / "pirtrain_a" / "model.json").string();
  twice({"pir", "eval", "--config", pir_cfg.string(), "--set", "pir.model=" + model}, "pireval", {"latents.csv"});
  twice({"pir", "train", "--config", pir_cfg.string(), "--set", "pir.method=ae"}, "aetrain", {"history.csv"});

  twice({"rl", "train", "--config", rl_cfg.string()}, "rltrain", {"history.csv", "agent.json"});
  int cks = 0;
  for (const auto& e : fs::directory_iterator(dir / "rltrain_a" / "checkpoints")) cks += e.path().extension() == ".json";
  CHECK(cks == 100);
  const auto ck_dir = (dir / "rltrain_a" / "checkpoints").string();
  const auto policy = (dir / "rltrain_a" / "checkpoints" / "ckpt_099.json").string();
  twice({"rl", "eval", "--config", rl_cfg.string(), "--set", "eval.policy=" + policy}, "rleval", {"eval.json"});
  twice({"report", "curve", "--config", rl_cfg.string(), "--set", "eval.checkpoints=" + ck_dir, "--set",
         "eval.episodes=1"},
        "curve", {"curve.csv", "curve_smooth.csv"});
  const auto curve = slurp(dir / "curve_a" / "curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 101);
  twice({"report", "render", "--config", rl_cfg.string(), "--set", "eval.policy=oracle"}, "render",
        {"trajectory.svg", "episode.csv"});
  CHECK(slurp(dir / "render_a" / "trajectory.svg").rfind("<svg", 0) == 0);

  // An agent that sees the trained encoder's latent.
  twice({"rl", "train", "--config", rl_cfg.string(), "--set", "rl.use_encoder=true", "--set", "pir.model=" + model,
         "--set", "rl.episodes=100", "--set", "env.max_steps=4"},
        "rlenc", {"history.csv"});

  // Different seed, different bytes.
  const auto r = pirctl({"rl", "train", "--config", rl_cfg.string(), "--seed", "3", "--outdir", (dir / "rl_s3").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "rl_s3" / "history.csv") != slurp(dir / "rltrain_a" / "history.csv"));
}
