#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tta/experiment.hpp"
#include "tta/version.hpp"

using namespace tta;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.n_per_class = 60;
  cfg.num_classes = 4;
  cfg.spurious_strength = 0.5;
  cfg.dataset_seed = 5;
  cfg.pretrain.epochs = 30;
  cfg.pretrain.batch_size = 32;
  cfg.pretrain.seed = 2;
  cfg.batch_size = 16;
  cfg.seed = 9;
  cfg.corruptions = {{CorruptionKind::gaussian_noise, 5}};
  cfg.strategies = {Strategy::no_adapt, Strategy::etage};
  cfg.out_dir = out_dir;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("corruption run strings parse strictly") {
  CorruptionRun r = parse_corruption_run("gaussian_blur:3");
  REQUIRE(r.kind == CorruptionKind::gaussian_blur);
  REQUIRE(r.severity == 3);
  REQUIRE_THROWS_AS(parse_corruption_run("gaussian_blur"), ConfigError);
  REQUIRE_THROWS_AS(parse_corruption_run("fog:3"), ConfigError);
  REQUIRE_THROWS_AS(parse_corruption_run("contrast:0"), ConfigError);
  REQUIRE_THROWS_AS(parse_corruption_run("contrast:six"), ConfigError);
}

TEST_CASE("unknown config keys are rejected by name") {
  json j = {{"dataset", {{"n_per_class", 10}, {"classes", 4}}}};
  try {
    config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("dataset.classes") != std::string::npos);
  }
  json top = {{"datasets", json::object()}};
  REQUIRE_THROWS_AS(config_from_json(top), ConfigError);
  json bad_type = {{"adapt", {{"learning_rate", "fast"}}}};
  REQUIRE_THROWS_AS(config_from_json(bad_type), ConfigError);
}

TEST_CASE("config round-trips through json and hashes reproducibly") {
  ExperimentConfig cfg = tiny_config("out");
  cfg.tau_ent = 0.42;
  cfg.grad_mode = "absolute";
  cfg.tau_grad = 1.25;
  json j = config_to_json(cfg);
  ExperimentConfig back = config_from_json(j);
  REQUIRE(config_to_json(back) == j);
  REQUIRE(config_hash(back) == config_hash(cfg));
  Thresholds th = back.resolve_thresholds();
  REQUIRE(th.tau_ent == 0.42);
  REQUIRE(th.grad_mode == Thresholds::GradMode::absolute);
  REQUIRE(th.tau_grad == 1.25);
}

TEST_CASE("default tau_ent resolves to 0.4 ln C") {
  ExperimentConfig cfg = tiny_config("out");
  REQUIRE_FALSE(cfg.tau_ent.has_value());
  REQUIRE(cfg.resolve_thresholds().tau_ent ==
          Catch::Approx(0.4 * std::log(4.0)));
  cfg.grad_mode = "sometimes";
  REQUIRE_THROWS_AS(cfg.resolve_thresholds(), ConfigError);
}

TEST_CASE("report files round-trip and reject schema mismatches") {
  TempDir dir("tta_report_rt");
  RunReport rep;
  rep.seed = 3;
  rep.config = config_to_json(tiny_config("x"));
  rep.config_hash = "0011223344556677";
  RunResultEntry e;
  e.kind = CorruptionKind::contrast;
  e.severity = 2;
  e.strategy = Strategy::tent;
  e.accuracy = 0.75;
  e.trace_file = "traces/contrast_s2_tent.jsonl";
  rep.results.push_back(e);
  const std::string path = dir.str() + "/report.json";
  save_report(rep, path);
  RunReport back = load_report(path);
  REQUIRE(back.seed == 3);
  REQUIRE(back.results.size() == 1);
  REQUIRE(back.results[0].strategy == Strategy::tent);
  REQUIRE(back.results[0].accuracy == 0.75);

  json j = report_to_json(rep);
  j["schema_version"] = 99;
  try {
    report_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& err) {
    REQUIRE(std::string(err.what()).find("migrate") != std::string::npos);
  }
}

TEST_CASE("single-cell table reduces to the cell plus an equal average") {
  RunReport rep;
  RunResultEntry e;
  e.kind = CorruptionKind::pixelate;
  e.severity = 4;
  e.strategy = Strategy::etage;
  e.accuracy = 0.625;
  rep.results.push_back(e);
  ComparisonTable t = format_report({rep});
  REQUIRE(t.text.find("62.50*") != std::string::npos);
  REQUIRE(t.text.find("average") != std::string::npos);
  // the average column repeats the single cell
  std::istringstream is(t.text);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  REQUIRE(row.find("etage") == 0);
  REQUIRE(row.find("62.50*") != row.rfind("62.50*"));
}

TEST_CASE("best and second-best markers") {
  RunReport rep;
  auto add = [&rep](Strategy s, double acc) {
    RunResultEntry e;
    e.kind = CorruptionKind::gaussian_noise;
    e.severity = 5;
    e.strategy = s;
    e.accuracy = acc;
    rep.results.push_back(e);
  };
  add(Strategy::no_adapt, 0.5);
  add(Strategy::tent, 0.65);
  add(Strategy::etage, 0.6);
  ComparisonTable t = format_report({rep});
  REQUIRE(t.text.find("65.00*") != std::string::npos);
  REQUIRE(t.text.find("60.00~") != std::string::npos);
  REQUIRE(t.csv.find("tent,0.65000000000000002,best") != std::string::npos);
}

TEST_CASE("the committed golden report regenerates byte-identical tables") {
  ComparisonTable t =
      cmd_report({std::string(TTA_TEST_DATA_DIR) + "/golden_report.json"}, "");
  REQUIRE(t.text == slurp(std::string(TTA_TEST_DATA_DIR) + "/golden_table.txt"));
  REQUIRE(t.csv == slurp(std::string(TTA_TEST_DATA_DIR) + "/golden_table.csv"));
}

TEST_CASE("pretrain then run produces a complete, reproducible report") {
  TempDir dir("tta_e2e");
  ExperimentConfig cfg = tiny_config(dir.str() + "/out1");
  const std::string ckpt = dir.str() + "/ckpt.bin";

  REQUIRE_THROWS_AS(cmd_run(cfg, ckpt), ConfigError);  // checkpoint missing

  TrainingCurve curve = cmd_pretrain(cfg, ckpt);
  REQUIRE(curve.epoch_loss.size() == 30);
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(ckpt + ".curve.json"));

  RunReport rep = cmd_run(cfg, ckpt);
  REQUIRE(rep.results.size() == 2);
  REQUIRE(fs::exists(cfg.out_dir + "/report.json"));
  for (const auto& e : rep.results) {
    REQUIRE(std::isfinite(e.accuracy));
    REQUIRE(std::isfinite(e.ece));
    REQUIRE(std::isfinite(e.mce));
    REQUIRE(std::isfinite(e.brier));
    REQUIRE(std::isfinite(e.auroc));
    REQUIRE(e.accuracy >= 0.0);
    REQUIRE(e.accuracy <= 1.0);
    REQUIRE(fs::exists(cfg.out_dir + "/" + e.trace_file));
    if (e.strategy == Strategy::no_adapt) REQUIRE(e.mean_selection_rate == 0.0);
  }

  // embedded config hash is recomputable
  RunReport loaded = load_report(cfg.out_dir + "/report.json");
  REQUIRE(config_hash(config_from_json(loaded.config)) == loaded.config_hash);

  // byte-identical on a second run with the identical config and seed
  const std::string rep1 = slurp(cfg.out_dir + "/report.json");
  cmd_run(cfg, ckpt);
  const std::string rep2 = slurp(cfg.out_dir + "/report.json");
  REQUIRE(rep1 == rep2);

  // dump_samples writes one diagnostic CSV per run
  ExperimentConfig cfg3 = cfg;
  cfg3.out_dir = dir.str() + "/out3";
  cfg3.dump_samples = true;
  cfg3.strategies = {Strategy::etage};
  cmd_run(cfg3, ckpt);
  REQUIRE(fs::exists(cfg3.out_dir + "/samples/gaussian_noise_s5_etage.csv"));
}

TEST_CASE("sweep at size 64 matches cmd_run's accuracy for the same seed") {
  TempDir dir("tta_sweep");
  ExperimentConfig cfg = tiny_config(dir.str() + "/out");
  cfg.batch_size = 64;
  cfg.strategies = {Strategy::no_adapt};
  const std::string ckpt = dir.str() + "/ckpt.bin";
  cmd_pretrain(cfg, ckpt);
  RunReport rep = cmd_run(cfg, ckpt);
  auto rows = cmd_sweep_batchsize(cfg, {64}, ckpt);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].batch_size == 64);
  REQUIRE(rows[0].accuracy == rep.results[0].accuracy);
  REQUIRE(fs::exists(cfg.out_dir + "/sweep.json"));
  REQUIRE(fs::exists(cfg.out_dir + "/sweep.csv"));
  REQUIRE_THROWS_AS(cmd_sweep_batchsize(cfg, {}, ckpt), ConfigError);
}

TEST_CASE("reset_per_corruption controls model carry-over between runs") {
  TempDir dir("tta_reset");
  ExperimentConfig cfg = tiny_config(dir.str() + "/out_reset");
  cfg.corruptions = {{CorruptionKind::gaussian_noise, 5},
                     {CorruptionKind::gaussian_noise, 5}};
  cfg.strategies = {Strategy::no_adapt, Strategy::etage};
  const std::string ckpt = dir.str() + "/ckpt.bin";
  cmd_pretrain(cfg, ckpt);
  RunReport fresh = cmd_run(cfg, ckpt);

  ExperimentConfig cont = cfg;
  cont.reset_per_corruption = false;
  cont.out_dir = dir.str() + "/out_cont";
  RunReport carried = cmd_run(cont, ckpt);

  // identical streams: the first run of each strategy matches either way;
  // no_adapt never adapts so its second run matches too
  REQUIRE(fresh.results[0].accuracy == carried.results[0].accuracy);
  REQUIRE(fresh.results[1].accuracy == carried.results[1].accuracy);
  REQUIRE(fresh.results[2].accuracy == carried.results[2].accuracy);
  // repeated runs get distinct trace files
  REQUIRE(fresh.results[3].trace_file != fresh.results[2].trace_file);
  // with reset on, rerunning the same corruption repeats the run exactly
  REQUIRE(slurp(fresh.config["run"]["out_dir"].get<std::string>() + "/" +
                fresh.results[3].trace_file) ==
          slurp(fresh.config["run"]["out_dir"].get<std::string>() + "/" +
                fresh.results[2].trace_file));
  // with carry-over, the adapted model enters the second run
  REQUIRE(slurp(cont.out_dir + "/" + carried.results[3].trace_file) !=
          slurp(cont.out_dir + "/" + carried.results[2].trace_file));
}

TEST_CASE("config files load with strict keys via load_config_file") {
  TempDir dir("tta_cfgfile");
  const std::string path = dir.str() + "/cfg.json";
  {
    std::ofstream os(path);
    os << R"({"dataset": {"n_per_class": 12, "num_classes": 3},
              "adapt": {"batch_size": 8, "seed": 4},
              "run": {"corruptions": ["contrast:2"], "strategies": ["tent"]}})";
  }
  ExperimentConfig cfg = load_config_file(path);
  REQUIRE(cfg.n_per_class == 12);
  REQUIRE(cfg.num_classes == 3);
  REQUIRE(cfg.batch_size == 8);
  REQUIRE(cfg.corruptions.size() == 1);
  REQUIRE(cfg.corruptions[0].kind == CorruptionKind::contrast);
  REQUIRE(cfg.strategies == std::vector<Strategy>{Strategy::tent});
  REQUIRE_THROWS_AS(load_config_file(dir.str() + "/missing.json"), ConfigError);
  {
    std::ofstream os(path);
    os << "{ not json";
  }
  REQUIRE_THROWS_AS(load_config_file(path), ConfigError);
}

TEST_CASE("the CLI binary wires subcommands and exit codes") {
  TempDir dir("tta_cli_smoke");
  const std::string cli = TTA_CLI_PATH;
  auto run = [](const std::string& cmd) { return std::system(cmd.c_str()) / 256; };

  REQUIRE(run(cli + " --help > /dev/null 2>&1") == 0);
  REQUIRE(run(cli + " run --no-such-flag > /dev/null 2>&1") == 2);
  REQUIRE(run(cli + " run --checkpoint /tmp/nope.bin --out " + dir.str() +
              " > /dev/null 2>&1") == 2);

  // end to end: pretrain, run, report
  const std::string cfg_path = dir.str() + "/cfg.json";
  {
    std::ofstream os(cfg_path);
    os << R"({"dataset": {"n_per_class": 60, "seed": 5},
              "pretrain": {"epochs": 30, "batch_size": 32, "seed": 2},
              "adapt": {"batch_size": 16, "seed": 9},
              "run": {"corruptions": ["gaussian_noise:5"],
                      "strategies": ["no_adapt", "etage"],
                      "out_dir": ")" << dir.str() << R"(/out"}})";
  }
  REQUIRE(run(cli + " pretrain --config " + cfg_path + " --checkpoint " +
              dir.str() + "/ckpt.bin > /dev/null") == 0);
  REQUIRE(run(cli + " run --config " + cfg_path + " --checkpoint " + dir.str() +
              "/ckpt.bin > /dev/null") == 0);
  REQUIRE(fs::exists(dir.str() + "/out/report.json"));
  REQUIRE(run(cli + " report " + dir.str() + "/out/report.json > " + dir.str() +
              "/table.out") == 0);
  std::string table = slurp(dir.str() + "/table.out");
  REQUIRE(table.find("gaussian_noise:5") != std::string::npos);
  REQUIRE(table.find("etage") != std::string::npos);

  // environment variables act as flag defaults (TTA_ prefix)
  REQUIRE(run("TTA_SEED=123 " + cli + " run --config " + cfg_path +
              " --checkpoint " + dir.str() + "/ckpt.bin --out " + dir.str() +
              "/out_env --strategy no_adapt > /dev/null") == 0);
  RunReport env_rep = load_report(dir.str() + "/out_env/report.json");
  REQUIRE(env_rep.seed == 123);
}
