// Experiment CLI: pretrain a source classifier, run corruption x strategy
// grids, sweep batch sizes, and render comparison tables from saved reports.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime/divergence error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tta/experiment.hpp"
#include "tta/version.hpp"

namespace {

struct CliFlags {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  std::vector<std::string> strategies;
  std::vector<std::string> corruptions;
  std::string sizes_csv;
  std::vector<std::string> report_files;
  bool dump_samples = false;
};

void add_common_options(CLI::App* cmd, CliFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file")
      ->envname("TTA_CONFIG");
  cmd->add_option("--seed", f.seed, "master seed override")->envname("TTA_SEED");
  cmd->add_option("--out", f.out_dir, "output directory")->envname("TTA_OUT");
}

bool flag_given(const CLI::App* cmd, const std::string& name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

tta::ExperimentConfig build_config(const CLI::App* cmd, const CliFlags& f) {
  tta::ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = tta::load_config_file(f.config_path);
  if (flag_given(cmd, "--seed")) cfg.seed = f.seed;
  if (flag_given(cmd, "--out")) cfg.out_dir = f.out_dir;
  if (flag_given(cmd, "--batch-size")) cfg.batch_size = f.batch_size;
  if (!f.strategies.empty()) {
    cfg.strategies.clear();
    for (const auto& s : f.strategies) {
      try {
        cfg.strategies.push_back(tta::strategy_from_string(s));
      } catch (const tta::ParameterError& e) {
        throw tta::ConfigError(e.what());
      }
    }
  }
  if (!f.corruptions.empty()) {
    cfg.corruptions.clear();
    for (const auto& c : f.corruptions)
      cfg.corruptions.push_back(tta::parse_corruption_run(c));
  }
  if (flag_given(cmd, "--dump-samples")) cfg.dump_samples = f.dump_samples;
  return cfg;
}

std::string checkpoint_path(const CLI::App* cmd, const CliFlags& f,
                            const tta::ExperimentConfig& cfg) {
  if (flag_given(cmd, "--checkpoint")) return f.checkpoint;
  return cfg.out_dir + "/checkpoint.bin";
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> sizes;
  std::string cur;
  for (char ch : csv + ",") {
    if (ch == ',') {
      if (!cur.empty()) {
        try {
          sizes.push_back(static_cast<std::size_t>(std::stoul(cur)));
        } catch (const std::exception&) {
          throw tta::ConfigError("bad batch size '" + cur + "' in --sizes");
        }
        if (sizes.back() == 0)
          throw tta::ConfigError("batch sizes must be >= 1");
        cur.clear();
      }
    } else {
      cur += ch;
    }
  }
  if (sizes.empty()) throw tta::ConfigError("--sizes must list at least one size");
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online test-time adaptation experiments (entropy + gradient "
               "norm + PLPD sample selection)"};
  app.set_version_flag("--version", std::string(tta::kVersion));
  app.require_subcommand(1);

  CliFlags pre_f, run_f, sweep_f, report_f;

  CLI::App* pre = app.add_subcommand(
      "pretrain", "train the source classifier and write a checkpoint");
  add_common_options(pre, pre_f);
  pre->add_option("--checkpoint", pre_f.checkpoint, "checkpoint output path")
      ->envname("TTA_CHECKPOINT");

  CLI::App* run = app.add_subcommand(
      "run", "run the corruption x strategy grid from a checkpoint");
  add_common_options(run, run_f);
  run->add_option("--checkpoint", run_f.checkpoint, "checkpoint to adapt from")
      ->envname("TTA_CHECKPOINT");
  run->add_option("--strategy", run_f.strategies,
                  "strategy (repeatable): no_adapt|tent|entropy_plpd|etage");
  run->add_option("--corruption", run_f.corruptions,
                  "corruption KIND:SEVERITY (repeatable)");
  run->add_option("--batch-size", run_f.batch_size, "stream batch size")
      ->envname("TTA_BATCH_SIZE");
  run->add_flag("--dump-samples", run_f.dump_samples,
                "write per-sample diagnostic CSVs");

  CLI::App* sweep = app.add_subcommand(
      "sweep-batchsize", "accuracy per (strategy, batch size) on one corruption");
  add_common_options(sweep, sweep_f);
  sweep->add_option("--checkpoint", sweep_f.checkpoint, "checkpoint to adapt from")
      ->envname("TTA_CHECKPOINT");
  sweep->add_option("--strategy", sweep_f.strategies, "strategy (repeatable)");
  sweep->add_option("--corruption", sweep_f.corruptions,
                    "corruption KIND:SEVERITY (first one is swept)");
  sweep->add_option("--sizes", sweep_f.sizes_csv,
                    "comma-separated batch sizes")
      ->default_val("1,2,4,8,16,32,64");
  sweep->add_option("--batch-size", sweep_f.batch_size,
                    "ignored for the sweep itself; kept for config parity");

  CLI::App* report = app.add_subcommand(
      "report", "render a comparison table from report.json files");
  report->add_option("files", report_f.report_files, "report.json files")
      ->required()
      ->expected(-1);
  report->add_option("--out", report_f.out_dir,
                     "directory for table.txt / table.csv")
      ->envname("TTA_OUT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (pre->parsed()) {
      tta::ExperimentConfig cfg = build_config(pre, pre_f);
      const std::string ckpt = checkpoint_path(pre, pre_f, cfg);
      tta::TrainingCurve curve = tta::cmd_pretrain(cfg, ckpt);
      std::printf("pretrained %zu epochs: train acc %.4f, val acc %.4f\n",
                  curve.epoch_loss.size(), curve.final_train_accuracy,
                  curve.final_val_accuracy);
      std::printf("checkpoint: %s\n", ckpt.c_str());
    } else if (run->parsed()) {
      tta::ExperimentConfig cfg = build_config(run, run_f);
      const std::string ckpt = checkpoint_path(run, run_f, cfg);
      tta::RunReport rep = tta::cmd_run(cfg, ckpt);
      for (const auto& e : rep.results)
        std::printf("%s:%d  %-12s  acc %.4f  ece %.4f  mce %.4f  brier %.4f  "
                    "auroc %.4f  sel %.3f\n",
                    tta::to_string(e.kind), e.severity, tta::to_string(e.strategy),
                    e.accuracy, e.ece, e.mce, e.brier, e.auroc,
                    e.mean_selection_rate);
      std::printf("report: %s/report.json\n", cfg.out_dir.c_str());
    } else if (sweep->parsed()) {
      tta::ExperimentConfig cfg = build_config(sweep, sweep_f);
      const std::string ckpt = checkpoint_path(sweep, sweep_f, cfg);
      auto rows = tta::cmd_sweep_batchsize(cfg, parse_sizes(sweep_f.sizes_csv), ckpt);
      for (const auto& r : rows)
        std::printf("%-12s  batch %3zu  acc %.4f\n", tta::to_string(r.strategy),
                    r.batch_size, r.accuracy);
      std::printf("sweep: %s/sweep.json\n", cfg.out_dir.c_str());
    } else if (report->parsed()) {
      tta::ComparisonTable table =
          tta::cmd_report(report_f.report_files, report_f.out_dir);
      std::fputs(table.text.c_str(), stdout);
    }
  } catch (const tta::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const tta::ParameterError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const tta::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
