#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tta/adapt.hpp"
#include "tta/classifier.hpp"
#include "tta/datagen.hpp"
#include "tta/errors.hpp"
#include "tta/metrics.hpp"
#include "tta/selection.hpp"
#include "tta/util.hpp"
#include "tta/version.hpp"

namespace tta {

using json = nlohmann::json;

struct CorruptionRun {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 5;
};

inline CorruptionRun parse_corruption_run(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw ConfigError("corruption must be KIND:SEVERITY, got '" + s + "'");
  CorruptionRun r;
  try {
    r.kind = corruption_from_string(s.substr(0, colon));
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  try {
    r.severity = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("corruption severity must be an integer in '" + s + "'");
  }
  if (r.severity < 1 || r.severity > 5)
    throw ConfigError("corruption severity must be in 1..5 in '" + s + "'");
  return r;
}

/// Everything a run needs, with explicit seeds throughout (no wall-clock
/// defaults anywhere).
struct ExperimentConfig {
  // dataset
  std::size_t n_per_class = 500;
  int num_classes = 4;
  double spurious_strength = 0.5;
  std::uint64_t dataset_seed = 11;
  // pretraining
  PretrainConfig pretrain;
  // adaptation
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::optional<double> tau_ent;  // default 0.4 * ln(C), resolved at run time
  std::string grad_mode = "quantile";
  double grad_quantile = 0.9;
  double tau_grad = 1.0;  // absolute mode only
  double tau_plpd = 0.2;
  std::size_t patch_size = 4;
  bool per_image_permutation = false;
  bool tent_use_all_samples = false;
  bool reset_per_corruption = true;
  std::uint64_t seed = 7;  // master seed: stream order, shuffle permutations
  // run plan
  std::vector<CorruptionRun> corruptions = {
      {CorruptionKind::gaussian_noise, 5}};
  std::vector<Strategy> strategies = {Strategy::no_adapt, Strategy::tent,
                                      Strategy::entropy_plpd, Strategy::etage};
  std::string out_dir = "out";
  bool dump_samples = false;

  Thresholds resolve_thresholds() const {
    Thresholds t;
    t.tau_ent = tau_ent.value_or(
        0.4 * std::log(static_cast<double>(num_classes)));
    if (grad_mode == "quantile") {
      t.grad_mode = Thresholds::GradMode::quantile;
      t.grad_quantile = grad_quantile;
    } else if (grad_mode == "absolute") {
      t.grad_mode = Thresholds::GradMode::absolute;
      t.tau_grad = tau_grad;
    } else {
      throw ConfigError("grad_mode must be 'quantile' or 'absolute', got '" +
                        grad_mode + "'");
    }
    t.tau_plpd = tau_plpd;
    t.validate();
    return t;
  }

  AdaptConfig adapt_config(Strategy strategy) const {
    AdaptConfig a;
    a.strategy = strategy;
    a.learning_rate = learning_rate;
    a.momentum = momentum;
    a.batch_size = batch_size;
    a.thresholds = resolve_thresholds();
    a.shuffle_spec.patch_size = patch_size;
    a.shuffle_spec.per_image_permutation = per_image_permutation;
    a.shuffle_spec.permutation_seed = mix_seed(seed, 0x50f1e);
    a.seed = seed;
    a.tent_use_all_samples = tent_use_all_samples;
    return a;
  }
};

namespace cfg_detail {

inline void reject_unknown_keys(const json& obj, const std::string& section,
                                const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key '" + section + "." + it.key() + "'");
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has wrong type");
    }
  }
}

}  // namespace cfg_detail

/// Strict parse: any unknown key is rejected by name.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  cfg_detail::reject_unknown_keys(
      j, "", {"dataset", "pretrain", "adapt", "run"});
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    cfg_detail::reject_unknown_keys(
        d, "dataset", {"n_per_class", "num_classes", "spurious_strength", "seed"});
    cfg_detail::maybe(d, "n_per_class", c.n_per_class);
    cfg_detail::maybe(d, "num_classes", c.num_classes);
    cfg_detail::maybe(d, "spurious_strength", c.spurious_strength);
    cfg_detail::maybe(d, "seed", c.dataset_seed);
  }
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    cfg_detail::reject_unknown_keys(
        p, "pretrain", {"epochs", "learning_rate", "batch_size", "seed"});
    cfg_detail::maybe(p, "epochs", c.pretrain.epochs);
    cfg_detail::maybe(p, "learning_rate", c.pretrain.learning_rate);
    cfg_detail::maybe(p, "batch_size", c.pretrain.batch_size);
    cfg_detail::maybe(p, "seed", c.pretrain.seed);
  }
  if (j.contains("adapt")) {
    const json& a = j.at("adapt");
    cfg_detail::reject_unknown_keys(
        a, "adapt",
        {"learning_rate", "momentum", "batch_size", "tau_ent", "grad_mode",
         "grad_quantile", "tau_grad", "tau_plpd", "patch_size",
         "per_image_permutation", "tent_use_all_samples",
         "reset_per_corruption", "seed"});
    cfg_detail::maybe(a, "learning_rate", c.learning_rate);
    cfg_detail::maybe(a, "momentum", c.momentum);
    cfg_detail::maybe(a, "batch_size", c.batch_size);
    if (a.contains("tau_ent")) {
      double v = 0;
      cfg_detail::maybe(a, "tau_ent", v);
      c.tau_ent = v;
    }
    cfg_detail::maybe(a, "grad_mode", c.grad_mode);
    cfg_detail::maybe(a, "grad_quantile", c.grad_quantile);
    cfg_detail::maybe(a, "tau_grad", c.tau_grad);
    cfg_detail::maybe(a, "tau_plpd", c.tau_plpd);
    cfg_detail::maybe(a, "patch_size", c.patch_size);
    cfg_detail::maybe(a, "per_image_permutation", c.per_image_permutation);
    cfg_detail::maybe(a, "tent_use_all_samples", c.tent_use_all_samples);
    cfg_detail::maybe(a, "reset_per_corruption", c.reset_per_corruption);
    cfg_detail::maybe(a, "seed", c.seed);
  }
  if (j.contains("run")) {
    const json& r = j.at("run");
    cfg_detail::reject_unknown_keys(
        r, "run", {"corruptions", "strategies", "out_dir", "dump_samples"});
    if (r.contains("corruptions")) {
      c.corruptions.clear();
      for (const auto& item : r.at("corruptions"))
        c.corruptions.push_back(parse_corruption_run(item.get<std::string>()));
    }
    if (r.contains("strategies")) {
      c.strategies.clear();
      for (const auto& item : r.at("strategies")) {
        try {
          c.strategies.push_back(strategy_from_string(item.get<std::string>()));
        } catch (const ParameterError& e) {
          throw ConfigError(e.what());
        }
      }
    }
    cfg_detail::maybe(r, "out_dir", c.out_dir);
    cfg_detail::maybe(r, "dump_samples", c.dump_samples);
  }
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"n_per_class", c.n_per_class},
                  {"num_classes", c.num_classes},
                  {"spurious_strength", c.spurious_strength},
                  {"seed", c.dataset_seed}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"batch_size", c.pretrain.batch_size},
                   {"seed", c.pretrain.seed}};
  json a = {{"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"batch_size", c.batch_size},
            {"grad_mode", c.grad_mode},
            {"grad_quantile", c.grad_quantile},
            {"tau_grad", c.tau_grad},
            {"tau_plpd", c.tau_plpd},
            {"patch_size", c.patch_size},
            {"per_image_permutation", c.per_image_permutation},
            {"tent_use_all_samples", c.tent_use_all_samples},
            {"reset_per_corruption", c.reset_per_corruption},
            {"seed", c.seed}};
  if (c.tau_ent.has_value()) a["tau_ent"] = *c.tau_ent;
  j["adapt"] = a;
  json corr = json::array();
  for (const auto& cr : c.corruptions)
    corr.push_back(std::string(to_string(cr.kind)) + ":" +
                   std::to_string(cr.severity));
  json strat = json::array();
  for (Strategy s : c.strategies) strat.push_back(to_string(s));
  j["run"] = {{"corruptions", corr},
              {"strategies", strat},
              {"out_dir", c.out_dir},
              {"dump_samples", c.dump_samples}};
  return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::string config_hash(const ExperimentConfig& c) {
  const std::string dump = config_to_json(c).dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(dump.data(), dump.size())));
  return buf;
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

struct RunResultEntry {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 5;
  Strategy strategy = Strategy::etage;
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double brier = 0.0;
  double auroc = 0.0;
  double mean_selection_rate = 0.0;
  std::string trace_file;
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string version = kVersion;
  std::uint64_t seed = 0;
  std::string config_hash;
  json config;
  std::vector<RunResultEntry> results;
};

inline json report_to_json(const RunReport& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["environment"] = {{"version", r.version},
                      {"seed", r.seed},
                      {"config_hash", r.config_hash}};
  j["config"] = r.config;
  json rows = json::array();
  for (const auto& e : r.results) {
    rows.push_back({{"corruption", to_string(e.kind)},
                    {"severity", e.severity},
                    {"strategy", to_string(e.strategy)},
                    {"accuracy", e.accuracy},
                    {"ece", e.ece},
                    {"mce", e.mce},
                    {"brier", e.brier},
                    {"auroc", e.auroc},
                    {"mean_selection_rate", e.mean_selection_rate},
                    {"trace_file", e.trace_file}});
  }
  j["results"] = rows;
  return j;
}

inline RunReport report_from_json(const json& j) {
  RunReport r;
  if (!j.contains("schema_version"))
    throw ConfigError("report: missing schema_version");
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kReportSchemaVersion)
    throw ConfigError("report schema version " +
                      std::to_string(r.schema_version) + " != expected " +
                      std::to_string(kReportSchemaVersion) +
                      "; migrate the report before use");
  r.version = j.at("environment").at("version").get<std::string>();
  r.seed = j.at("environment").at("seed").get<std::uint64_t>();
  r.config_hash = j.at("environment").at("config_hash").get<std::string>();
  r.config = j.at("config");
  for (const auto& row : j.at("results")) {
    RunResultEntry e;
    e.kind = corruption_from_string(row.at("corruption").get<std::string>());
    e.severity = row.at("severity").get<int>();
    e.strategy = strategy_from_string(row.at("strategy").get<std::string>());
    e.accuracy = row.at("accuracy").get<double>();
    e.ece = row.at("ece").get<double>();
    e.mce = row.at("mce").get<double>();
    e.brier = row.at("brier").get<double>();
    e.auroc = row.at("auroc").get<double>();
    e.mean_selection_rate = row.at("mean_selection_rate").get<double>();
    e.trace_file = row.at("trace_file").get<std::string>();
    r.results.push_back(e);
  }
  return r;
}

inline void save_report(const RunReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("report: cannot open " + path);
  os << report_to_json(r).dump(2) << "\n";
}

inline RunReport load_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("report: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("report parse error in " + path + ": " + e.what());
  }
  return report_from_json(j);
}

inline void write_traces_jsonl(const std::string& path,
                               const std::vector<StepTrace>& traces) {
  std::ofstream os(path);
  if (!os) throw IoError("traces: cannot open " + path);
  for (const auto& t : traces) {
    json j = {{"batch_index", t.batch_index},
              {"n_gate1_survivors", t.n_gate1_survivors},
              {"n_selected", t.n_selected},
              {"loss_value", t.loss_value},
              {"param_update_norm", t.param_update_norm}};
    os << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

/// Pretrains on the clean shape dataset and writes the checkpoint plus a
/// training-curve record next to it.
inline TrainingCurve cmd_pretrain(const ExperimentConfig& cfg,
                                  const std::string& checkpoint_path) {
  DatasetSplits splits = generate_shape_dataset(
      cfg.n_per_class, cfg.num_classes, cfg.dataset_seed, cfg.spurious_strength);
  ClassifierModel model = default_classifier(
      mix_seed(cfg.pretrain.seed, 0xC1A5),
      static_cast<std::size_t>(cfg.num_classes));
  TrainingCurve curve = pretrain(model, splits.train, splits.val, cfg.pretrain);
  std::filesystem::create_directories(
      std::filesystem::path(checkpoint_path).parent_path().string().empty()
          ? "."
          : std::filesystem::path(checkpoint_path).parent_path().string());
  model.save(checkpoint_path);
  json j = {{"epoch_loss", curve.epoch_loss},
            {"final_train_accuracy", curve.final_train_accuracy},
            {"final_val_accuracy", curve.final_val_accuracy},
            {"seed", cfg.pretrain.seed}};
  std::ofstream os(checkpoint_path + ".curve.json");
  if (!os) throw IoError("pretrain: cannot write curve record");
  os << j.dump(2) << "\n";
  return curve;
}

/// The corrupted online stream for one (kind, severity): the test split,
/// corrupted, then shuffled into stream order. Identical for every strategy
/// under the same master seed.
inline std::vector<LabeledImage> make_corrupted_stream(
    const ExperimentConfig& cfg, const Dataset& test, CorruptionKind kind,
    int severity) {
  Dataset corrupted = corrupt_dataset(
      test, kind, severity,
      mix_seed(cfg.seed, 0xC0, static_cast<std::uint64_t>(kind),
               static_cast<std::uint64_t>(severity)));
  Rng rng = make_rng(mix_seed(cfg.seed, 0x57e4,
                              static_cast<std::uint64_t>(kind),
                              static_cast<std::uint64_t>(severity)));
  shuffle_vector(corrupted.items, rng);
  return std::move(corrupted.items);
}

struct SingleRunOutput {
  RunResultEntry entry;
  StreamResult stream;
};

inline SingleRunOutput run_single(const ExperimentConfig& cfg,
                                  ClassifierModel& model,
                                  const std::vector<LabeledImage>& stream,
                                  CorruptionKind kind, int severity,
                                  Strategy strategy) {
  const std::uint64_t frozen_before = model.fingerprint_backbone();
  AdaptConfig acfg = cfg.adapt_config(strategy);
  SingleRunOutput out;
  out.stream = run_stream(model, stream, acfg);
  if (model.fingerprint_backbone() != frozen_before)
    throw ContractError("run: frozen backbone changed during adaptation");
  RunResultEntry& e = out.entry;
  e.kind = kind;
  e.severity = severity;
  e.strategy = strategy;
  e.accuracy = accuracy(out.stream.predictions);
  e.ece = ece(out.stream.predictions);
  e.mce = mce(out.stream.predictions);
  e.brier = brier(out.stream.predictions);
  try {
    e.auroc = auroc(out.stream.predictions);
  } catch (const MetricError&) {
    e.auroc = 0.5;  // degenerate all-correct/all-wrong stream
  }
  std::size_t selected = 0;
  for (const auto& t : out.stream.traces) selected += t.n_selected;
  e.mean_selection_rate =
      static_cast<double>(selected) / static_cast<double>(stream.size());
  return out;
}

/// Full corruption x strategy grid from a pretrained checkpoint. Writes
/// report.json, per-run trace logs, and (optionally) per-run diagnostic
/// sample CSVs under out_dir.
inline RunReport cmd_run(const ExperimentConfig& cfg,
                         const std::string& checkpoint_path) {
  if (!std::filesystem::exists(checkpoint_path))
    throw ConfigError("checkpoint not found: " + checkpoint_path);
  ClassifierModel base = ClassifierModel::load(checkpoint_path);
  DatasetSplits splits = generate_shape_dataset(
      cfg.n_per_class, cfg.num_classes, cfg.dataset_seed, cfg.spurious_strength);

  std::filesystem::create_directories(cfg.out_dir + "/traces");
  if (cfg.dump_samples)
    std::filesystem::create_directories(cfg.out_dir + "/samples");

  RunReport report;
  report.seed = cfg.seed;
  report.config = config_to_json(cfg);
  report.config_hash = config_hash(cfg);

  std::map<std::string, int> stem_uses;
  for (Strategy strategy : cfg.strategies) {
    ClassifierModel model = base.clone();
    for (const CorruptionRun& cr : cfg.corruptions) {
      if (cfg.reset_per_corruption) model = base.clone();
      std::vector<LabeledImage> stream =
          make_corrupted_stream(cfg, splits.test, cr.kind, cr.severity);
      SingleRunOutput out =
          run_single(cfg, model, stream, cr.kind, cr.severity, strategy);

      std::string stem = std::string(to_string(cr.kind)) + "_s" +
                         std::to_string(cr.severity) + "_" +
                         to_string(strategy);
      const int uses = ++stem_uses[stem];
      if (uses > 1) stem += "_" + std::to_string(uses);
      out.entry.trace_file = "traces/" + stem + ".jsonl";
      write_traces_jsonl(cfg.out_dir + "/" + out.entry.trace_file,
                         out.stream.traces);
      if (cfg.dump_samples) {
        // Diagnostic pass with the pretrained parameters: full three-gate
        // records for every stream sample, independent of the strategy.
        ClassifierModel diag = base.clone();
        AdaptConfig acfg = cfg.adapt_config(Strategy::etage);
        std::vector<SampleRecord> all;
        std::size_t batch_index = 0;
        for (std::size_t off = 0; off < stream.size(); off += cfg.batch_size) {
          const std::size_t n = std::min(cfg.batch_size, stream.size() - off);
          SelectionResult sel = detail::run_selection(
              diag, stream, off, n, acfg.thresholds,
              batch_shuffle_spec(acfg.shuffle_spec, batch_index),
              detail::GateSet{}, SelectionMode::diagnostic);
          for (auto& rec : sel.records) all.push_back(rec);
          ++batch_index;
        }
        write_sample_records_csv(cfg.out_dir + "/samples/" + stem + ".csv", all);
      }
      report.results.push_back(out.entry);
    }
  }
  save_report(report, cfg.out_dir + "/report.json");
  return report;
}

// ---------------------------------------------------------------------------
// Batch-size sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  Strategy strategy;
  std::size_t batch_size;
  double accuracy;
};

/// One run_stream per (strategy, size) from a fresh checkpoint copy, on the
/// first configured corruption. Rows land in sweep.json / sweep.csv.
inline std::vector<SweepRow> cmd_sweep_batchsize(
    const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes,
    const std::string& checkpoint_path) {
  if (sizes.empty()) throw ConfigError("sweep: sizes must be non-empty");
  if (!std::filesystem::exists(checkpoint_path))
    throw ConfigError("checkpoint not found: " + checkpoint_path);
  if (cfg.corruptions.empty())
    throw ConfigError("sweep: need at least one corruption");
  ClassifierModel base = ClassifierModel::load(checkpoint_path);
  DatasetSplits splits = generate_shape_dataset(
      cfg.n_per_class, cfg.num_classes, cfg.dataset_seed, cfg.spurious_strength);
  const CorruptionRun cr = cfg.corruptions.front();
  std::vector<LabeledImage> stream =
      make_corrupted_stream(cfg, splits.test, cr.kind, cr.severity);

  std::vector<SweepRow> rows;
  for (Strategy strategy : cfg.strategies) {
    for (std::size_t size : sizes) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.batch_size = size;
      ClassifierModel model = base.clone();
      SingleRunOutput out =
          run_single(run_cfg, model, stream, cr.kind, cr.severity, strategy);
      rows.push_back(SweepRow{strategy, size, out.entry.accuracy});
    }
  }

  std::filesystem::create_directories(cfg.out_dir);
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"strategy", to_string(r.strategy)},
                 {"batch_size", r.batch_size},
                 {"accuracy", r.accuracy}});
  std::ofstream js(cfg.out_dir + "/sweep.json");
  if (!js) throw IoError("sweep: cannot write sweep.json");
  js << json({{"corruption", to_string(cr.kind)},
              {"severity", cr.severity},
              {"rows", j}})
            .dump(2)
     << "\n";
  std::ofstream cs(cfg.out_dir + "/sweep.csv");
  if (!cs) throw IoError("sweep: cannot write sweep.csv");
  cs << "strategy,batch_size,accuracy\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%zu,%.17g\n", to_string(r.strategy),
                  r.batch_size, r.accuracy);
    cs << line;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Comparison table (one row per strategy, one column per corruption plus the
// average; best accuracy marked '*', second-best '~').
// ---------------------------------------------------------------------------

struct ComparisonTable {
  std::string text;
  std::string csv;
};

inline ComparisonTable format_report(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw ConfigError("report: need at least one report file");

  std::vector<std::string> columns;  // "kind:severity", first-seen order
  std::vector<std::string> strategies;
  std::map<std::pair<std::string, std::string>, double> acc;  // (strategy, col)
  for (const auto& rep : reports) {
    for (const auto& e : rep.results) {
      const std::string col = std::string(to_string(e.kind)) + ":" +
                              std::to_string(e.severity);
      const std::string strat = to_string(e.strategy);
      if (std::find(columns.begin(), columns.end(), col) == columns.end())
        columns.push_back(col);
      if (std::find(strategies.begin(), strategies.end(), strat) ==
          strategies.end())
        strategies.push_back(strat);
      acc[{strat, col}] = e.accuracy;
    }
  }

  std::vector<std::string> all_cols = columns;
  all_cols.push_back("average");
  std::map<std::pair<std::string, std::string>, double> cells = acc;
  for (const auto& s : strategies) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& col : columns) {
      auto it = acc.find({s, col});
      if (it != acc.end()) {
        sum += it->second;
        ++n;
      }
    }
    if (n > 0) cells[{s, "average"}] = sum / static_cast<double>(n);
  }

  // Per-column best / second-best accuracy values (ties share a marker).
  std::map<std::string, std::pair<double, double>> col_marks;
  for (const auto& col : all_cols) {
    std::vector<double> vals;
    for (const auto& s : strategies) {
      auto it = cells.find({s, col});
      if (it != cells.end()) vals.push_back(it->second);
    }
    std::sort(vals.begin(), vals.end(), std::greater<>());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    col_marks[col] = {vals.empty() ? -1.0 : vals[0],
                      vals.size() > 1 ? vals[1] : -1.0};
  }

  std::size_t name_w = 8;
  for (const auto& s : strategies) name_w = std::max(name_w, s.size());
  std::vector<std::size_t> col_w;
  for (const auto& col : all_cols) col_w.push_back(std::max<std::size_t>(col.size(), 8));

  std::ostringstream text, csv;
  text << std::string(name_w, ' ');
  csv << "strategy";
  for (std::size_t i = 0; i < all_cols.size(); ++i) {
    text << "  " << std::string(col_w[i] - all_cols[i].size(), ' ') << all_cols[i];
    csv << "," << all_cols[i] << "," << all_cols[i] << "_rank";
  }
  text << "\n";
  csv << "\n";
  char buf[64];
  for (const auto& s : strategies) {
    text << s << std::string(name_w - s.size(), ' ');
    csv << s;
    for (std::size_t i = 0; i < all_cols.size(); ++i) {
      auto it = cells.find({s, all_cols[i]});
      if (it == cells.end()) {
        text << "  " << std::string(col_w[i], ' ');
        csv << ",,";
        continue;
      }
      const auto [best, second] = col_marks[all_cols[i]];
      const char* mark = it->second == best ? "*"
                         : it->second == second ? "~"
                                                : " ";
      std::snprintf(buf, sizeof(buf), "%.2f%s", 100.0 * it->second, mark);
      const std::string cell = buf;
      text << "  " << std::string(col_w[i] > cell.size() ? col_w[i] - cell.size() : 0, ' ')
           << cell;
      const char* rank = it->second == best ? "best"
                         : it->second == second ? "second"
                                                : "";
      std::snprintf(buf, sizeof(buf), "%.17g", it->second);
      csv << "," << buf << "," << rank;
    }
    text << "\n";
    csv << "\n";
  }
  return ComparisonTable{text.str(), csv.str()};
}

inline ComparisonTable cmd_report(const std::vector<std::string>& report_paths,
                                  const std::string& out_dir) {
  std::vector<RunReport> reports;
  for (const auto& p : report_paths) reports.push_back(load_report(p));
  ComparisonTable table = format_report(reports);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream ts(out_dir + "/table.txt");
    ts << table.text;
    std::ofstream cs(out_dir + "/table.csv");
    cs << table.csv;
  }
  return table;
}

}  // namespace tta
