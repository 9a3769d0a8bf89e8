// routerx: evaluate routers and train hidden-state probes from a run config.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error. Errors go to
// stderr as one JSON object {"error", "kind"}.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "routerx/baselines.hpp"
#include "routerx/config.hpp"
#include "routerx/curve.hpp"
#include "routerx/error.hpp"
#include "routerx/metrics.hpp"
#include "routerx/probe.hpp"
#include "routerx/report_io.hpp"
#include "routerx/tensorstore.hpp"
#include "routerx/train.hpp"

namespace fs = std::filesystem;
using namespace routerx;
using Json = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scorer;
  std::string dataset;
  std::string input;
  std::string params;
  std::string model;
};

// Writes through a temporary file so a failed run never leaves a torn output.
void write_file(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("I/O failure: cannot open '" + tmp.string() + "' for writing");
    out << data;
    out.flush();
    if (!out) throw Error("I/O failure: writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream out;
  fn(out);
  return out.str();
}

void print_written(const std::vector<fs::path>& files) {
  Json j = Json::array();
  for (const auto& f : files) j.push_back(f.string());
  std::cout << Json{{"written", j}}.dump() << '\n';
}

RunConfig config_for(const Options& opt) {
  if (opt.config.empty()) throw ValidationError("--config is required");
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) cfg.train.config.seed = *opt.seed;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  return cfg;
}

fs::path trained_params_path(const RunConfig& cfg) {
  return cfg.output_dir / (cfg.train.output + ".json");
}

// Probe scorers pointing at the train output may not exist yet.
void check_paths_allowing_pending(const RunConfig& cfg) {
  check_paths(cfg, false);
  RunConfig copy = cfg;
  std::erase_if(copy.scorers, [&](const ScorerSpec& s) {
    return s.kind == ScorerKind::kProbe && fs::weakly_canonical(s.params) ==
                                               fs::weakly_canonical(trained_params_path(cfg));
  });
  check_paths(copy, true);
}

DatasetSummary summarize(const LoadedDataset& d) {
  return {d.named.name,      d.named.data.size(), d.dropped_records, d.dropped_states,
          d.dropped_tokens, d.delta_large_defaulted};
}

int cmd_validate(const Options& opt) {
  const RunConfig cfg = config_for(opt);
  check_paths_allowing_pending(cfg);
  Json datasets = Json::array();
  for (const auto& spec : cfg.datasets) {
    const LoadedDataset d = load_dataset(spec);
    const DatasetSummary s = summarize(d);
    datasets.push_back(Json{{"name", s.name},
                            {"records", s.records},
                            {"dropped_records", s.dropped_records},
                            {"dropped_states", s.dropped_states},
                            {"dropped_tokens", s.dropped_tokens},
                            {"delta_large_defaulted", s.delta_large_defaulted}});
  }
  Json scorers = Json::array();
  for (const auto& s : cfg.scorers) scorers.push_back(s.name);
  std::cout << Json{{"valid", true}, {"datasets", datasets}, {"scorers", scorers}}.dump() << '\n';
  return 0;
}

int cmd_pool(const Options& opt) {
  if (opt.input.empty()) throw ValidationError("--input is required");
  if (opt.out.empty()) throw ValidationError("--out is required");
  HiddenStateStore store;
  try {
    store = pool_token_dump(opt.input);
  } catch (const ValidationError& e) {
    throw ValidationError(opt.input + ": " + e.what());
  } catch (const Error& e) {
    throw Error(opt.input + ": " + e.what());
  }
  store.describe(opt.model, Pooling::kRawToken);
  const fs::path out(opt.out);
  // A sidecar left from an earlier run would describe the wrong dump.
  if (opt.model.empty()) fs::remove(manifest_path(out));
  write_file(out, render([&](std::ostream& o) { write_store(store, o); }));
  std::vector<fs::path> written{out};
  if (!opt.model.empty()) {
    write_manifest(store.manifest(), manifest_path(out));
    written.push_back(manifest_path(out));
  }
  print_written(written);
  return 0;
}

int cmd_train(const Options& opt) {
  const RunConfig cfg = config_for(opt);
  check_paths(cfg, false);
  std::vector<RoutingDataset> parts;
  for (const auto& name : cfg.train.datasets) {
    LoadedDataset d = load_dataset(cfg.dataset(name));
    if (!d.named.data.states) {
      throw ValidationError("train: dataset '" + name + "' has no hidden states");
    }
    parts.push_back(std::move(d.named.data));
  }
  const RoutingDataset pool = parts.size() == 1 ? parts.front() : concat(parts);
  const TrainResult result = train(pool, cfg.train.config);

  const fs::path params = trained_params_path(cfg);
  const fs::path history = cfg.output_dir / (cfg.train.output + ".history.csv");
  write_file(params, params_to_json(result.params));
  write_file(history, render([&](std::ostream& o) { write_history_csv(result.history, o); }));
  print_written({params, history});
  return 0;
}

struct Resolved {
  LoadedDataset dataset;
  ScoreSet scores;
};

Resolved resolve_one(const RunConfig& cfg, const std::string& scorer, const std::string& dataset) {
  if (scorer.empty()) throw ValidationError("--scorer is required");
  if (dataset.empty()) throw ValidationError("--dataset is required");
  const ScorerSpec& s = cfg.scorer(scorer);
  const DatasetSpec& d = cfg.dataset(dataset);
  check_paths(cfg, true);
  Resolved r{load_dataset(d), {}};
  ScoreResolver resolver;
  r.scores = resolver.resolve(s, r.dataset);
  try {
    (void)r.scores.aligned(r.dataset.named.data);
  } catch (const ValidationError& e) {
    throw ValidationError("coverage gap for (scorer '" + scorer + "', dataset '" + dataset +
                          "'): " + e.what());
  }
  return r;
}

int cmd_score(const Options& opt) {
  const RunConfig cfg = config_for(opt);
  const Resolved r = resolve_one(cfg, opt.scorer, opt.dataset);
  ScoreSet subset;
  subset.name = r.scores.name;
  for (const auto& rec : r.dataset.named.data.records) {
    subset.scores.emplace(rec.query_id, r.scores.scores.at(rec.query_id));
  }
  const fs::path out = cfg.output_dir / ("scores_" + opt.scorer + "_" + opt.dataset + ".jsonl");
  write_file(out, render([&](std::ostream& o) { write_scores(subset, o); }));
  print_written({out});
  return 0;
}

int cmd_eval(const Options& opt) {
  const RunConfig cfg = config_for(opt);
  check_paths(cfg, true);
  if (cfg.scorers.empty()) throw ValidationError("eval: config defines no scorers");
  std::vector<LoadedDataset> loaded;
  for (const auto& d : cfg.datasets) loaded.push_back(load_dataset(d));

  ScoreResolver resolver;
  std::vector<NamedDataset> datasets;
  std::vector<DatasetSummary> summaries;
  for (const auto& d : loaded) {
    datasets.push_back(d.named);
    summaries.push_back(summarize(d));
  }
  std::vector<std::vector<ScoreSet>> grid;
  for (const auto& s : cfg.scorers) {
    auto& row = grid.emplace_back();
    for (const auto& d : loaded) {
      row.push_back(resolver.resolve(s, d));
      row.back().name = s.name;
    }
  }
  const MetricReport report = scenario_report(datasets, grid, cfg.scenario);

  const fs::path csv = cfg.output_dir / "metrics.csv";
  const fs::path json = cfg.output_dir / "metrics.json";
  const std::string csv_text = render([&](std::ostream& o) { write_report_csv(report, o); });
  const std::string json_text =
      render([&](std::ostream& o) { write_report_json(report, summaries, o); });
  write_file(csv, csv_text);
  write_file(json, json_text);
  print_written({csv, json});
  return 0;
}

int cmd_curve(const Options& opt) {
  const RunConfig cfg = config_for(opt);
  const Resolved r = resolve_one(cfg, opt.scorer, opt.dataset);
  const auto scores = r.scores.aligned(r.dataset.named.data);
  const CurvePoints curve = sweep(scores, r.dataset.named.data);
  const std::string stem = "curve_" + opt.scorer + "_" + opt.dataset;
  const fs::path csv = cfg.output_dir / (stem + ".csv");
  const fs::path json = cfg.output_dir / (stem + ".json");
  write_file(csv, render([&](std::ostream& o) { write_curve_csv(curve, o); }));
  write_file(json, render([&](std::ostream& o) {
               write_curve_sidecar(curve, opt.scorer, opt.dataset, o);
             }));
  print_written({csv, json});
  return 0;
}

int cmd_layer_weights(const Options& opt) {
  fs::path params_path;
  fs::path out_dir;
  std::string stem;
  if (!opt.params.empty()) {
    params_path = opt.params;
    out_dir = opt.out.empty() ? fs::path(".") : fs::path(opt.out);
    stem = params_path.stem().string();
  } else {
    const RunConfig cfg = config_for(opt);
    if (opt.scorer.empty()) throw ValidationError("layer-weights needs --params or --scorer");
    const ScorerSpec& s = cfg.scorer(opt.scorer);
    if (s.kind != ScorerKind::kProbe) {
      throw ValidationError("scorer '" + opt.scorer + "' is not a probe");
    }
    params_path = s.params;
    out_dir = cfg.output_dir;
    stem = opt.scorer;
  }
  if (!fs::is_regular_file(params_path)) {
    throw ValidationError("probe params: file not found '" + params_path.string() + "'");
  }
  const ProbeParams params = load_params(params_path);
  const fs::path out = out_dir / ("layer_weights_" + stem + ".csv");
  write_file(out, render([&](std::ostream& o) {
               write_layer_weights_csv(layer_concentration(params), o);
             }));
  print_written({out});
  return 0;
}

void emit_error(const std::string& message, const char* kind) {
  std::cerr << Json{{"error", message}, {"kind", kind}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Router evaluation and hidden-state probe training"};
  app.require_subcommand(1);
  Options opt;

  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Run config (JSON)")->required();
  };
  const auto add_out = [&](CLI::App* sub, const char* help) {
    sub->add_option("--out", opt.out, help);
  };

  auto* validate = app.add_subcommand("validate", "Check a config and every input it references");
  add_config(validate);

  auto* pool = app.add_subcommand("pool", "Mean-pool a raw token-state dump into a store");
  pool->add_option("--input", opt.input, "Raw token-state dump (.rxht)")->required();
  pool->add_option("--out", opt.out, "Output store path (.rxhs)")->required();
  pool->add_option("--model", opt.model, "Model name recorded in the manifest sidecar");

  auto* train_cmd = app.add_subcommand("train", "Train the probe on the configured datasets");
  add_config(train_cmd);
  train_cmd->add_option("--seed", opt.seed, "Override the training seed");
  add_out(train_cmd, "Output directory (overrides output_dir)");

  auto* score = app.add_subcommand("score", "Write one scorer's scores for one dataset");
  add_config(score);
  score->add_option("--scorer", opt.scorer)->required();
  score->add_option("--dataset", opt.dataset)->required();
  add_out(score, "Output directory (overrides output_dir)");

  auto* eval = app.add_subcommand("eval", "Metric grid for every scorer and dataset");
  add_config(eval);
  add_out(eval, "Output directory (overrides output_dir)");

  auto* curve = app.add_subcommand("curve", "Cost-performance curve knots");
  add_config(curve);
  curve->add_option("--scorer", opt.scorer)->required();
  curve->add_option("--dataset", opt.dataset)->required();
  add_out(curve, "Output directory (overrides output_dir)");

  auto* layers = app.add_subcommand("layer-weights", "Export a probe's layer weights");
  layers->add_option("--params", opt.params, "Probe parameter file");
  layers->add_option("--config", opt.config, "Run config (with --scorer)");
  layers->add_option("--scorer", opt.scorer, "Probe scorer name in the config");
  add_out(layers, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error(e.what(), "usage");
    return 1;
  }

  try {
    if (*validate) return cmd_validate(opt);
    if (*pool) return cmd_pool(opt);
    if (*train_cmd) return cmd_train(opt);
    if (*score) return cmd_score(opt);
    if (*eval) return cmd_eval(opt);
    if (*curve) return cmd_curve(opt);
    if (*layers) return cmd_layer_weights(opt);
  } catch (const ValidationError& e) {
    emit_error(e.what(), "validation");
    return 1;
  } catch (const Error& e) {
    emit_error(e.what(), "runtime");
    return 2;
  } catch (const std::exception& e) {
    emit_error(e.what(), "runtime");
    return 2;
  }
  return 1;
}
