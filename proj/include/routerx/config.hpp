#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "routerx/baselines.hpp"
#include "routerx/metrics.hpp"
#include "routerx/probe.hpp"
#include "routerx/train.hpp"

namespace routerx {

struct DatasetSpec {
  std::string name;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> states;
  std::optional<std::filesystem::path> tokens;
  bool in_domain = true;
};

enum class ScorerKind { kProbe, kBaseline, kExternal, kOracle };

struct ScorerSpec {
  std::string name;
  ScorerKind kind = ScorerKind::kOracle;
  std::filesystem::path params;                                 // probe
  Baseline baseline = Baseline::kEntropy;                       // baseline
  std::optional<std::filesystem::path> external;                // external, one file
  std::map<std::string, std::filesystem::path> external_by_dataset;  // external, per dataset
};

struct TrainSpec {
  TrainConfig config;
  /// Datasets concatenated into the training pool; defaults to every
  /// in-domain dataset.
  std::vector<std::string> datasets;
  /// File stem under output_dir: <stem>.json and <stem>.history.csv.
  std::string output = "probe";
};

/// A whole experiment in one JSON document. Relative paths resolve against
/// the config file's directory.
struct RunConfig {
  std::vector<DatasetSpec> datasets;
  std::vector<ScorerSpec> scorers;
  ScenarioConfig scenario;
  TrainSpec train;
  std::filesystem::path output_dir = "out";

  const DatasetSpec& dataset(const std::string& name) const;
  const ScorerSpec& scorer(const std::string& name) const;
};

/// Parses and structurally validates; throws ValidationError.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks that every referenced input file exists. Probe parameter files
/// are checked only when `check_scorers` is set, since `train` creates them.
void check_paths(const RunConfig& config, bool check_scorers);

struct LoadedDataset {
  NamedDataset named;
  std::size_t dropped_records = 0;
  std::size_t dropped_states = 0;
  std::size_t dropped_tokens = 0;
  std::size_t delta_large_defaulted = 0;
};

/// Reads labels and joins the attached states and token dumps.
LoadedDataset load_dataset(const DatasetSpec& spec);

/// Resolves router scores for one dataset. Probe parameters and external
/// files are read once per resolver.
class ScoreResolver {
 public:
  ScoreSet resolve(const ScorerSpec& spec, const LoadedDataset& dataset);

 private:
  std::map<std::filesystem::path, ProbeParams> params_;
  std::map<std::filesystem::path, ScoreSet> external_;
};

}  // namespace routerx
