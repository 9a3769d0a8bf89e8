#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routerx/curve.hpp"
#include "routerx/dataset.hpp"
#include "routerx/score_set.hpp"

namespace routerx {

/// Deployment bands: the low band is call rates [0, d1]; the accuracy band
/// is relative performance [rho1, rho2] between the small and large model.
struct ScenarioConfig {
  double d1 = 0.275;
  double rho1 = 0.85;
  double rho2 = 0.95;

  /// Throws ValidationError unless 0 < d1 <= 1 and 0 <= rho1 <= rho2 <= 1.
  void validate() const;
};

/// Mann-Whitney AUROC; label 1 is the positive class ("needs the large
/// model"). Ties count one half.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Mean of Phi over [0, d1].
double lpm(const Phi& phi, double d1);

/// A metric that can be undefined, with the reason when it is.
struct MaybeMetric {
  std::optional<double> value;
  std::string reason;
};

/// 1 - mean call rate over {x : tau1 <= Phi(x) <= tau2}. Throws when
/// perf_large == perf_small.
MaybeMetric hcr(const Phi& phi, const ScenarioConfig& cfg);

struct MpmResult {
  MaybeMetric mpm;
  /// First call rate where Phi reaches tau1; absent when it never does.
  std::optional<double> d2;
};

MpmResult mpm(const Phi& phi, const ScenarioConfig& cfg);

struct NamedDataset {
  std::string name;
  RoutingDataset data;
  bool in_domain = true;
};

struct MetricCell {
  std::string router;
  std::string dataset;
  bool in_domain = true;
  double auroc = 0.0;
  double lpm = 0.0;
  MaybeMetric mpm;
  std::optional<double> d2;
  MaybeMetric hcr;
};

/// Arithmetic mean over the defined cells of one metric.
struct Average {
  std::optional<double> value;
  std::size_t included = 0;
  std::size_t skipped = 0;
};

struct RouterAverages {
  std::string router;
  Average auroc_id, lpm_id, mpm_id, hcr_id;
  Average auroc_ood, lpm_ood, mpm_ood, hcr_ood;
};

struct MetricReport {
  ScenarioConfig scenario;
  /// Routers in input order, datasets in input order within each router.
  std::vector<MetricCell> cells;
  std::vector<RouterAverages> averages;
};

MetricCell evaluate_cell(const std::string& router, const NamedDataset& dataset,
                         std::span<const double> scores, const ScenarioConfig& cfg);

/// Full router x dataset grid. Throws ValidationError naming the first
/// (scorer, dataset) pair with missing scores.
MetricReport scenario_report(std::span<const NamedDataset> datasets,
                             std::span<const ScoreSet> scorers, const ScenarioConfig& cfg);

/// Same grid when each dataset has its own score source: grid[r][d] holds
/// router r's scores for datasets[d] and is named after the router. Needed
/// when query ids repeat across datasets.
MetricReport scenario_report(std::span<const NamedDataset> datasets,
                             const std::vector<std::vector<ScoreSet>>& grid,
                             const ScenarioConfig& cfg);

}  // namespace routerx
