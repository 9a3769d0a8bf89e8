#include "routerx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "routerx/error.hpp"

namespace routerx {

void ScenarioConfig::validate() const {
  if (!(d1 > 0.0 && d1 <= 1.0)) throw ValidationError("scenario: d1 must lie in (0,1]");
  if (!(rho1 >= 0.0 && rho1 <= rho2 && rho2 <= 1.0)) {
    throw ValidationError("scenario: require 0 <= rho1 <= rho2 <= 1");
  }
}

std::vector<double> ScoreSet::aligned(const RoutingDataset& dataset) const {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records) {
    const auto it = scores.find(r.query_id);
    if (it == scores.end()) {
      throw ValidationError("score set '" + name + "' has no score for query '" + r.query_id +
                            "'");
    }
    out.push_back(it->second);
  }
  return out;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("misaligned scores");
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ValidationError("non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    n_pos += static_cast<std::uint64_t>(labels[i]);
  }
  const std::uint64_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("degenerate labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are 1-based; a tie block spanning positions [i, j) shares the
  // average rank (i + 1 + j) / 2, kept doubled so the sum stays integral.
  std::uint64_t pos_rank_sum2 = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    std::uint64_t pos_in_block = 0;
    for (std::size_t k = i; k < j; ++k) pos_in_block += static_cast<std::uint64_t>(labels[order[k]]);
    pos_rank_sum2 += pos_in_block * (i + 1 + j);
    i = j;
  }
  const std::uint64_t u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
  return static_cast<double>(u2) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double lpm(const Phi& phi, double d1) {
  if (!(d1 > 0.0)) throw ValidationError("empty band");
  if (d1 > 1.0) throw ValidationError("call rate out of range");
  return phi.integral(0.0, d1) / d1;
}

MaybeMetric hcr(const Phi& phi, const ScenarioConfig& cfg) {
  const double ps = phi.perf_small();
  const double pl = phi.perf_large();
  if (ps == pl) throw ValidationError("degenerate relative-performance scale");
  const double tau1 = ps + cfg.rho1 * (pl - ps);
  const double tau2 = ps + cfg.rho2 * (pl - ps);
  const auto feasible = phi.band(std::min(tau1, tau2), std::max(tau1, tau2));
  double measure = 0.0;
  double first_moment = 0.0;
  for (const auto& iv : feasible) {
    measure += iv.length();
    first_moment += 0.5 * (iv.hi * iv.hi - iv.lo * iv.lo);
  }
  if (feasible.empty()) return {std::nullopt, "empty feasible set"};
  if (measure <= 0.0) return {std::nullopt, "zero-measure feasible set"};
  return {1.0 - first_moment / measure, {}};
}

MpmResult mpm(const Phi& phi, const ScenarioConfig& cfg) {
  const double ps = phi.perf_small();
  const double tau1 = ps + cfg.rho1 * (phi.perf_large() - ps);
  const auto reach = solve_level(phi, tau1);
  MpmResult out;
  if (reach.empty()) {
    out.mpm = {std::nullopt, "unreachable accuracy band"};
    return out;
  }
  const double d2 = reach.front().lo;
  out.d2 = d2;
  if (d2 <= cfg.d1) {
    out.mpm = {std::nullopt, "empty mid band"};
    return out;
  }
  out.mpm = {phi.integral(cfg.d1, d2) / (d2 - cfg.d1), {}};
  return out;
}

MetricCell evaluate_cell(const std::string& router, const NamedDataset& dataset,
                         std::span<const double> scores, const ScenarioConfig& cfg) {
  MetricCell cell;
  cell.router = router;
  cell.dataset = dataset.name;
  cell.in_domain = dataset.in_domain;
  const auto needs = dataset.data.needs_large();
  cell.auroc = auroc(scores, needs);
  const Phi phi = interpolate(sweep(scores, dataset.data));
  cell.lpm = lpm(phi, cfg.d1);
  const MpmResult m = mpm(phi, cfg);
  cell.mpm = m.mpm;
  cell.d2 = m.d2;
  try {
    cell.hcr = hcr(phi, cfg);
  } catch (const ValidationError& e) {
    cell.hcr = {std::nullopt, e.what()};
  }
  return cell;
}

namespace {

struct Accumulator {
  double sum = 0.0;
  std::size_t included = 0;
  std::size_t skipped = 0;

  void add(std::optional<double> v) {
    if (v) {
      sum += *v;
      ++included;
    } else {
      ++skipped;
    }
  }
  Average result() const {
    Average a;
    a.included = included;
    a.skipped = skipped;
    if (included > 0) a.value = sum / static_cast<double>(included);
    return a;
  }
};

}  // namespace

namespace {

MetricReport assemble(std::span<const NamedDataset> datasets,
                      const std::vector<std::string>& routers,
                      const std::vector<std::vector<double>>& aligned, const ScenarioConfig& cfg) {
  MetricReport report;
  report.scenario = cfg;
  std::size_t slot = 0;
  for (const auto& router : routers) {
    Accumulator auroc_id, lpm_id, mpm_id, hcr_id, auroc_ood, lpm_ood, mpm_ood, hcr_ood;
    for (const auto& ds : datasets) {
      MetricCell cell = evaluate_cell(router, ds, aligned[slot++], cfg);
      if (cell.in_domain) {
        auroc_id.add(cell.auroc);
        lpm_id.add(cell.lpm);
        mpm_id.add(cell.mpm.value);
        hcr_id.add(cell.hcr.value);
      } else {
        auroc_ood.add(cell.auroc);
        lpm_ood.add(cell.lpm);
        mpm_ood.add(cell.mpm.value);
        hcr_ood.add(cell.hcr.value);
      }
      report.cells.push_back(std::move(cell));
    }
    RouterAverages avg;
    avg.router = router;
    avg.auroc_id = auroc_id.result();
    avg.lpm_id = lpm_id.result();
    avg.mpm_id = mpm_id.result();
    avg.hcr_id = hcr_id.result();
    avg.auroc_ood = auroc_ood.result();
    avg.lpm_ood = lpm_ood.result();
    avg.mpm_ood = mpm_ood.result();
    avg.hcr_ood = hcr_ood.result();
    report.averages.push_back(std::move(avg));
  }
  return report;
}

std::vector<double> align_or_gap(const ScoreSet& scores, const std::string& router,
                                 const NamedDataset& ds) {
  try {
    return scores.aligned(ds.data);
  } catch (const ValidationError& e) {
    throw ValidationError("coverage gap for (scorer '" + router + "', dataset '" + ds.name +
                          "'): " + e.what());
  }
}

}  // namespace

MetricReport scenario_report(std::span<const NamedDataset> datasets,
                             std::span<const ScoreSet> scorers, const ScenarioConfig& cfg) {
  cfg.validate();
  std::vector<std::string> routers;
  std::vector<std::vector<double>> aligned;
  for (const auto& scorer : scorers) {
    routers.push_back(scorer.name);
    for (const auto& ds : datasets) aligned.push_back(align_or_gap(scorer, scorer.name, ds));
  }
  return assemble(datasets, routers, aligned, cfg);
}

MetricReport scenario_report(std::span<const NamedDataset> datasets,
                             const std::vector<std::vector<ScoreSet>>& grid,
                             const ScenarioConfig& cfg) {
  cfg.validate();
  std::vector<std::string> routers;
  std::vector<std::vector<double>> aligned;
  for (const auto& row : grid) {
    if (row.size() != datasets.size()) {
      throw ValidationError("score grid row does not cover every dataset");
    }
    const std::string name = row.empty() ? std::string() : row.front().name;
    routers.push_back(name);
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      aligned.push_back(align_or_gap(row[d], name, datasets[d]));
    }
  }
  return assemble(datasets, routers, aligned, cfg);
}

}  // namespace routerx
