#include <cmath>
#include <numeric>

#include <doctest.h>

#include "oracles.hpp"
#include "routerx/metrics.hpp"
#include "test_util.hpp"

using namespace routerx;
using routerx::test::check_error;

namespace {

const Phi kIdentity({{0.0, 0.0}, {1.0, 1.0}});

Phi random_curve(Rng& rng) {
  std::vector<CurveKnot> knots{{0.0, rng.uniform()}};
  const std::size_t inner = rng.below(10);
  std::vector<double> xs;
  for (std::size_t i = 0; i < inner; ++i) xs.push_back(rng.uniform());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (double x : xs) knots.push_back({x, rng.uniform()});
  knots.push_back({1.0, rng.uniform()});
  return Phi(knots);
}

QueryRecord record(const std::string& id, double small, double large) {
  QueryRecord r;
  r.query_id = id;
  r.delta_small = small;
  r.delta_large = large;
  r.label = small >= 0.5 ? 1 : 0;
  return r;
}

}  // namespace

TEST_CASE("auroc examples") {
  const std::vector<int> labels{0, 0, 1, 1, 0, 1};
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9, 0.3, 0.7}, labels) == 1.0);
  CHECK(auroc(std::vector<double>(6, 0.4), labels) == 0.5);
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.1, 0.2, 0.7, 0.3}, labels) == 0.0);
  check_error([] { auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}); },
              "degenerate labels");
  check_error([] { auroc(std::vector<double>{1, 2}, std::vector<int>{1}); }, "misaligned");
}

TEST_CASE("auroc matches the pairwise oracle on tied random data") {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = static_cast<double>(rng.below(30)) / 7.0;
      y[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(auroc(s, y) - oracle::pairwise_auroc(s, y)) <= 1e-12);
  }
}

TEST_CASE("auroc ranking properties") {
  Rng rng(7);
  std::vector<double> s(150), t(150), neg(150);
  std::vector<int> y(150);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    t[i] = std::exp(3.0 * s[i]) + 5.0;  // strictly increasing transform
    neg[i] = -s[i];
    y[i] = i % 3 == 0 ? 1 : 0;
  }
  CHECK(auroc(s, y) == auroc(t, y));
  CHECK(std::abs(auroc(s, y) - (1.0 - auroc(neg, y))) <= 1e-15);
}

TEST_CASE("lpm") {
  const Phi c({{0.0, 0.42}, {0.3, 0.42}, {1.0, 0.42}});
  for (double d1 : {0.1, 0.275, 0.9, 1.0}) CHECK(std::abs(lpm(c, d1) - 0.42) <= 1e-15);
  const Phi line({{0.0, 0.5}, {1.0, 0.9}});
  CHECK(std::abs(lpm(line, 0.5) - 0.6) <= 1e-12);
  CHECK(std::abs(lpm(line, 1.0) - 0.7) <= 1e-12);
  check_error([&] { lpm(line, 0.0); }, "empty band");
}

TEST_CASE("hcr") {
  ScenarioConfig cfg;
  const auto h = hcr(kIdentity, cfg);
  REQUIRE(h.value);
  CHECK(std::abs(*h.value - 0.1) <= 1e-12);

  const Phi flat({{0.0, 0.3}, {1.0, 0.3}});
  check_error([&] { hcr(flat, cfg); }, "degenerate relative-performance scale");

  // The band collapses to the single point x = 1.
  const Phi dip({{0.0, 0.5}, {0.5, 0.5}, {1.0, 0.9}});
  ScenarioConfig top;
  top.rho1 = 1.0;
  top.rho2 = 1.0;
  const auto point = hcr(dip, top);
  CHECK_FALSE(point.value);
  CHECK(point.reason == "zero-measure feasible set");

  // Constant at perf_small over [0, 0.5] with rho1 > 0: only the rising
  // segment can qualify.
  const auto rising = hcr(dip, cfg);
  REQUIRE(rising.value);
  CHECK(std::abs(*rising.value - 0.05) <= 1e-12);
}

TEST_CASE("hcr over the two intervals of a tent curve") {
  // perf_small = 0.1, perf_large = 0.2, peak 1.0; band [0.3, 0.5] hits both flanks.
  const Phi tent({{0.0, 0.1}, {0.5, 1.0}, {1.0, 0.2}});
  const double tau1 = 0.3, tau2 = 0.5;
  const auto band = tent.band(tau1, tau2);
  REQUIRE(band.size() == 2);
  double measure = 0.0, moment = 0.0;
  for (const auto& iv : band) {
    measure += iv.length();
    moment += 0.5 * (iv.hi * iv.hi - iv.lo * iv.lo);
  }
  bool defined = false;
  const double grid = oracle::grid_hcr([&](double x) { return tent(x); }, tau1, tau2, 100000,
                                       &defined);
  REQUIRE(defined);
  CHECK(std::abs((1.0 - moment / measure) - grid) < 1e-4);
}

TEST_CASE("hcr matches a grid estimate on random curves") {
  Rng rng(31);
  ScenarioConfig cfg;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const Phi phi = random_curve(rng);
    if (phi.perf_small() == phi.perf_large()) continue;
    const double ps = phi.perf_small(), pl = phi.perf_large();
    const double t1 = ps + cfg.rho1 * (pl - ps), t2 = ps + cfg.rho2 * (pl - ps);
    bool defined = false;
    const double grid = oracle::grid_hcr([&](double x) { return phi(x); }, std::min(t1, t2),
                                         std::max(t1, t2), 100000, &defined);
    const auto h = hcr(phi, cfg);
    if (!defined) continue;
    REQUIRE(h.value);
    CHECK(std::abs(*h.value - grid) < 1e-4);
    CHECK(*h.value >= 0.0);
    CHECK(*h.value <= 1.0);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("mpm") {
  ScenarioConfig cfg;
  const auto m = mpm(kIdentity, cfg);
  REQUIRE(m.d2);
  CHECK(std::abs(*m.d2 - 0.85) <= 1e-12);
  REQUIRE(m.mpm.value);
  CHECK(std::abs(*m.mpm.value - 0.5625) <= 1e-12);

  // Already above tau1 at x = 0; needs perf_large below perf_small.
  const Phi high({{0.0, 0.9}, {1.0, 0.5}});
  const auto early = mpm(high, cfg);
  REQUIRE(early.d2);
  CHECK(*early.d2 == 0.0);
  CHECK_FALSE(early.mpm.value);
  CHECK(early.mpm.reason == "empty mid band");

  // Phi ends at perf_large, so tau1 is always reachable for rho1 <= 1; a
  // threshold above the curve exercises the unreachable branch.
  ScenarioConfig over;
  over.rho1 = 1.5;
  over.rho2 = 1.5;
  const auto miss = mpm(kIdentity, over);
  CHECK_FALSE(miss.d2);
  CHECK_FALSE(miss.mpm.value);
  CHECK(miss.mpm.reason == "unreachable accuracy band");
}

TEST_CASE("mpm and lpm match grid estimates on random curves") {
  Rng rng(37);
  ScenarioConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const Phi phi = random_curve(rng);
    const auto f = [&](double x) { return phi(x); };
    const double base = oracle::grid_integral(f, 0.0, cfg.d1, 100000) / cfg.d1;
    const double got = lpm(phi, cfg.d1);
    CHECK(std::abs(got - base) < 1e-4);
    CHECK(got >= phi.min_value() - 1e-12);
    CHECK(got <= phi.max_value() + 1e-12);

    const double tau1 = phi.perf_small() + cfg.rho1 * (phi.perf_large() - phi.perf_small());
    const auto m = mpm(phi, cfg);
    const double reach = oracle::grid_first_reach(f, tau1, 100000);
    REQUIRE(m.d2);
    CHECK(std::abs(*m.d2 - reach) <= 1e-5);
    if (m.mpm.value) {
      const double g = oracle::grid_integral(f, cfg.d1, *m.d2, 100000) / (*m.d2 - cfg.d1);
      CHECK(std::abs(*m.mpm.value - g) < 1e-4);
    }
  }
}

TEST_CASE("scenario_report averages skip undefined cells") {
  auto make = [](const std::string& name, bool in_domain, std::vector<QueryRecord> recs) {
    NamedDataset d;
    d.name = name;
    d.in_domain = in_domain;
    d.data.records = std::move(recs);
    return d;
  };
  std::vector<NamedDataset> datasets;
  datasets.push_back(make("a", true,
                          {record("1", 1, 1), record("2", 0, 1), record("3", 1, 1),
                           record("4", 0, 1)}));
  datasets.push_back(make("b", true, {record("5", 1, 0), record("6", 0, 0)}));
  datasets.push_back(make("c", false, {record("7", 0, 1), record("8", 1, 1)}));

  ScoreSet s;
  s.name = "r";
  s.scores = {{"1", 0.1}, {"2", 0.9}, {"3", 0.2}, {"4", 0.8},
              {"5", 0.3}, {"6", 0.7}, {"7", 0.6}, {"8", 0.4}};
  const std::vector<ScoreSet> scorers{s};
  const auto report = scenario_report(datasets, scorers, ScenarioConfig{});
  REQUIRE(report.cells.size() == 3);
  CHECK(report.cells[0].auroc == 1.0);
  // Dataset b: perf_small 0.5, perf_large 0, so tau1 = 0.075; d2 = 0.
  CHECK_FALSE(report.cells[1].mpm.value);
  REQUIRE(report.averages.size() == 1);
  const auto& avg = report.averages[0];
  CHECK(avg.auroc_id.included == 2);
  CHECK(avg.mpm_id.included + avg.mpm_id.skipped == 2);
  CHECK(avg.mpm_id.skipped >= 1);
  CHECK(avg.auroc_ood.included == 1);
  REQUIRE(avg.auroc_id.value);
  CHECK(*avg.auroc_id.value ==
        doctest::Approx((report.cells[0].auroc + report.cells[1].auroc) / 2.0));
  if (avg.mpm_id.included == 1) {
    CHECK(*avg.mpm_id.value == *report.cells[0].mpm.value);
  }

  ScoreSet partial = s;
  partial.name = "gappy";
  partial.scores.erase("7");
  const std::vector<ScoreSet> gappy{s, partial};
  check_error([&] { scenario_report(datasets, gappy, ScenarioConfig{}); },
              "coverage gap for (scorer 'gappy', dataset 'c')");
}

TEST_CASE("scenario config validation") {
  ScenarioConfig c;
  c.d1 = 0.0;
  check_error([&] { c.validate(); }, "d1");
  c = {};
  c.rho1 = 0.96;
  check_error([&] { c.validate(); }, "rho1");
}
