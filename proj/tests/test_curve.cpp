#include <cmath>
#include <numeric>

#include <doctest.h>

#include "oracles.hpp"
#include "routerx/curve.hpp"
#include "test_util.hpp"

using namespace routerx;
using routerx::test::check_error;

namespace {

Phi line(double y0, double y1) { return Phi({{0.0, y0}, {1.0, y1}}); }

}  // namespace

TEST_CASE("sweep: all-equal scores give the two endpoints") {
  const std::vector<double> s{0.3, 0.3, 0.3}, small{1, 0, 1}, large{1, 1, 0};
  const auto c = sweep(s, small, large);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0] == CurveKnot{0.0, 2.0 / 3.0});
  CHECK(c.points[1] == CurveKnot{1.0, 2.0 / 3.0});
}

TEST_CASE("sweep: hand-enumerated three-query example") {
  const std::vector<double> s{0.9, 0.5, 0.1}, small{0, 1, 1}, large{1, 1, 1};
  const auto c = sweep(s, small, large);
  REQUIRE(c.points.size() == 4);
  const double expect_x[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  const double expect_y[] = {2.0 / 3.0, 1.0, 1.0, 1.0};
  for (int i = 0; i < 4; ++i) {
    CHECK(c.points[i].call_rate == doctest::Approx(expect_x[i]).epsilon(1e-15));
    CHECK(c.points[i].performance == doctest::Approx(expect_y[i]).epsilon(1e-15));
  }
}

TEST_CASE("sweep: oracle score reaches mean max(small, large) at the failure fraction") {
  Rng rng(4);
  const std::size_t n = 101;
  std::vector<double> small(n), large(n), oracle(n);
  double failures = 0.0, best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    small[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    large[i] = rng.uniform() < 0.8 ? 1.0 : 0.0;
    oracle[i] = 1.0 - small[i];
    failures += 1.0 - small[i];
    best += std::max(small[i], large[i]);
  }
  const Phi phi = interpolate(sweep(oracle, small, large));
  CHECK(phi(failures / n) == doctest::Approx(best / n).epsilon(1e-12));
}

TEST_CASE("sweep matches brute-force threshold enumeration") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> s(n), small(n), large(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8));  // plenty of ties
      small[i] = rng.uniform();
      large[i] = rng.uniform();
    }
    const auto c = sweep(s, small, large);
    const auto brute = oracle::brute_force_curve(s, small, large);
    REQUIRE(c.points.size() == brute.size());
    for (std::size_t k = 0; k < brute.size(); ++k) {
      CHECK(c.points[k].call_rate == brute[k].first);
      CHECK(std::abs(c.points[k].performance - brute[k].second) < 1e-12);
    }
    // Call rates are k/n and non-decreasing in routed count.
    for (const auto& p : c.points) {
      const double k = p.call_rate * static_cast<double>(n);
      CHECK(std::abs(k - std::round(k)) < 1e-9);
    }
    CHECK(c.points.front().performance == oracle::mean(small));
    CHECK(c.points.back().performance == oracle::mean(large));
  }
}

TEST_CASE("sweep errors") {
  const std::vector<double> two{1, 2}, three{1, 2, 3};
  check_error([&] { sweep(two, three, three); }, "misaligned scores");
  const std::vector<double> nan{std::nan(""), 1, 2};
  check_error([&] { sweep(nan, three, three); }, "non-finite score");
}

TEST_CASE("evaluate") {
  CHECK(evaluate(line(0.5, 0.9), 0.5) == doctest::Approx(0.7).epsilon(1e-14));
  const Phi phi({{0.0, 0.6}, {0.4, 0.8}, {1.0, 0.8}});
  CHECK(evaluate(phi, 0.2) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(evaluate(phi, 0.4) == 0.8);
  CHECK(evaluate(phi, 0.0) == 0.6);
  CHECK(evaluate(phi, 1.0) == 0.8);
  check_error([&] { evaluate(phi, 1.0001); }, "call rate out of range");
  check_error([&] { evaluate(phi, -0.1); }, "call rate out of range");
}

TEST_CASE("Phi construction validates knots") {
  check_error([] { Phi({{0.0, 0.1}}); }, "two knots");
  check_error([] { Phi({{0.1, 0.1}, {1.0, 0.2}}); }, "span");
  check_error([] { Phi({{0.0, 0.1}, {0.5, 0.2}, {0.5, 0.3}, {1.0, 0.2}}); }, "strictly increasing");
}

TEST_CASE("integral") {
  const Phi phi = line(0.5, 0.9);
  CHECK(integral(phi, 0.3, 0.3) == 0.0);
  CHECK(integral(phi, 0.0, 1.0) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(integral(phi, 0.0, 0.5) == doctest::Approx(0.3).epsilon(1e-14));
  check_error([&] { integral(phi, 0.6, 0.5); }, "empty interval");

  // Constant-performance dataset integrates to the constant.
  const std::vector<double> s{0.1, 0.4, 0.2, 0.9}, c{0.7, 0.7, 0.7, 0.7};
  CHECK(std::abs(integral(interpolate(sweep(s, c, c)), 0.0, 1.0) - 0.7) <= 1e-12);
}

TEST_CASE("integral agrees with a fine grid on random curves") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CurveKnot> knots{{0.0, rng.uniform()}};
    const std::size_t inner = rng.below(6);
    std::vector<double> xs;
    for (std::size_t i = 0; i < inner; ++i) xs.push_back(rng.uniform());
    std::sort(xs.begin(), xs.end());
    for (double x : xs) knots.push_back({x, rng.uniform()});
    knots.push_back({1.0, rng.uniform()});
    const Phi phi(knots);
    const double a = 0.3 * rng.uniform();
    const double b = 0.5 + 0.5 * rng.uniform();
    const double grid = oracle::grid_integral([&](double x) { return phi(x); }, a, b, 100000);
    CHECK(std::abs(phi.integral(a, b) - grid) < 1e-6);
  }
}

TEST_CASE("solve_level") {
  const Phi tent({{0.0, 0.0}, {0.5, 1.0}, {1.0, 0.0}});
  CHECK(solve_level(tent, -0.1) == std::vector<Interval>{{0.0, 1.0}});
  CHECK(solve_level(tent, 1.1).empty());
  const auto mid = solve_level(tent, 0.5);
  REQUIRE(mid.size() == 1);
  CHECK(mid[0].lo == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(mid[0].hi == doctest::Approx(0.75).epsilon(1e-15));
  // Touching the peak exactly yields a single point.
  const auto peak = solve_level(tent, 1.0);
  REQUIRE(peak.size() == 1);
  CHECK(peak[0].length() == 0.0);

  const Phi flat_top({{0.0, 0.2}, {0.3, 0.8}, {0.7, 0.8}, {1.0, 0.2}});
  const auto top = solve_level(flat_top, 0.8);
  REQUIRE(top.size() == 1);
  CHECK(top[0] == Interval{0.3, 0.7});
}

TEST_CASE("solve_level intervals match dense sampling") {
  Rng rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<CurveKnot> knots{{0.0, rng.uniform()}};
    const std::size_t inner = 1 + rng.below(8);
    for (std::size_t i = 1; i <= inner; ++i) {
      knots.push_back({static_cast<double>(i) / static_cast<double>(inner + 1), rng.uniform()});
    }
    knots.push_back({1.0, rng.uniform()});
    const Phi phi(knots);
    const double tau = rng.uniform();
    const auto ivs = solve_level(phi, tau);
    for (std::size_t i = 1; i < ivs.size(); ++i) CHECK(ivs[i - 1].hi < ivs[i].lo);
    for (int g = 0; g <= 10000; ++g) {
      const double x = g / 10000.0;
      const double y = phi(x);
      const bool inside = std::any_of(ivs.begin(), ivs.end(),
                                      [&](const Interval& iv) { return x >= iv.lo && x <= iv.hi; });
      // Points numerically on the boundary may land either way.
      if (std::abs(y - tau) > 1e-9) CHECK_MESSAGE(inside == (y >= tau), "x=" << x << " y=" << y);
    }
  }
}
