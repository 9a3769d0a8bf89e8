#include "routerx/curve.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "routerx/error.hpp"

namespace routerx {
namespace {

double mean_in_order(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// x where the segment (x0,y0)-(x1,y1) crosses level y; y0 != y1.
double crossing(const CurveKnot& a, const CurveKnot& b, double level) {
  const double x = a.call_rate + (level - a.performance) * (b.call_rate - a.call_rate) /
                                     (b.performance - a.performance);
  return std::clamp(x, a.call_rate, b.call_rate);
}

double lerp(const CurveKnot& a, const CurveKnot& b, double x) {
  if (x == a.call_rate) return a.performance;
  if (x == b.call_rate) return b.performance;
  return a.performance +
         (x - a.call_rate) * (b.performance - a.performance) / (b.call_rate - a.call_rate);
}

}  // namespace

CurvePoints sweep(std::span<const double> scores, std::span<const double> delta_small,
                  std::span<const double> delta_large) {
  const std::size_t n = scores.size();
  if (delta_small.size() != n || delta_large.size() != n) {
    throw ValidationError("misaligned scores");
  }
  if (n == 0) throw ValidationError("misaligned scores: empty dataset");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // suffix_small[k]: summed small-model performance of the queries left
  // unrouted once the top k are routed.
  std::vector<double> suffix_small(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) suffix_small[k] = suffix_small[k + 1] + delta_small[order[k]];

  CurvePoints curve;
  curve.perf_small = mean_in_order(delta_small);
  curve.perf_large = mean_in_order(delta_large);
  curve.points.push_back({0.0, curve.perf_small});

  const double count = static_cast<double>(n);
  double routed_large = 0.0;
  std::size_t k = 0;
  while (k < n) {
    const double threshold = scores[order[k]];
    while (k < n && scores[order[k]] == threshold) {
      routed_large += delta_large[order[k]];
      ++k;
    }
    if (k == n) break;
    curve.points.push_back(
        {static_cast<double>(k) / count, (routed_large + suffix_small[k]) / count});
  }
  curve.points.push_back({1.0, curve.perf_large});
  return curve;
}

CurvePoints sweep(std::span<const double> scores, const RoutingDataset& dataset) {
  const auto small = dataset.delta_small();
  const auto large = dataset.delta_large();
  return sweep(scores, small, large);
}

Phi::Phi(std::vector<CurveKnot> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw ValidationError("curve needs at least two knots");
  if (knots_.front().call_rate != 0.0 || knots_.back().call_rate != 1.0) {
    throw ValidationError("curve must span call rates 0 to 1");
  }
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!std::isfinite(knots_[i].performance)) throw ValidationError("non-finite performance");
    if (i > 0 && !(knots_[i].call_rate > knots_[i - 1].call_rate)) {
      throw ValidationError("curve call rates must be strictly increasing");
    }
  }
}

double Phi::min_value() const {
  return std::min_element(knots_.begin(), knots_.end(),
                          [](const CurveKnot& a, const CurveKnot& b) {
                            return a.performance < b.performance;
                          })
      ->performance;
}

double Phi::max_value() const {
  return std::max_element(knots_.begin(), knots_.end(),
                          [](const CurveKnot& a, const CurveKnot& b) {
                            return a.performance < b.performance;
                          })
      ->performance;
}

double Phi::operator()(double x) const {
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("call rate out of range");
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                                   [](double v, const CurveKnot& k) { return v < k.call_rate; });
  if (it == knots_.end()) return knots_.back().performance;
  return lerp(*(it - 1), *it, x);
}

double Phi::integral(double a, double b) const {
  if (a > b) throw ValidationError("empty interval");
  if (!(a >= 0.0 && b <= 1.0)) throw ValidationError("call rate out of range");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const CurveKnot& p = knots_[i];
    const CurveKnot& q = knots_[i + 1];
    const double lo = std::max(a, p.call_rate);
    const double hi = std::min(b, q.call_rate);
    if (hi <= lo) continue;
    area += 0.5 * (hi - lo) * (lerp(p, q, lo) + lerp(p, q, hi));
  }
  return area;
}

std::vector<Interval> Phi::band(double lo, double hi) const {
  std::vector<Interval> out;
  const auto append = [&](double a, double b) {
    if (!out.empty() && a <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, b);
    } else {
      out.push_back({a, b});
    }
  };
  if (lo > hi) return out;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const CurveKnot& p = knots_[i];
    const CurveKnot& q = knots_[i + 1];
    const double y0 = p.performance;
    const double y1 = q.performance;
    if (y0 == y1) {
      if (y0 >= lo && y0 <= hi) append(p.call_rate, q.call_rate);
      continue;
    }
    const double ymin = std::min(y0, y1);
    const double ymax = std::max(y0, y1);
    if (ymax < lo || ymin > hi) continue;
    double a = 0.0, b = 0.0;
    if (y0 < y1) {
      a = y0 >= lo ? p.call_rate : crossing(p, q, lo);
      b = y1 <= hi ? q.call_rate : crossing(p, q, hi);
    } else {
      a = y0 <= hi ? p.call_rate : crossing(p, q, hi);
      b = y1 >= lo ? q.call_rate : crossing(p, q, lo);
    }
    if (a <= b) append(a, b);
  }
  return out;
}

Phi interpolate(const CurvePoints& points) { return Phi(points.points); }

double evaluate(const Phi& phi, double x) { return phi(x); }

double integral(const Phi& phi, double a, double b) { return phi.integral(a, b); }

std::vector<Interval> solve_level(const Phi& phi, double tau) {
  return phi.band(tau, std::numeric_limits<double>::infinity());
}

}  // namespace routerx
