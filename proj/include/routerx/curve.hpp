#pragma once

#include <limits>
#include <span>
#include <vector>

#include "routerx/dataset.hpp"

namespace routerx {

struct CurveKnot {
  double call_rate = 0.0;
  double performance = 0.0;

  bool operator==(const CurveKnot&) const = default;
};

/// Swept (call rate, performance) pairs, strictly increasing in call rate,
/// from x = 0 to x = 1.
struct CurvePoints {
  std::vector<CurveKnot> points;
  double perf_small = 0.0;
  double perf_large = 0.0;
};

/// Threshold sweep. A query is routed to the large model when its score is
/// at least the threshold; queries with equal scores cross together.
CurvePoints sweep(std::span<const double> scores, std::span<const double> delta_small,
                  std::span<const double> delta_large);
CurvePoints sweep(std::span<const double> scores, const RoutingDataset& dataset);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// Continuous piecewise-linear interpolant over [0, 1].
class Phi {
 public:
  /// Knots must start at 0, end at 1, and be strictly increasing in x.
  explicit Phi(std::vector<CurveKnot> knots);

  const std::vector<CurveKnot>& knots() const { return knots_; }
  double perf_small() const { return knots_.front().performance; }
  double perf_large() const { return knots_.back().performance; }
  double min_value() const;
  double max_value() const;

  double operator()(double x) const;

  /// Exact integral of the interpolant over [a, b].
  double integral(double a, double b) const;

  /// Maximal closed intervals where lo <= Phi(x) <= hi, sorted and disjoint.
  /// Touching pieces are merged; isolated points appear as zero-length
  /// intervals.
  std::vector<Interval> band(double lo, double hi) const;

 private:
  std::vector<CurveKnot> knots_;
};

Phi interpolate(const CurvePoints& points);

/// Throws ValidationError("call rate out of range") outside [0, 1].
double evaluate(const Phi& phi, double x);

/// Throws ValidationError("empty interval") when a > b.
double integral(const Phi& phi, double a, double b);

/// {x : Phi(x) >= tau} as maximal closed intervals.
std::vector<Interval> solve_level(const Phi& phi, double tau);

}  // namespace routerx
