#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace routerx {

/// Seeded generator with platform-independent draws. The standard library
/// distributions are implementation-defined, so everything that feeds a
/// reproducible artifact goes through these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in the open interval (0, 1).
  double uniform();

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  double normal();

  /// Gamma(shape, 1) via Marsaglia-Tsang; shapes below one use the
  /// U^(1/shape) boost.
  double gamma(double shape);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace routerx
