#pragma once

#include <cstdint>
#include <string>

#include "routerx/dataset.hpp"

namespace routerx {

/// Generator for desk-scale routing tasks. Every layer carries isotropic
/// Gaussian noise; only `signal_layer` adds a class-dependent shift along a
/// fixed random unit direction, so the Bayes classifier is linear in that
/// layer. Token dumps are drawn so that queries the small model fails have
/// flatter next-token distributions on average.
struct SyntheticSpec {
  std::size_t count = 4000;
  std::size_t layers = 4;
  std::size_t dim = 16;
  std::size_t signal_layer = 1;  // 0-based
  double signal = 3.0;
  double signal_noise = 1.0;
  double other_noise = 0.5;
  /// Probability that the small model is adequate (label 1).
  double small_ok_rate = 0.5;
  /// Probability that the large model answers a query correctly.
  double large_ok_rate = 1.0;
  /// Mean top-token probability for queries the small model gets right
  /// and wrong, and the per-query spread around it.
  double confidence_easy = 0.7;
  double confidence_hard = 0.5;
  double confidence_spread = 0.12;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 12;
  std::uint64_t seed = 42;
  /// Seeds the signal direction separately, so datasets drawn with different
  /// `seed` share one task.
  std::uint64_t direction_seed = 7;
  std::string id_prefix = "q";
  std::string domain = "synthetic";
};

/// Records with binary delta values, plus attached states and token dumps.
RoutingDataset make_synthetic(const SyntheticSpec& spec);

}  // namespace routerx
