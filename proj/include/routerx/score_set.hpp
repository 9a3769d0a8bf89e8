#pragma once

#include <map>
#include <string>
#include <vector>

#include "routerx/dataset.hpp"

namespace routerx {

/// Router scores for one source. Higher always means "route to the large
/// model".
struct ScoreSet {
  std::string name;
  std::map<std::string, double> scores;

  /// Scores in the dataset's record order; throws ValidationError naming the
  /// first id without a score.
  std::vector<double> aligned(const RoutingDataset& dataset) const;
};

}  // namespace routerx
