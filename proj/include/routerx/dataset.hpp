#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "routerx/tensorstore.hpp"

namespace routerx {

struct QueryRecord {
  std::string query_id;
  std::string domain;
  double delta_small = 0.0;
  double delta_large = 0.0;
  /// 1 when the small model's answer is adequate (no routing needed).
  int label = 0;
  /// delta_large was absent on a judge-scored row and set to 1.
  bool delta_large_defaulted = false;
};

/// Records plus optional aligned hidden states and token dumps. Treated as
/// immutable once built; copies share the attached data.
struct RoutingDataset {
  std::vector<QueryRecord> records;
  std::shared_ptr<const HiddenStateStore> states;
  std::shared_ptr<const std::map<std::string, TokenDump>> tokens;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  std::vector<double> delta_small() const;
  std::vector<double> delta_large() const;
  std::vector<int> labels() const;
  /// 1 - label: the positive class for AUROC ("small model fails").
  std::vector<int> needs_large() const;
};

/// 1 iff s_small >= s_sota; scores must lie in [0, 10].
int derive_label_from_judge(double s_small, double s_sota);

std::vector<QueryRecord> load_labels(std::istream& in);
std::vector<QueryRecord> load_labels(const std::filesystem::path& path);

struct JoinResult {
  RoutingDataset dataset;
  std::size_t dropped_records = 0;
  std::size_t dropped_states = 0;
};

/// Restricts to the id intersection, keeping the record order.
JoinResult join(std::shared_ptr<const HiddenStateStore> store, std::vector<QueryRecord> records);

/// Same as join but for token dumps; the dataset keeps any attached states.
JoinResult join_tokens(std::shared_ptr<const std::map<std::string, TokenDump>> dumps,
                       RoutingDataset dataset);

/// Throws when any record lacks a hidden state or token dump in the
/// attached collections.
void check_coverage(const RoutingDataset& dataset);

inline constexpr double kDefaultTrainFraction = 0.8;
inline constexpr std::uint64_t kDefaultSeed = 42;

struct Split {
  RoutingDataset train;
  RoutingDataset validation;
};

/// Deterministic shuffle under `seed`; train receives floor(n * fraction).
Split split(const RoutingDataset& dataset, double train_fraction = kDefaultTrainFraction,
            std::uint64_t seed = kDefaultSeed);

/// Concatenates per-domain datasets. Ids must stay unique; attached stores
/// are merged into one.
RoutingDataset concat(std::span<const RoutingDataset> parts);

}  // namespace routerx
