#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

#include "routerx/score_set.hpp"
#include "routerx/tensorstore.hpp"

namespace routerx {

// Sequence-level logit baselines. Each is the mean of a per-token signal,
// oriented so that higher means "route to the large model".

/// Mean per-token entropy (nats).
double entropy_score(const TokenDump& dump);

/// -mean(max_prob - second_prob).
double confidence_margin_score(const TokenDump& dump);

/// -mean(max_logit).
double max_logits_score(const TokenDump& dump);

enum class Baseline { kEntropy, kMaxLogits, kConfidenceMargin };

Baseline parse_baseline(std::string_view name);
/// Report name: "Entropy", "MaxLogits", "ConfidenceMargin".
std::string_view baseline_name(Baseline b);

ScoreSet compute_baseline(Baseline kind, const std::map<std::string, TokenDump>& dumps);

/// Header line {"name", "orientation": "route_high" | "route_low"}, then
/// {"query_id", "score"} lines. route_low scores are negated. A non-empty
/// `name` overrides the header's.
ScoreSet load_external_scores(std::istream& in, std::string name = {});
ScoreSet load_external_scores(const std::filesystem::path& path, std::string name = {});

/// Writes a route_high score file readable by load_external_scores.
void write_scores(const ScoreSet& scores, std::ostream& out);

}  // namespace routerx
