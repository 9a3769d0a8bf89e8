#include "routerx/baselines.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "routerx/error.hpp"

namespace routerx {
namespace {

template <typename Signal>
double token_mean(const TokenDump& dump, Signal signal) {
  if (dump.tokens.empty()) throw ValidationError("empty sequence for '" + dump.query_id + "'");
  double total = 0.0;
  for (const auto& t : dump.tokens) total += signal(t);
  return total / static_cast<double>(dump.tokens.size());
}

}  // namespace

double entropy_score(const TokenDump& dump) {
  return token_mean(dump, [](const TokenStat& t) { return t.entropy; });
}

double confidence_margin_score(const TokenDump& dump) {
  return -token_mean(dump, [](const TokenStat& t) { return t.max_prob - t.second_prob; });
}

double max_logits_score(const TokenDump& dump) {
  return -token_mean(dump, [](const TokenStat& t) { return t.max_logit; });
}

Baseline parse_baseline(std::string_view name) {
  if (name == "entropy" || name == "Entropy") return Baseline::kEntropy;
  if (name == "max_logits" || name == "MaxLogits") return Baseline::kMaxLogits;
  if (name == "confidence_margin" || name == "ConfidenceMargin") {
    return Baseline::kConfidenceMargin;
  }
  throw ValidationError("unknown baseline '" + std::string(name) + "'");
}

std::string_view baseline_name(Baseline b) {
  switch (b) {
    case Baseline::kEntropy:
      return "Entropy";
    case Baseline::kMaxLogits:
      return "MaxLogits";
    case Baseline::kConfidenceMargin:
      return "ConfidenceMargin";
  }
  return "unknown";
}

ScoreSet compute_baseline(Baseline kind, const std::map<std::string, TokenDump>& dumps) {
  ScoreSet out;
  out.name = baseline_name(kind);
  for (const auto& [id, dump] : dumps) {
    double s = 0.0;
    switch (kind) {
      case Baseline::kEntropy:
        s = entropy_score(dump);
        break;
      case Baseline::kMaxLogits:
        s = max_logits_score(dump);
        break;
      case Baseline::kConfidenceMargin:
        s = confidence_margin_score(dump);
        break;
    }
    out.scores.emplace(id, s);
  }
  return out;
}

ScoreSet load_external_scores(std::istream& in, std::string name) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool negate = false;
  ScoreSet out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      const auto obj = nlohmann::json::parse(line);
      if (!have_header) {
        if (!obj.is_object() || !obj.contains("orientation")) {
          throw ValidationError("unoriented score file");
        }
        const auto orientation = obj.at("orientation").get<std::string>();
        if (orientation == "route_low") {
          negate = true;
        } else if (orientation != "route_high") {
          throw ValidationError("unoriented score file: orientation must be route_high or route_low");
        }
        out.name = obj.contains("name") ? obj.at("name").get<std::string>() : std::string{};
        have_header = true;
        continue;
      }
      const auto id = obj.at("query_id").get<std::string>();
      const double score = obj.at("score").get<double>();
      if (id.empty()) throw ValidationError("empty query_id");
      if (!std::isfinite(score)) throw ValidationError("non-finite score");
      if (!out.scores.emplace(id, negate ? -score : score).second) {
        throw ValidationError("duplicate query id '" + id + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + "malformed score line: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  if (!have_header) throw ValidationError("unoriented score file");
  if (!name.empty()) out.name = std::move(name);
  return out;
}

ScoreSet load_external_scores(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  try {
    return load_external_scores(in, std::move(name));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_scores(const ScoreSet& scores, std::ostream& out) {
  out << nlohmann::ordered_json{{"name", scores.name}, {"orientation", "route_high"}}.dump()
      << '\n';
  for (const auto& [id, s] : scores.scores) {
    out << nlohmann::ordered_json{{"query_id", id}, {"score", s}}.dump() << '\n';
  }
}

}  // namespace routerx
