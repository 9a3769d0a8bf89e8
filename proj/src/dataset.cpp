#include "routerx/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "routerx/error.hpp"
#include "routerx/random.hpp"

namespace routerx {
namespace {

double unit_interval(const nlohmann::json& obj, const char* field) {
  const double v = obj.at(field).get<double>();
  if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
    throw ValidationError(std::string("field '") + field + "' must lie in [0,1]");
  }
  return v;
}

void require(const nlohmann::json& obj, const char* field) {
  if (!obj.contains(field)) throw ValidationError(std::string("missing field '") + field + "'");
}

QueryRecord parse_record(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ValidationError("expected a JSON object");
  require(obj, "query_id");
  require(obj, "domain");
  QueryRecord r;
  r.query_id = obj.at("query_id").get<std::string>();
  if (r.query_id.empty()) throw ValidationError("empty query_id");
  r.domain = obj.at("domain").get<std::string>();

  const bool judged = obj.contains("judge_small") || obj.contains("judge_sota");
  if (judged) {
    require(obj, "judge_small");
    require(obj, "judge_sota");
    if (obj.contains("label")) throw ValidationError("row has both 'label' and judge scores");
    r.label = derive_label_from_judge(obj.at("judge_small").get<double>(),
                                      obj.at("judge_sota").get<double>());
    r.delta_small = r.label;
    if (obj.contains("delta_large")) {
      r.delta_large = unit_interval(obj, "delta_large");
    } else {
      r.delta_large = 1.0;
      r.delta_large_defaulted = true;
    }
    return r;
  }
  require(obj, "label");
  require(obj, "delta_small");
  require(obj, "delta_large");
  const auto& label = obj.at("label");
  if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
    throw ValidationError("field 'label' must be 0 or 1");
  }
  r.label = label.get<int>();
  r.delta_small = unit_interval(obj, "delta_small");
  r.delta_large = unit_interval(obj, "delta_large");
  return r;
}

}  // namespace

std::vector<double> RoutingDataset::delta_small() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.delta_small);
  return out;
}

std::vector<double> RoutingDataset::delta_large() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.delta_large);
  return out;
}

std::vector<int> RoutingDataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

std::vector<int> RoutingDataset::needs_large() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(1 - r.label);
  return out;
}

int derive_label_from_judge(double s_small, double s_sota) {
  const auto valid = [](double s) { return std::isfinite(s) && s >= 0.0 && s <= 10.0; };
  if (!valid(s_small) || !valid(s_sota)) throw ValidationError("invalid judge score");
  return s_small >= s_sota ? 1 : 0;
}

std::vector<QueryRecord> load_labels(std::istream& in) {
  std::vector<QueryRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    QueryRecord r;
    try {
      r = parse_record(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + "malformed line: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    if (!seen.insert(r.query_id).second) {
      throw ValidationError(where + "duplicate query id '" + r.query_id + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<QueryRecord> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  try {
    return load_labels(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

JoinResult join(std::shared_ptr<const HiddenStateStore> store, std::vector<QueryRecord> records) {
  if (!store) throw ValidationError("join requires a hidden-state store");
  JoinResult result;
  std::size_t matched = 0;
  for (auto& r : records) {
    if (store->contains(r.query_id)) {
      result.dataset.records.push_back(std::move(r));
      ++matched;
    } else {
      ++result.dropped_records;
    }
  }
  if (matched == 0) throw ValidationError("disjoint datasets");
  result.dropped_states = store->size() - matched;
  result.dataset.states = std::move(store);
  return result;
}

JoinResult join_tokens(std::shared_ptr<const std::map<std::string, TokenDump>> dumps,
                       RoutingDataset dataset) {
  if (!dumps) throw ValidationError("join requires token dumps");
  JoinResult result;
  result.dataset.states = dataset.states;
  std::size_t matched = 0;
  for (auto& r : dataset.records) {
    if (dumps->count(r.query_id) != 0) {
      result.dataset.records.push_back(std::move(r));
      ++matched;
    } else {
      ++result.dropped_records;
    }
  }
  if (matched == 0) throw ValidationError("disjoint datasets");
  result.dropped_states = dumps->size() - matched;
  result.dataset.tokens = std::move(dumps);
  return result;
}

void check_coverage(const RoutingDataset& dataset) {
  std::set<std::string> seen;
  for (const auto& r : dataset.records) {
    if (!seen.insert(r.query_id).second) {
      throw ValidationError("duplicate query id '" + r.query_id + "'");
    }
    if (dataset.states && !dataset.states->contains(r.query_id)) {
      throw ValidationError("missing hidden state for query '" + r.query_id + "'");
    }
    if (dataset.tokens && dataset.tokens->count(r.query_id) == 0) {
      throw ValidationError("missing token dump for query '" + r.query_id + "'");
    }
  }
}

Split split(const RoutingDataset& dataset, double train_fraction, std::uint64_t seed) {
  if (dataset.empty()) throw ValidationError("degenerate split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("degenerate split: fraction must lie in (0,1)");
  }
  const std::size_t n = dataset.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train == n) throw ValidationError("degenerate split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  Split out;
  out.train.states = out.validation.states = dataset.states;
  out.train.tokens = out.validation.tokens = dataset.tokens;
  out.train.records.reserve(n_train);
  out.validation.records.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    auto& side = i < n_train ? out.train : out.validation;
    side.records.push_back(dataset.records[order[i]]);
  }
  return out;
}

RoutingDataset concat(std::span<const RoutingDataset> parts) {
  RoutingDataset out;
  if (parts.empty()) return out;
  const bool with_states = parts.front().states != nullptr;
  const bool with_tokens = parts.front().tokens != nullptr;
  std::shared_ptr<HiddenStateStore> store;
  std::shared_ptr<std::map<std::string, TokenDump>> dumps;
  if (with_states) {
    store = std::make_shared<HiddenStateStore>(parts.front().states->layers(),
                                               parts.front().states->dim());
  }
  if (with_tokens) dumps = std::make_shared<std::map<std::string, TokenDump>>();

  std::set<std::string> seen;
  for (const auto& part : parts) {
    if ((part.states != nullptr) != with_states || (part.tokens != nullptr) != with_tokens) {
      throw ValidationError("cannot concatenate datasets with different attachments");
    }
    for (const auto& r : part.records) {
      if (!seen.insert(r.query_id).second) {
        throw ValidationError("duplicate query id '" + r.query_id + "' across datasets");
      }
      if (with_states) store->insert(r.query_id, part.states->at(r.query_id));
      if (with_tokens) {
        const auto it = part.tokens->find(r.query_id);
        if (it == part.tokens->end()) {
          throw ValidationError("missing token dump for query '" + r.query_id + "'");
        }
        dumps->emplace(r.query_id, it->second);
      }
      out.records.push_back(r);
    }
  }
  out.states = std::move(store);
  out.tokens = std::move(dumps);
  return out;
}

}  // namespace routerx
