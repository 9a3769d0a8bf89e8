#include "routerx/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "routerx/error.hpp"

namespace routerx {
namespace {

using Json = nlohmann::ordered_json;

void allow_keys(const Json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (allowed.count(key) == 0) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

// Names end up in output file names.
void check_name(const std::string& name, const char* what) {
  const bool ok = !name.empty() && name.front() != '.' &&
                  std::all_of(name.begin(), name.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
                           c == '.';
                  });
  if (!ok) {
    throw ValidationError(std::string("config: invalid ") + what + " name '" + name +
                          "' (use letters, digits, '_', '-', '.')");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const Json& value) {
  std::filesystem::path p(value.get<std::string>());
  return p.is_absolute() ? p : base / p;
}

DatasetSpec parse_dataset(const std::string& name, const Json& obj,
                          const std::filesystem::path& base) {
  const std::string where = "dataset '" + name + "'";
  allow_keys(obj, where, {"labels", "states", "tokens", "in_domain"});
  if (!obj.contains("labels")) throw ValidationError(where + ": missing 'labels'");
  DatasetSpec d;
  d.name = name;
  d.labels = resolve(base, obj.at("labels"));
  if (obj.contains("states")) d.states = resolve(base, obj.at("states"));
  if (obj.contains("tokens")) d.tokens = resolve(base, obj.at("tokens"));
  d.in_domain = obj.value("in_domain", true);
  return d;
}

ScorerSpec parse_scorer(const std::string& name, const Json& obj,
                        const std::filesystem::path& base) {
  const std::string where = "scorer '" + name + "'";
  allow_keys(obj, where, {"type", "params", "baseline", "path", "paths"});
  if (!obj.contains("type")) throw ValidationError(where + ": missing 'type'");
  ScorerSpec s;
  s.name = name;
  const auto type = obj.at("type").get<std::string>();
  if (type == "probe") {
    s.kind = ScorerKind::kProbe;
    if (!obj.contains("params")) throw ValidationError(where + ": missing 'params'");
    s.params = resolve(base, obj.at("params"));
  } else if (type == "baseline") {
    s.kind = ScorerKind::kBaseline;
    if (!obj.contains("baseline")) throw ValidationError(where + ": missing 'baseline'");
    s.baseline = parse_baseline(obj.at("baseline").get<std::string>());
  } else if (type == "external") {
    s.kind = ScorerKind::kExternal;
    if (obj.contains("path")) s.external = resolve(base, obj.at("path"));
    if (obj.contains("paths")) {
      for (const auto& [ds, p] : obj.at("paths").items()) {
        s.external_by_dataset.emplace(ds, resolve(base, p));
      }
    }
    if (!s.external && s.external_by_dataset.empty()) {
      throw ValidationError(where + ": external scorer needs 'path' or 'paths'");
    }
  } else if (type == "oracle") {
    s.kind = ScorerKind::kOracle;
  } else {
    throw ValidationError(where + ": unknown type '" + type + "'");
  }
  return s;
}

TrainSpec parse_train(const Json& obj) {
  allow_keys(obj, "train",
             {"datasets", "output", "epochs", "learning_rate", "batch_size", "seed",
              "grad_estimator", "variant", "head", "hidden", "train_fraction"});
  TrainSpec t;
  TrainConfig& c = t.config;
  if (obj.contains("datasets")) t.datasets = obj.at("datasets").get<std::vector<std::string>>();
  t.output = obj.value("output", t.output);
  c.epochs = obj.value("epochs", c.epochs);
  c.learning_rate = obj.value("learning_rate", c.learning_rate);
  c.batch_size = obj.value("batch_size", c.batch_size);
  c.seed = obj.value("seed", c.seed);
  if (obj.contains("grad_estimator")) {
    c.grad_estimator = parse_grad_estimator(obj.at("grad_estimator").get<std::string>());
  }
  if (obj.contains("variant")) c.variant = parse_variant(obj.at("variant").get<std::string>());
  if (obj.contains("head")) {
    const auto head = obj.at("head").get<std::string>();
    if (head == "linear") {
      c.head = HeadKind::kLinear;
    } else if (head == "mlp1") {
      c.head = HeadKind::kMlp1;
    } else {
      throw ValidationError("train: unknown head '" + head + "'");
    }
  }
  c.hidden = obj.value("hidden", c.hidden);
  c.train_fraction = obj.value("train_fraction", c.train_fraction);
  if (t.output.empty() || t.output.find('/') != std::string::npos) {
    throw ValidationError("train: 'output' must be a plain file stem");
  }
  c.validate();
  return t;
}

}  // namespace

const DatasetSpec& RunConfig::dataset(const std::string& name) const {
  for (const auto& d : datasets) {
    if (d.name == name) return d;
  }
  throw ValidationError("unknown dataset '" + name + "'");
}

const ScorerSpec& RunConfig::scorer(const std::string& name) const {
  for (const auto& s : scorers) {
    if (s.name == name) return s;
  }
  throw ValidationError("unknown scorer '" + name + "'");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  try {
    const Json doc = Json::parse(text);
    allow_keys(doc, "config", {"datasets", "scorers", "scenario", "train", "output_dir"});
    if (!doc.contains("datasets") || doc.at("datasets").empty()) {
      throw ValidationError("config: at least one dataset is required");
    }
    for (const auto& [name, obj] : doc.at("datasets").items()) {
      check_name(name, "dataset");
      cfg.datasets.push_back(parse_dataset(name, obj, base_dir));
    }
    if (doc.contains("scorers")) {
      for (const auto& [name, obj] : doc.at("scorers").items()) {
        check_name(name, "scorer");
        cfg.scorers.push_back(parse_scorer(name, obj, base_dir));
      }
    }
    if (doc.contains("scenario")) {
      const auto& s = doc.at("scenario");
      allow_keys(s, "scenario", {"d1", "rho1", "rho2"});
      cfg.scenario.d1 = s.value("d1", cfg.scenario.d1);
      cfg.scenario.rho1 = s.value("rho1", cfg.scenario.rho1);
      cfg.scenario.rho2 = s.value("rho2", cfg.scenario.rho2);
    }
    cfg.scenario.validate();
    if (doc.contains("train")) cfg.train = parse_train(doc.at("train"));
    if (doc.contains("output_dir")) cfg.output_dir = resolve(base_dir, doc.at("output_dir"));
    else cfg.output_dir = base_dir / cfg.output_dir;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  if (cfg.train.datasets.empty()) {
    for (const auto& d : cfg.datasets) {
      if (d.in_domain) cfg.train.datasets.push_back(d.name);
    }
  }
  for (const auto& name : cfg.train.datasets) {
    const auto& d = cfg.dataset(name);
    (void)d;
  }
  for (const auto& s : cfg.scorers) {
    for (const auto& [ds, _] : s.external_by_dataset) {
      (void)cfg.dataset(ds);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.has_parent_path() ? path.parent_path() : ".");
}

void check_paths(const RunConfig& config, bool check_scorers) {
  const auto must_exist = [](const std::filesystem::path& p, const std::string& what) {
    if (!std::filesystem::is_regular_file(p)) {
      throw ValidationError(what + ": file not found '" + p.string() + "'");
    }
  };
  for (const auto& d : config.datasets) {
    const std::string what = "dataset '" + d.name + "'";
    must_exist(d.labels, what + " labels");
    if (d.states) must_exist(*d.states, what + " states");
    if (d.tokens) must_exist(*d.tokens, what + " tokens");
  }
  if (!check_scorers) return;
  for (const auto& s : config.scorers) {
    const std::string what = "scorer '" + s.name + "'";
    if (s.kind == ScorerKind::kProbe) must_exist(s.params, what + " params");
    if (s.external) must_exist(*s.external, what + " scores");
    for (const auto& [_, p] : s.external_by_dataset) must_exist(p, what + " scores");
  }
}

LoadedDataset load_dataset(const DatasetSpec& spec) {
  LoadedDataset out;
  out.named.name = spec.name;
  out.named.in_domain = spec.in_domain;
  auto records = load_labels(spec.labels);
  for (const auto& r : records) out.delta_large_defaulted += r.delta_large_defaulted ? 1 : 0;
  try {
    if (spec.states) {
      auto store = std::make_shared<const HiddenStateStore>(read_store(*spec.states));
      JoinResult j = join(std::move(store), std::move(records));
      out.dropped_records += j.dropped_records;
      out.dropped_states = j.dropped_states;
      out.named.data = std::move(j.dataset);
    } else {
      out.named.data.records = std::move(records);
    }
    if (spec.tokens) {
      auto dumps = std::make_shared<const std::map<std::string, TokenDump>>(
          read_token_dumps(*spec.tokens));
      JoinResult j = join_tokens(std::move(dumps), std::move(out.named.data));
      out.dropped_records += j.dropped_records;
      out.dropped_tokens = j.dropped_states;
      out.named.data = std::move(j.dataset);
    }
  } catch (const ValidationError& e) {
    throw ValidationError("dataset '" + spec.name + "': " + e.what());
  } catch (const Error& e) {
    throw Error("dataset '" + spec.name + "': " + e.what());
  }
  if (out.named.data.empty()) throw ValidationError("dataset '" + spec.name + "': no records");
  return out;
}

ScoreSet ScoreResolver::resolve(const ScorerSpec& spec, const LoadedDataset& dataset) {
  const RoutingDataset& ds = dataset.named.data;
  ScoreSet out;
  out.name = spec.name;
  switch (spec.kind) {
    case ScorerKind::kOracle:
      for (const auto& r : ds.records) out.scores.emplace(r.query_id, 1.0 - r.delta_small);
      return out;
    case ScorerKind::kProbe: {
      auto it = params_.find(spec.params);
      if (it == params_.end()) it = params_.emplace(spec.params, load_params(spec.params)).first;
      if (!ds.states) {
        throw ValidationError("scorer '" + spec.name + "' needs hidden states for dataset '" +
                              dataset.named.name + "'");
      }
      return score_dataset(ds, it->second, spec.name);
    }
    case ScorerKind::kBaseline: {
      if (!ds.tokens) {
        throw ValidationError("scorer '" + spec.name + "' needs token dumps for dataset '" +
                              dataset.named.name + "'");
      }
      std::map<std::string, TokenDump> subset;
      for (const auto& r : ds.records) subset.emplace(r.query_id, ds.tokens->at(r.query_id));
      out = compute_baseline(spec.baseline, subset);
      out.name = spec.name;
      return out;
    }
    case ScorerKind::kExternal: {
      std::filesystem::path path;
      if (const auto it = spec.external_by_dataset.find(dataset.named.name);
          it != spec.external_by_dataset.end()) {
        path = it->second;
      } else if (spec.external) {
        path = *spec.external;
      } else {
        throw ValidationError("coverage gap for (scorer '" + spec.name + "', dataset '" +
                              dataset.named.name + "'): no score file");
      }
      auto it = external_.find(path);
      if (it == external_.end()) it = external_.emplace(path, load_external_scores(path)).first;
      out = it->second;
      out.name = spec.name;
      return out;
    }
  }
  return out;
}

}  // namespace routerx
