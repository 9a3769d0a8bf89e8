// routerx_synth: writes a self-contained synthetic experiment (stores, labels,
// token dumps, an external score file and a run config) for trying the CLI.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "routerx/baselines.hpp"
#include "routerx/error.hpp"
#include "routerx/random.hpp"
#include "routerx/synthetic.hpp"
#include "routerx/tensorstore.hpp"

namespace fs = std::filesystem;
using namespace routerx;
using Json = nlohmann::ordered_json;

namespace {

void write_labels(const RoutingDataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  for (const auto& r : ds.records) {
    out << Json{{"query_id", r.query_id},
                {"domain", r.domain},
                {"label", r.label},
                {"delta_small", r.delta_small},
                {"delta_large", r.delta_large}}
               .dump()
        << '\n';
  }
}

void write_tokens(const RoutingDataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  write_token_dumps(*ds.tokens, out);
}

// Noisy self-assessment: confidence that the small model is right, which is
// a route_low signal.
void write_external(const RoutingDataset& ds, std::uint64_t seed, const fs::path& path) {
  Rng rng(seed);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  out << Json{{"name", "SelfAsk"}, {"orientation", "route_low"}}.dump() << '\n';
  for (const auto& r : ds.records) {
    const double confidence = 1.0 / (1.0 + std::exp(-(2.0 * r.delta_small - 1.0 + rng.normal())));
    out << Json{{"query_id", r.query_id}, {"score", confidence}}.dump() << '\n';
  }
}

// Token-level states whose mean is the pooled matrix up to float rounding.
void write_raw(const RoutingDataset& ds, std::uint64_t seed, const fs::path& path) {
  Rng rng(seed);
  const HiddenStateStore& store = *ds.states;
  std::vector<RawTokenEntry> entries;
  for (const auto& [id, m] : store.entries()) {
    const std::size_t tokens = 2 + rng.below(3);
    TokenStates t{tokens, m.rows(), m.cols(), std::vector<double>(tokens * m.rows() * m.cols())};
    for (std::size_t l = 0; l < m.rows(); ++l) {
      for (std::size_t d = 0; d < m.cols(); ++d) {
        double sum = 0.0;
        for (std::size_t k = 0; k + 1 < tokens; ++k) {
          const double noise = 0.1 * rng.normal();
          t.values[(k * m.rows() + l) * m.cols() + d] = m.row(l)[d] + noise;
          sum += noise;
        }
        t.values[((tokens - 1) * m.rows() + l) * m.cols() + d] = m.row(l)[d] - sum;
      }
    }
    entries.push_back({id, std::move(t)});
  }
  write_token_states(entries, store.layers(), store.dim(), path);
}

void write_dataset(const RoutingDataset& ds, const fs::path& dir, std::uint64_t seed, bool raw) {
  fs::create_directories(dir);
  write_store(*ds.states, dir / "states.rxhs");
  write_labels(ds, dir / "labels.jsonl");
  write_tokens(ds, dir / "tokens.jsonl");
  write_external(ds, seed + 1, dir / "selfask.jsonl");
  if (raw) write_raw(ds, seed + 2, dir / "raw.rxht");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic routing experiment"};
  std::string out;
  SyntheticSpec id_spec;
  std::size_t ood_count = 1000;
  double ood_signal = 2.0;
  bool raw = false;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", id_spec.count, "In-domain queries")->capture_default_str();
  app.add_option("--ood-count", ood_count, "Out-of-domain queries")->capture_default_str();
  app.add_option("--layers", id_spec.layers)->capture_default_str();
  app.add_option("--dim", id_spec.dim)->capture_default_str();
  app.add_option("--signal", id_spec.signal, "In-domain class separation")->capture_default_str();
  app.add_option("--ood-signal", ood_signal, "Out-of-domain class separation")
      ->capture_default_str();
  app.add_option("--seed", id_spec.seed)->capture_default_str();
  app.add_flag("--raw", raw, "Also write raw token-state dumps for `routerx pool`");
  CLI11_PARSE(app, argc, argv);

  try {
    id_spec.domain = "synthetic_id";
    id_spec.id_prefix = "id";
    SyntheticSpec ood_spec = id_spec;
    ood_spec.count = ood_count;
    ood_spec.signal = ood_signal;
    ood_spec.seed = id_spec.seed + 1000;
    ood_spec.domain = "synthetic_ood";
    ood_spec.id_prefix = "ood";

    const fs::path root(out);
    write_dataset(make_synthetic(id_spec), root / "id", id_spec.seed, raw);
    write_dataset(make_synthetic(ood_spec), root / "ood", ood_spec.seed, raw);

    const auto dataset = [](const std::string& dir, bool in_domain) {
      return Json{{"labels", dir + "/labels.jsonl"},
                  {"states", dir + "/states.rxhs"},
                  {"tokens", dir + "/tokens.jsonl"},
                  {"in_domain", in_domain}};
    };
    Json config{
        {"datasets", Json{{"synth_id", dataset("id", true)}, {"synth_ood", dataset("ood", false)}}},
        {"scorers",
         Json{{"ProbeDirichlet", Json{{"type", "probe"}, {"params", "out/probe.json"}}},
              {"Entropy", Json{{"type", "baseline"}, {"baseline", "entropy"}}},
              {"MaxLogits", Json{{"type", "baseline"}, {"baseline", "max_logits"}}},
              {"ConfidenceMargin", Json{{"type", "baseline"}, {"baseline", "confidence_margin"}}},
              {"SelfAsk", Json{{"type", "external"},
                               {"paths", Json{{"synth_id", "id/selfask.jsonl"},
                                              {"synth_ood", "ood/selfask.jsonl"}}}}},
              {"Oracle", Json{{"type", "oracle"}}}}},
        {"scenario", Json{{"d1", 0.275}, {"rho1", 0.85}, {"rho2", 0.95}}},
        {"train", Json{{"datasets", Json::array({"synth_id"})},
                       {"output", "probe"},
                       {"epochs", 50},
                       {"learning_rate", 1e-4},
                       {"batch_size", 64},
                       {"seed", 42},
                       {"variant", "dirichlet"}}},
        {"output_dir", "out"}};
    std::ofstream cfg(root / "config.json", std::ios::trunc);
    cfg << config.dump(2) << '\n';
    if (!cfg) throw Error("I/O failure: writing config");
    std::cout << Json{{"written", (root / "config.json").string()}}.dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", e.what()}, {"kind", "runtime"}}.dump() << '\n';
    return 2;
  }
  return 0;
}
