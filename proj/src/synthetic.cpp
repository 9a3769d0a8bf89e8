#include "routerx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "routerx/error.hpp"
#include "routerx/random.hpp"

namespace routerx {
namespace {

constexpr std::size_t kVocabTail = 8;

TokenStat draw_token(double confidence, Rng& rng) {
  const double top = std::clamp(confidence + 0.1 * rng.normal(), 0.15, 0.99);
  const double rest = 1.0 - top;
  const double second = std::min(top, rest * (0.3 + 0.5 * rng.uniform()));
  const double tail = (rest - second) / static_cast<double>(kVocabTail);
  double entropy = -top * std::log(top);
  if (second > 0.0) entropy -= second * std::log(second);
  if (tail > 0.0) entropy -= static_cast<double>(kVocabTail) * tail * std::log(tail);
  // Logits are log-probabilities up to a per-token shift.
  const double shift = 8.0 + rng.normal();
  return {top, second, std::max(entropy, 0.0), std::log(top) + shift};
}

}  // namespace

RoutingDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count == 0 || spec.layers == 0 || spec.dim == 0 || spec.signal_layer >= spec.layers) {
    throw ValidationError("synthetic: invalid shape");
  }
  if (spec.min_tokens == 0 || spec.max_tokens < spec.min_tokens) {
    throw ValidationError("synthetic: invalid token range");
  }
  Rng rng(spec.seed);
  Rng direction_rng(spec.direction_seed);
  std::vector<double> direction(spec.dim);
  double norm = 0.0;
  for (double& v : direction) {
    v = direction_rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : direction) v /= norm;

  auto store = std::make_shared<HiddenStateStore>(static_cast<std::uint32_t>(spec.layers),
                                                  static_cast<std::uint32_t>(spec.dim));
  auto dumps = std::make_shared<std::map<std::string, TokenDump>>();
  RoutingDataset ds;
  ds.records.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s%06zu", spec.id_prefix.c_str(), i);
    QueryRecord r;
    r.query_id = id;
    r.domain = spec.domain;
    r.label = rng.uniform() < spec.small_ok_rate ? 1 : 0;
    r.delta_small = r.label;
    r.delta_large = rng.uniform() < spec.large_ok_rate ? 1.0 : 0.0;

    LayerMatrix states(spec.layers, spec.dim);
    const double sign = r.label == 1 ? 1.0 : -1.0;
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const bool signal_here = l == spec.signal_layer;
      const double sigma = signal_here ? spec.signal_noise : spec.other_noise;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        double v = sigma * rng.normal();
        if (signal_here) v += sign * 0.5 * spec.signal * direction[d];
        states(l, d) = static_cast<float>(v);
      }
    }
    store->insert(r.query_id, std::move(states));

    TokenDump dump;
    dump.query_id = r.query_id;
    const std::size_t span = spec.max_tokens - spec.min_tokens + 1;
    const std::size_t tokens = spec.min_tokens + static_cast<std::size_t>(rng.below(span));
    // Per-query confidence level; the classes overlap.
    const double confidence =
        (r.label == 1 ? spec.confidence_easy : spec.confidence_hard) + spec.confidence_spread * rng.normal();
    for (std::size_t t = 0; t < tokens; ++t) dump.tokens.push_back(draw_token(confidence, rng));
    dumps->emplace(r.query_id, std::move(dump));

    ds.records.push_back(std::move(r));
  }
  ds.states = std::move(store);
  ds.tokens = std::move(dumps);
  return ds;
}

}  // namespace routerx
