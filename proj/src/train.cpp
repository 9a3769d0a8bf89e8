#include "routerx/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "routerx/error.hpp"
#include "routerx/format.hpp"

namespace routerx {
namespace {

void require_states(const RoutingDataset& ds, const char* role) {
  if (!ds.states) {
    throw ValidationError(std::string(role) + " dataset has no hidden states attached");
  }
  for (const auto& r : ds.records) {
    if (!ds.states->contains(r.query_id)) {
      throw ValidationError("missing hidden state for query '" + r.query_id + "'");
    }
  }
}

void require_both_classes(const RoutingDataset& ds) {
  bool pos = false, neg = false;
  for (const auto& r : ds.records) (r.label == 1 ? pos : neg) = true;
  if (!pos || !neg) throw ValidationError("degenerate labels");
}

}  // namespace

std::string_view to_string(GradEstimator g) {
  return g == GradEstimator::kScoreFunction ? "score_function" : "pathwise";
}

GradEstimator parse_grad_estimator(std::string_view name) {
  if (name == "score_function") return GradEstimator::kScoreFunction;
  if (name == "pathwise") return GradEstimator::kPathwise;
  throw ValidationError("unknown gradient estimator '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be positive");
  if (batch_size < 1) throw ValidationError("train: batch_size must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ValidationError("train: Adam moment decay must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train: Adam epsilon must be positive");
  if (head == HeadKind::kMlp1 && hidden == 0) throw ValidationError("train: hidden must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train: train_fraction must lie in (0,1)");
  }
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

double evaluate_loss(const RoutingDataset& dataset, const ProbeParams& params) {
  if (dataset.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : dataset.records) {
    total += bce(forward(dataset.states->at(r.query_id), params).p_correct, r.label);
  }
  return total / static_cast<double>(dataset.size());
}

TrainResult train(const RoutingDataset& train_set, const RoutingDataset& validation_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  require_states(train_set, "training");
  if (!validation_set.empty()) require_states(validation_set, "validation");
  require_both_classes(train_set);

  const HiddenStateStore& store = *train_set.states;
  Rng rng(cfg.seed);
  TrainResult result;
  result.params = ProbeParams::initial(cfg.variant, store.layers(), store.dim(), cfg.head,
                                       cfg.hidden, &rng);
  ProbeParams& params = result.params;

  std::vector<double> flat = params.pack();
  std::vector<double> grad(flat.size(), 0.0);
  Adam opt(flat.size(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const bool sampled = params.variant == Variant::kDirichlet;
  std::vector<std::vector<double>> samples;
  std::vector<double> losses;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      samples.clear();
      losses.clear();
      const auto alpha = sampled ? concentration(params) : std::vector<double>{};
      const auto fixed = sampled ? std::vector<double>{} : effective_weights(params);

      for (std::size_t i = start; i < stop; ++i) {
        const QueryRecord& rec = train_set.records[order[i]];
        const LayerMatrix& states = store.at(rec.query_id);
        DirichletDraw draw;
        if (sampled) draw = draw_dirichlet(alpha, rng);
        const std::span<const double> weights = sampled ? draw.weights : fixed;
        const ExampleGradient eg =
            accumulate_head_gradient(states, params, weights, rec.label, scale, grad);

        if (params.variant == Variant::kSoftmaxFixed) {
          accumulate_softmax_gradient(params, eg.d_weights, scale, grad);
        } else if (sampled && cfg.grad_estimator == GradEstimator::kPathwise) {
          accumulate_pathwise_gradient(params, draw.gammas, eg.d_weights, scale, grad);
        } else if (sampled) {
          samples.push_back(std::move(draw.weights));
          losses.push_back(eg.loss);
        }
      }
      if (sampled && cfg.grad_estimator == GradEstimator::kScoreFunction) {
        accumulate_score_function_gradient(params, samples, losses, grad);
      }
      opt.step(flat, grad);
      params.unpack(flat);
    }
    result.history.push_back({epoch, evaluate_loss(train_set, params),
                              evaluate_loss(validation_set, params)});
  }
  return result;
}

TrainResult train(const RoutingDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  const Split parts = split(dataset, cfg.train_fraction, cfg.seed);
  return train(parts.train, parts.validation, cfg);
}

ScoreSet score_dataset(const RoutingDataset& dataset, const ProbeParams& params,
                       std::string name) {
  if (!dataset.states) throw ValidationError("dataset has no hidden states attached");
  ScoreSet out;
  out.name = std::move(name);
  for (const auto& r : dataset.records) {
    if (!dataset.states->contains(r.query_id)) {
      throw ValidationError("missing hidden state for query '" + r.query_id + "'");
    }
    out.scores.emplace(r.query_id, forward(dataset.states->at(r.query_id), params).score);
  }
  return out;
}

void write_history_csv(const std::vector<EpochLoss>& history, std::ostream& out) {
  out << "epoch,train_loss,validation_loss\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << format_number(e.train_loss) << ','
        << format_number(e.validation_loss) << '\n';
  }
}

void write_history_csv(const std::vector<EpochLoss>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  write_history_csv(history, out);
  if (!out) throw Error("I/O failure: writing '" + path.string() + "'");
}

}  // namespace routerx
