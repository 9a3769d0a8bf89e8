#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "routerx/dataset.hpp"
#include "routerx/probe.hpp"
#include "routerx/score_set.hpp"

namespace routerx {

enum class GradEstimator { kScoreFunction, kPathwise };

std::string_view to_string(GradEstimator g);
GradEstimator parse_grad_estimator(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  GradEstimator grad_estimator = GradEstimator::kScoreFunction;
  Variant variant = Variant::kDirichlet;
  HeadKind head = HeadKind::kLinear;
  std::size_t hidden = 64;
  /// Used only when train() is asked to split a single dataset.
  double train_fraction = 0.8;

  void validate() const;
};

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  ProbeParams params;
  std::vector<EpochLoss> history;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

/// Mini-batch training. Losses in the history are inference-mode mean BCE
/// over the full train and validation sets after each epoch.
TrainResult train(const RoutingDataset& train_set, const RoutingDataset& validation_set,
                  const TrainConfig& cfg);

/// Splits `dataset` with cfg.train_fraction and cfg.seed, then trains.
TrainResult train(const RoutingDataset& dataset, const TrainConfig& cfg);

/// Inference-mode router scores 1 - p_correct for every record.
ScoreSet score_dataset(const RoutingDataset& dataset, const ProbeParams& params,
                       std::string name = "probe");

/// Inference-mode mean BCE over the dataset.
double evaluate_loss(const RoutingDataset& dataset, const ProbeParams& params);

/// Header epoch,train_loss,validation_loss.
void write_history_csv(const std::vector<EpochLoss>& history, std::ostream& out);
void write_history_csv(const std::vector<EpochLoss>& history, const std::filesystem::path& path);

}  // namespace routerx
