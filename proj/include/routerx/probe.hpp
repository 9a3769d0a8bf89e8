#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "routerx/random.hpp"
#include "routerx/tensorstore.hpp"

namespace routerx {

enum class Variant { kDirichlet, kSoftmaxFixed, kMeanPool, kFinalLayer };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct LinearHead {
  std::vector<double> w;
  double b = 0.0;
};

/// One hidden rectifier layer: logit = w2 . relu(W1 z + b1) + b2.
struct MlpHead {
  Matrix<double> w1;  // hidden x dim
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
};

using Head = std::variant<LinearHead, MlpHead>;

enum class HeadKind { kLinear, kMlp1 };

struct ProbeParams {
  Variant variant = Variant::kDirichlet;
  std::size_t layers = 0;
  std::size_t dim = 0;
  /// Unnormalized layer logits. Also the fixed-weight logits of the
  /// softmax variant; never read by mean_pool or final_layer.
  std::vector<double> theta_alpha;
  /// Log of the total Dirichlet concentration.
  double beta0 = 0.0;
  Head head;

  /// Uniform start: theta = 0, beta0 = log L. Linear heads start at zero;
  /// MLP heads need a random start (a zero MLP has zero gradients), drawn
  /// from `rng`.
  static ProbeParams initial(Variant variant, std::size_t layers, std::size_t dim,
                             HeadKind head = HeadKind::kLinear, std::size_t hidden = 64,
                             Rng* rng = nullptr);

  /// Throws ValidationError on inconsistent sizes or non-finite values.
  void validate() const;

  /// Flat layout used by the optimizer and gradient checks:
  /// [theta_alpha (L)] [beta0] [head tensors in declaration order].
  std::size_t flat_size() const;
  std::vector<double> pack() const;
  void unpack(std::span<const double> flat);
};

/// alpha_l = exp(beta0) * softmax(theta_alpha)_l.
std::vector<double> concentration(const ProbeParams& params);

/// alpha / sum(alpha).
std::vector<double> expected_weights(std::span<const double> alpha);

/// Dirichlet draw: independent Gamma(alpha_l, 1) variates, normalized.
std::vector<double> sample_weights(std::span<const double> alpha, Rng& rng);

struct DirichletDraw {
  std::vector<double> gammas;
  std::vector<double> weights;
};

/// Same draw as sample_weights, keeping the unnormalized Gamma variates.
DirichletDraw draw_dirichlet(std::span<const double> alpha, Rng& rng);

/// Layer weights used at inference for any variant.
std::vector<double> effective_weights(const ProbeParams& params);

/// sum_l weights[l] * H[l, :].
std::vector<double> aggregate(const LayerMatrix& states, std::span<const double> weights);

double head_logit(const Head& head, std::span<const double> features);

struct ProbeOutput {
  double logit = 0.0;
  double p_correct = 0.5;
  /// 1 - p_correct: higher routes to the large model.
  double score = 0.5;
  /// Weight entropy when sampled, log total concentration at inference.
  /// Absent for variants without a Dirichlet.
  std::optional<double> uncertainty;
  /// The layer weights used for this pass.
  std::vector<double> weights;
};

/// Inference pass with expected weights; deterministic.
ProbeOutput forward(const LayerMatrix& states, const ProbeParams& params);

/// Training pass: dirichlet variants draw fresh weights from `rng`; other
/// variants behave as at inference.
ProbeOutput forward(const LayerMatrix& states, const ProbeParams& params, Rng& rng);

/// Forward with caller-provided layer weights.
ProbeOutput forward_with_weights(const LayerMatrix& states, const ProbeParams& params,
                                 std::span<const double> weights);

inline constexpr double kProbClamp = 1e-7;

double bce(double p_correct, int label);

/// Mean binary cross-entropy of p_correct against the small-model label.
double loss(std::span<const ProbeOutput> outputs, std::span<const int> labels);

/// Backprop of one example's loss with the layer weights held fixed.
/// Head gradients are added (times `scale`) into `grad` at the flat layout
/// offsets; returns dloss/dweights.
struct ExampleGradient {
  double loss = 0.0;
  std::vector<double> d_weights;
};

ExampleGradient accumulate_head_gradient(const LayerMatrix& states, const ProbeParams& params,
                                         std::span<const double> weights, int label,
                                         double scale, std::span<double> grad);

/// Score-function estimate of d E[loss] / d(theta_alpha, beta0), using the
/// mean sampled loss as the baseline. `samples[i]` is a Dirichlet draw and
/// `losses[i]` the loss it produced. Adds into grad[0 .. L].
void accumulate_score_function_gradient(const ProbeParams& params,
                                        std::span<const std::vector<double>> samples,
                                        std::span<const double> losses, std::span<double> grad);

/// d g / d alpha for a Gamma(alpha, 1) draw g, by central differences of the
/// inverse CDF at g's quantile.
double gamma_quantile_derivative(double alpha, double g, double step = 1e-4);

/// Pathwise (reparameterized) gradient through w = g / sum(g). `gammas` are
/// the unnormalized draws, `d_weights` the loss gradient wrt w; the result
/// (already divided by the batch size through `scale`) is added into
/// grad[0 .. L].
void accumulate_pathwise_gradient(const ProbeParams& params, std::span<const double> gammas,
                                  std::span<const double> d_weights, double scale,
                                  std::span<double> grad);

/// Gradient of loss wrt the fixed softmax weight logits, given dloss/dw.
void accumulate_softmax_gradient(const ProbeParams& params, std::span<const double> d_weights,
                                 double scale, std::span<double> grad);

struct LayerWeight {
  std::size_t layer = 0;  // 1-based
  double weight = 0.0;
};

/// Normalized inference weights with their layer indices.
std::vector<LayerWeight> layer_concentration(const ProbeParams& params);

void save_params(const ProbeParams& params, const std::filesystem::path& path);
ProbeParams load_params(const std::filesystem::path& path);
std::string params_to_json(const ProbeParams& params);
ProbeParams params_from_json(std::string_view text);

}  // namespace routerx
