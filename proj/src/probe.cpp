#include "routerx/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "routerx/error.hpp"

namespace routerx {
namespace {

constexpr int kParamsFormatVersion = 1;

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_states(const LayerMatrix& states, const ProbeParams& params) {
  if (states.rows() != params.layers || states.cols() != params.dim) {
    throw ValidationError("layer/dim mismatch: states are " + std::to_string(states.rows()) +
                          "x" + std::to_string(states.cols()) + ", probe expects " +
                          std::to_string(params.layers) + "x" + std::to_string(params.dim));
  }
}

bool uses_dirichlet(const ProbeParams& params) { return params.variant == Variant::kDirichlet; }

double weight_entropy(std::span<const double> w) {
  double h = 0.0;
  for (double v : w) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// Chain rule from d/d(alpha) to d/d(theta_alpha, beta0).
void chain_concentration(const ProbeParams& params, std::span<const double> d_alpha,
                         std::span<double> grad) {
  const auto alpha = concentration(params);
  const auto pi = softmax(params.theta_alpha);
  double weighted = 0.0;
  for (std::size_t l = 0; l < params.layers; ++l) weighted += alpha[l] * d_alpha[l];
  for (std::size_t k = 0; k < params.layers; ++k) {
    grad[k] += alpha[k] * d_alpha[k] - pi[k] * weighted;
  }
  grad[params.layers] += weighted;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kDirichlet:
      return "dirichlet";
    case Variant::kSoftmaxFixed:
      return "softmax_fixed";
    case Variant::kMeanPool:
      return "mean_pool";
    case Variant::kFinalLayer:
      return "final_layer";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "dirichlet") return Variant::kDirichlet;
  if (name == "softmax_fixed") return Variant::kSoftmaxFixed;
  if (name == "mean_pool") return Variant::kMeanPool;
  if (name == "final_layer") return Variant::kFinalLayer;
  throw ValidationError("unknown probe variant '" + std::string(name) + "'");
}

ProbeParams ProbeParams::initial(Variant variant, std::size_t layers, std::size_t dim,
                                 HeadKind head, std::size_t hidden, Rng* rng) {
  if (layers == 0 || dim == 0) throw ValidationError("layer/dim mismatch: L and D must be positive");
  ProbeParams p;
  p.variant = variant;
  p.layers = layers;
  p.dim = dim;
  p.theta_alpha.assign(layers, 0.0);
  p.beta0 = std::log(static_cast<double>(layers));
  if (head == HeadKind::kLinear) {
    p.head = LinearHead{std::vector<double>(dim, 0.0), 0.0};
    return p;
  }
  if (hidden == 0) throw ValidationError("MLP head needs a positive hidden size");
  if (rng == nullptr) throw ValidationError("MLP head initialization needs a seeded generator");
  MlpHead mlp;
  mlp.w1 = Matrix<double>(hidden, dim);
  mlp.b1.assign(hidden, 0.0);
  mlp.w2.assign(hidden, 0.0);
  const double a1 = std::sqrt(6.0 / static_cast<double>(dim + hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  for (double& v : mlp.w1.values()) v = a1 * (2.0 * rng->uniform() - 1.0);
  for (double& v : mlp.w2) v = a2 * (2.0 * rng->uniform() - 1.0);
  p.head = std::move(mlp);
  return p;
}

void ProbeParams::validate() const {
  if (layers == 0 || dim == 0) throw ValidationError("probe: L and D must be positive");
  if (theta_alpha.size() != layers) throw ValidationError("probe: theta_alpha must have L entries");
  if (!std::isfinite(beta0)) throw ValidationError("probe: beta0 must be finite");
  const auto finite = [](std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
  };
  if (variant == Variant::kDirichlet || variant == Variant::kSoftmaxFixed) {
    if (!finite(theta_alpha)) throw ValidationError("probe: theta_alpha must be finite");
  }
  if (const auto* lin = std::get_if<LinearHead>(&head)) {
    if (lin->w.size() != dim) throw ValidationError("probe: linear head must have D weights");
    if (!finite(lin->w) || !std::isfinite(lin->b)) throw ValidationError("probe: non-finite head");
  } else {
    const auto& mlp = std::get<MlpHead>(head);
    const std::size_t h = mlp.w1.rows();
    if (h == 0 || mlp.w1.cols() != dim || mlp.b1.size() != h || mlp.w2.size() != h) {
      throw ValidationError("probe: inconsistent MLP head shapes");
    }
    if (!finite(mlp.w1.values()) || !finite(mlp.b1) || !finite(mlp.w2) ||
        !std::isfinite(mlp.b2)) {
      throw ValidationError("probe: non-finite head");
    }
  }
}

std::size_t ProbeParams::flat_size() const {
  std::size_t n = layers + 1;
  if (const auto* lin = std::get_if<LinearHead>(&head)) return n + lin->w.size() + 1;
  const auto& mlp = std::get<MlpHead>(head);
  return n + mlp.w1.values().size() + mlp.b1.size() + mlp.w2.size() + 1;
}

std::vector<double> ProbeParams::pack() const {
  std::vector<double> flat;
  flat.reserve(flat_size());
  flat.insert(flat.end(), theta_alpha.begin(), theta_alpha.end());
  flat.push_back(beta0);
  if (const auto* lin = std::get_if<LinearHead>(&head)) {
    flat.insert(flat.end(), lin->w.begin(), lin->w.end());
    flat.push_back(lin->b);
  } else {
    const auto& mlp = std::get<MlpHead>(head);
    flat.insert(flat.end(), mlp.w1.values().begin(), mlp.w1.values().end());
    flat.insert(flat.end(), mlp.b1.begin(), mlp.b1.end());
    flat.insert(flat.end(), mlp.w2.begin(), mlp.w2.end());
    flat.push_back(mlp.b2);
  }
  return flat;
}

void ProbeParams::unpack(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw ValidationError("probe: flat parameter size mismatch");
  auto it = flat.begin();
  const auto take = [&it](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(theta_alpha);
  beta0 = *it++;
  if (auto* lin = std::get_if<LinearHead>(&head)) {
    take(lin->w);
    lin->b = *it++;
  } else {
    auto& mlp = std::get<MlpHead>(head);
    take(mlp.w1.values());
    take(mlp.b1);
    take(mlp.w2);
    mlp.b2 = *it++;
  }
}

std::vector<double> concentration(const ProbeParams& params) {
  auto alpha = softmax(params.theta_alpha);
  const double total = std::exp(params.beta0);
  for (double& a : alpha) a *= total;
  return alpha;
}

std::vector<double> expected_weights(std::span<const double> alpha) {
  double total = 0.0;
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("concentration must be positive");
    total += a;
  }
  std::vector<double> w(alpha.begin(), alpha.end());
  for (double& v : w) v /= total;
  return w;
}

DirichletDraw draw_dirichlet(std::span<const double> alpha, Rng& rng) {
  DirichletDraw draw;
  draw.gammas.resize(alpha.size());
  draw.weights.resize(alpha.size());
  if (alpha.size() == 1) {
    draw.gammas[0] = rng.gamma(alpha[0]);
    draw.weights[0] = 1.0;
    return draw;
  }
  double total = 0.0;
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    if (!(alpha[l] > 0.0)) throw ValidationError("concentration must be positive");
    draw.gammas[l] = std::max(rng.gamma(alpha[l]), std::numeric_limits<double>::min());
    total += draw.gammas[l];
  }
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    draw.weights[l] = std::max(draw.gammas[l] / total, std::numeric_limits<double>::min());
  }
  return draw;
}

std::vector<double> sample_weights(std::span<const double> alpha, Rng& rng) {
  return draw_dirichlet(alpha, rng).weights;
}

std::vector<double> effective_weights(const ProbeParams& params) {
  const std::size_t L = params.layers;
  switch (params.variant) {
    case Variant::kDirichlet:
      return expected_weights(concentration(params));
    case Variant::kSoftmaxFixed:
      return softmax(params.theta_alpha);
    case Variant::kMeanPool:
      return std::vector<double>(L, 1.0 / static_cast<double>(L));
    case Variant::kFinalLayer: {
      std::vector<double> w(L, 0.0);
      w[L - 1] = 1.0;
      return w;
    }
  }
  return {};
}

std::vector<double> aggregate(const LayerMatrix& states, std::span<const double> weights) {
  std::vector<double> z(states.cols(), 0.0);
  for (std::size_t l = 0; l < states.rows(); ++l) {
    const double w = weights[l];
    if (w == 0.0) continue;
    const auto row = states.row(l);
    for (std::size_t d = 0; d < z.size(); ++d) z[d] += w * static_cast<double>(row[d]);
  }
  return z;
}

double head_logit(const Head& head, std::span<const double> z) {
  if (const auto* lin = std::get_if<LinearHead>(&head)) {
    return std::inner_product(z.begin(), z.end(), lin->w.begin(), lin->b);
  }
  const auto& mlp = std::get<MlpHead>(head);
  double logit = mlp.b2;
  for (std::size_t h = 0; h < mlp.w1.rows(); ++h) {
    const auto row = mlp.w1.row(h);
    const double a = std::inner_product(z.begin(), z.end(), row.begin(), mlp.b1[h]);
    if (a > 0.0) logit += mlp.w2[h] * a;
  }
  return logit;
}

ProbeOutput forward_with_weights(const LayerMatrix& states, const ProbeParams& params,
                                 std::span<const double> weights) {
  check_states(states, params);
  if (weights.size() != params.layers) throw ValidationError("layer/dim mismatch: weights");
  ProbeOutput out;
  out.weights.assign(weights.begin(), weights.end());
  out.logit = head_logit(params.head, aggregate(states, weights));
  out.p_correct = sigmoid(out.logit);
  out.score = sigmoid(-out.logit);
  return out;
}

ProbeOutput forward(const LayerMatrix& states, const ProbeParams& params) {
  ProbeOutput out = forward_with_weights(states, params, effective_weights(params));
  if (uses_dirichlet(params)) {
    const auto alpha = concentration(params);
    out.uncertainty = std::log(std::accumulate(alpha.begin(), alpha.end(), 0.0));
  }
  return out;
}

ProbeOutput forward(const LayerMatrix& states, const ProbeParams& params, Rng& rng) {
  if (!uses_dirichlet(params)) return forward(states, params);
  const auto w = sample_weights(concentration(params), rng);
  ProbeOutput out = forward_with_weights(states, params, w);
  out.uncertainty = weight_entropy(w);
  return out;
}

double bce(double p_correct, int label) {
  const double p = std::clamp(p_correct, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double loss(std::span<const ProbeOutput> outputs, std::span<const int> labels) {
  if (outputs.size() != labels.size() || outputs.empty()) {
    throw ValidationError("loss: outputs and labels must align");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    total += bce(outputs[i].p_correct, labels[i]);
  }
  return total / static_cast<double>(outputs.size());
}

ExampleGradient accumulate_head_gradient(const LayerMatrix& states, const ProbeParams& params,
                                         std::span<const double> weights, int label,
                                         double scale, std::span<double> grad) {
  check_states(states, params);
  const auto z = aggregate(states, weights);
  const std::size_t L = params.layers;
  const std::size_t D = params.dim;
  std::size_t off = L + 1;
  std::vector<double> dz(D, 0.0);
  ExampleGradient eg;

  if (const auto* lin = std::get_if<LinearHead>(&params.head)) {
    const double logit = std::inner_product(z.begin(), z.end(), lin->w.begin(), lin->b);
    const double p = sigmoid(logit);
    eg.loss = bce(p, label);
    const double g = p - static_cast<double>(label);
    for (std::size_t d = 0; d < D; ++d) {
      grad[off + d] += scale * g * z[d];
      dz[d] = g * lin->w[d];
    }
    grad[off + D] += scale * g;
  } else {
    const auto& mlp = std::get<MlpHead>(params.head);
    const std::size_t H = mlp.w1.rows();
    std::vector<double> act(H);
    double logit = mlp.b2;
    for (std::size_t h = 0; h < H; ++h) {
      const auto row = mlp.w1.row(h);
      act[h] = std::inner_product(z.begin(), z.end(), row.begin(), mlp.b1[h]);
      if (act[h] > 0.0) logit += mlp.w2[h] * act[h];
    }
    const double p = sigmoid(logit);
    eg.loss = bce(p, label);
    const double g = p - static_cast<double>(label);
    const std::size_t w1_off = off;
    const std::size_t b1_off = w1_off + H * D;
    const std::size_t w2_off = b1_off + H;
    const std::size_t b2_off = w2_off + H;
    for (std::size_t h = 0; h < H; ++h) {
      if (!(act[h] > 0.0)) continue;
      grad[w2_off + h] += scale * g * act[h];
      const double da = g * mlp.w2[h];
      const auto row = mlp.w1.row(h);
      for (std::size_t d = 0; d < D; ++d) {
        grad[w1_off + h * D + d] += scale * da * z[d];
        dz[d] += da * row[d];
      }
      grad[b1_off + h] += scale * da;
    }
    grad[b2_off] += scale * g;
  }

  eg.d_weights.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const auto row = states.row(l);
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += dz[d] * static_cast<double>(row[d]);
    eg.d_weights[l] = s;
  }
  return eg;
}

void accumulate_score_function_gradient(const ProbeParams& params,
                                        std::span<const std::vector<double>> samples,
                                        std::span<const double> losses, std::span<double> grad) {
  if (samples.size() != losses.size() || samples.empty()) return;
  const std::size_t L = params.layers;
  const auto alpha = concentration(params);
  const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  const double psi_total = boost::math::digamma(total);
  std::vector<double> psi(L);
  for (std::size_t l = 0; l < L; ++l) psi[l] = boost::math::digamma(alpha[l]);

  const double n = static_cast<double>(samples.size());
  const double baseline = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
  std::vector<double> d_alpha(L, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double centered = (losses[i] - baseline) / n;
    if (centered == 0.0) continue;
    for (std::size_t l = 0; l < L; ++l) {
      const double w = std::max(samples[i][l], std::numeric_limits<double>::min());
      d_alpha[l] += centered * (psi_total - psi[l] + std::log(w));
    }
  }
  chain_concentration(params, d_alpha, grad);
}

double gamma_quantile_derivative(double alpha, double g, double step) {
  const double h = std::min(step, 0.5 * alpha);
  try {
    const double lower = boost::math::gamma_p(alpha, g);
    if (lower <= 0.5) {
      return (boost::math::gamma_p_inv(alpha + h, lower) -
              boost::math::gamma_p_inv(alpha - h, lower)) /
             (2.0 * h);
    }
    const double upper = boost::math::gamma_q(alpha, g);
    return (boost::math::gamma_q_inv(alpha + h, upper) -
            boost::math::gamma_q_inv(alpha - h, upper)) /
           (2.0 * h);
  } catch (const std::exception&) {
    // Quantile at the edge of representable probability: no usable signal.
    return 0.0;
  }
}

void accumulate_pathwise_gradient(const ProbeParams& params, std::span<const double> gammas,
                                  std::span<const double> d_weights, double scale,
                                  std::span<double> grad) {
  const std::size_t L = params.layers;
  const auto alpha = concentration(params);
  const double total = std::accumulate(gammas.begin(), gammas.end(), 0.0);
  double mean_term = 0.0;
  for (std::size_t k = 0; k < L; ++k) mean_term += (gammas[k] / total) * d_weights[k];
  std::vector<double> d_alpha(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double d_gamma = (d_weights[l] - mean_term) / total;
    d_alpha[l] = scale * d_gamma * gamma_quantile_derivative(alpha[l], gammas[l]);
  }
  chain_concentration(params, d_alpha, grad);
}

void accumulate_softmax_gradient(const ProbeParams& params, std::span<const double> d_weights,
                                 double scale, std::span<double> grad) {
  const auto w = softmax(params.theta_alpha);
  double mean_term = 0.0;
  for (std::size_t k = 0; k < params.layers; ++k) mean_term += w[k] * d_weights[k];
  for (std::size_t k = 0; k < params.layers; ++k) {
    grad[k] += scale * w[k] * (d_weights[k] - mean_term);
  }
}

std::vector<LayerWeight> layer_concentration(const ProbeParams& params) {
  const auto w = effective_weights(params);
  std::vector<LayerWeight> out;
  out.reserve(w.size());
  for (std::size_t l = 0; l < w.size(); ++l) out.push_back({l + 1, w[l]});
  return out;
}

std::string params_to_json(const ProbeParams& params) {
  nlohmann::ordered_json doc;
  doc["format"] = "routerx-probe";
  doc["version"] = kParamsFormatVersion;
  doc["variant"] = std::string(to_string(params.variant));
  doc["layers"] = params.layers;
  doc["dim"] = params.dim;
  doc["theta_alpha"] = params.theta_alpha;
  doc["beta0"] = params.beta0;
  nlohmann::ordered_json head;
  if (const auto* lin = std::get_if<LinearHead>(&params.head)) {
    head["type"] = "linear";
    head["w"] = lin->w;
    head["b"] = lin->b;
  } else {
    const auto& mlp = std::get<MlpHead>(params.head);
    head["type"] = "mlp1";
    head["hidden"] = mlp.w1.rows();
    head["activation"] = "relu";
    head["W1"] = std::vector<double>(mlp.w1.values().begin(), mlp.w1.values().end());
    head["b1"] = mlp.b1;
    head["w2"] = mlp.w2;
    head["b2"] = mlp.b2;
  }
  doc["head"] = std::move(head);
  return doc.dump(2) + "\n";
}

ProbeParams params_from_json(std::string_view text) {
  ProbeParams p;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format").get<std::string>() != "routerx-probe") {
      throw ValidationError("not a probe parameter document");
    }
    if (doc.at("version").get<int>() != kParamsFormatVersion) {
      throw ValidationError("unsupported probe parameter version");
    }
    p.variant = parse_variant(doc.at("variant").get<std::string>());
    p.layers = doc.at("layers").get<std::size_t>();
    p.dim = doc.at("dim").get<std::size_t>();
    p.theta_alpha = doc.at("theta_alpha").get<std::vector<double>>();
    p.beta0 = doc.at("beta0").get<double>();
    const auto& head = doc.at("head");
    const auto type = head.at("type").get<std::string>();
    if (type == "linear") {
      p.head = LinearHead{head.at("w").get<std::vector<double>>(), head.at("b").get<double>()};
    } else if (type == "mlp1") {
      const auto hidden = head.at("hidden").get<std::size_t>();
      auto w1 = head.at("W1").get<std::vector<double>>();
      if (w1.size() != hidden * p.dim) throw ValidationError("probe: W1 has the wrong size");
      MlpHead mlp;
      mlp.w1 = Matrix<double>(hidden, p.dim, std::move(w1));
      mlp.b1 = head.at("b1").get<std::vector<double>>();
      mlp.w2 = head.at("w2").get<std::vector<double>>();
      mlp.b2 = head.at("b2").get<double>();
      p.head = std::move(mlp);
    } else {
      throw ValidationError("unknown probe head type '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed probe parameters: ") + e.what());
  }
  p.validate();
  return p;
}

void save_params(const ProbeParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  out << params_to_json(params);
  if (!out) throw Error("I/O failure: writing '" + path.string() + "'");
}

ProbeParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return params_from_json(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace routerx
