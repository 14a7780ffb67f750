#pragma once

// Weighted binary edge classifier. The head is either logistic regression
// (hidden_dim = 0) or one tanh hidden layer; it emits two raw scores z0
// (prune) and z1 (retain) turned into probabilities by a two-way softmax.
// Training minimises class-weighted cross-entropy with AdamW under a linear
// warmup/decay schedule, with inverted dropout on the input features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/io.hpp"
#include "cgprune/matrix.hpp"
#include "cgprune/random.hpp"

namespace cgprune {

inline constexpr double kProbabilityClamp = 1e-12;
inline constexpr std::string_view kModelFormat = "cgprune-model-1";

// ---------------------------------------------------------------------------
// Probabilities and loss

struct ClassProbabilities {
  double prune = 0.5;   // p0
  double retain = 0.5;  // p1
};

inline ClassProbabilities softmax2(double z0, double z1) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m);
  const double e1 = std::exp(z1 - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

// Floor for the probability inside a log. A perfect prediction still costs
// exactly zero.
inline double clamp_probability(double p) { return std::max(p, kProbabilityClamp); }

// L = -(1/N) sum[w1 y log p1 + w2 (1-y) log(1-p1)], each log argument
// floored at kProbabilityClamp.
inline double weighted_ce_loss(std::span<const int> y, std::span<const double> p1, double w1, double w2) {
  if (y.empty()) throw UsageError("weighted_ce_loss: empty batch");
  if (y.size() != p1.size()) throw UsageError("weighted_ce_loss: label/probability length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum += y[i] ? w1 * std::log(clamp_probability(p1[i])) : w2 * std::log(clamp_probability(1.0 - p1[i]));
  }
  return -sum / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  double w_retain = 0.5;  // w1; the prune class gets 1 - w1
  double learning_rate = 1e-5;
  std::size_t epochs = 2;
  std::size_t warmup_steps = 100;
  double dropout_rate = 0.25;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 128;
  std::size_t hidden_dim = 0;
  bool standardize = true;
  std::uint64_t seed = 0;

  double w_prune() const noexcept { return 1.0 - w_retain; }

  void validate() const {
    if (!(w_retain > 0.0 && w_retain < 1.0)) throw UsageError("w_retain must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
    if (epochs == 0) throw UsageError("epochs must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout_rate must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw UsageError("AdamW betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw UsageError("AdamW epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
  }
};

inline Json to_json(const TrainConfig& c) {
  return Json{{"w_retain", c.w_retain},         {"w_prune", c.w_prune()},
              {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
              {"warmup_steps", c.warmup_steps}, {"dropout_rate", c.dropout_rate},
              {"beta1", c.beta1},               {"beta2", c.beta2},
              {"epsilon", c.epsilon},           {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},     {"hidden_dim", c.hidden_dim},
              {"standardize", c.standardize},   {"seed", c.seed}};
}

// Reads the keys present in j over the defaults in `base`.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}) {
  auto get = [&](const char* key, auto& field) {
    if (auto it = j.find(key); it != j.end()) {
      try {
        it->get_to(field);
      } catch (const Json::exception& e) {
        throw UsageError(std::string("train config '") + key + "': " + e.what());
      }
    }
  };
  get("w_retain", base.w_retain);
  get("learning_rate", base.learning_rate);
  get("epochs", base.epochs);
  get("warmup_steps", base.warmup_steps);
  get("dropout_rate", base.dropout_rate);
  get("beta1", base.beta1);
  get("beta2", base.beta2);
  get("epsilon", base.epsilon);
  get("weight_decay", base.weight_decay);
  get("batch_size", base.batch_size);
  get("hidden_dim", base.hidden_dim);
  get("standardize", base.standardize);
  get("seed", base.seed);
  return base;
}

// ---------------------------------------------------------------------------
// Model

enum class ModelKind { neural, random };

struct ParamBlock {
  std::string_view name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class PrunerModel {
 public:
  PrunerModel() = default;

  // Zero-initialised head; see init_parameters() for random weights.
  PrunerModel(std::size_t input_dim, std::size_t hidden_dim) : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    if (input_dim == 0) throw UsageError("model input_dim must be positive");
    std::size_t n = 0;
    for (const auto& b : blocks()) n = std::max(n, b.offset + b.size);
    params_.assign(n, 0.0);
  }

  // Coin-flip baseline: p_retain is a pseudo-random function of the edge.
  static PrunerModel random_baseline(std::size_t input_dim, std::uint64_t seed) {
    PrunerModel m;
    m.kind_ = ModelKind::random;
    m.input_dim_ = input_dim;
    m.seed_ = seed;
    return m;
  }

  ModelKind kind() const noexcept { return kind_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t s) noexcept { seed_ = s; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::vector<ParamBlock> blocks() const {
    if (kind_ == ModelKind::random) return {};
    const std::size_t d = input_dim_, h = hidden_dim_;
    if (h == 0) return {{"output_weight", 0, 2 * d}, {"output_bias", 2 * d, 2}};
    return {{"hidden_weight", 0, h * d},
            {"hidden_bias", h * d, h},
            {"output_weight", h * d + h, 2 * h},
            {"output_bias", h * d + h + 2 * h, 2}};
  }

  std::span<double> block(std::string_view name) {
    for (const auto& b : blocks())
      if (b.name == name) return {params_.data() + b.offset, b.size};
    throw UsageError("model has no parameter block '" + std::string(name) + "'");
  }
  std::span<const double> block(std::string_view name) const {
    return const_cast<PrunerModel*>(this)->block(name);
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  void init_parameters(std::uint64_t seed) {
    seed_ = seed;
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), 0.0);
    for (const auto& b : blocks()) {
      if (b.name == "hidden_weight" || b.name == "output_weight") {
        const std::size_t fan_in = b.name == "hidden_weight" || hidden_dim_ == 0 ? input_dim_ : hidden_dim_;
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < b.size; ++i) params_[b.offset + i] = uniform_real(rng, -a, a);
      }
    }
  }

  // Per-feature affine standardisation applied before the head. Empty means
  // identity.
  const std::vector<double>& feature_mean() const noexcept { return mean_; }
  const std::vector<double>& feature_scale() const noexcept { return scale_; }

  void set_standardizer(std::vector<double> mean, std::vector<double> scale) {
    if (mean.size() != scale.size() || (!mean.empty() && mean.size() != input_dim_))
      throw UsageError("standardizer dimension does not match the model");
    mean_ = std::move(mean);
    scale_ = std::move(scale);
  }

  void fit_standardizer(const Matrix& x) {
    if (x.cols != input_dim_) throw UsageError("standardizer: feature dimension mismatch");
    std::vector<double> mean(input_dim_, 0.0), scale(input_dim_, 1.0);
    if (x.rows > 0) {
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < input_dim_; ++j) mean[j] += x(i, j);
      for (double& m : mean) m /= static_cast<double>(x.rows);
      std::vector<double> var(input_dim_, 0.0);
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < input_dim_; ++j) {
          const double dlt = x(i, j) - mean[j];
          var[j] += dlt * dlt;
        }
      for (std::size_t j = 0; j < input_dim_; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(x.rows));
        scale[j] = sd > 1e-12 ? sd : 1.0;
      }
    }
    set_standardizer(std::move(mean), std::move(scale));
  }

  void standardize_into(std::span<const double> x, std::span<double> out) const {
    if (mean_.empty()) {
      std::copy(x.begin(), x.end(), out.begin());
      return;
    }
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean_[j]) / scale_[j];
  }

 private:
  ModelKind kind_ = ModelKind::neural;
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
  std::vector<double> mean_;
  std::vector<double> scale_;
};

namespace detail {

struct ForwardPass {
  std::vector<double> input;   // standardised, dropout applied
  std::vector<double> hidden;  // tanh activations, empty for logistic heads
  double z0 = 0.0;
  double z1 = 0.0;
};

// `mask` holds per-feature multipliers (0 or 1/(1-rate)); empty = no dropout.
inline void forward(const PrunerModel& m, std::span<const double> x, std::span<const double> mask,
                    ForwardPass& fp) {
  const std::size_t d = m.input_dim(), h = m.hidden_dim();
  fp.input.resize(d);
  m.standardize_into(x, fp.input);
  if (!mask.empty())
    for (std::size_t j = 0; j < d; ++j) fp.input[j] *= mask[j];

  std::span<const double> features = fp.input;
  if (h > 0) {
    const auto w = m.block("hidden_weight");
    const auto b = m.block("hidden_bias");
    fp.hidden.resize(h);
    for (std::size_t k = 0; k < h; ++k) {
      double a = b[k];
      for (std::size_t j = 0; j < d; ++j) a += w[k * d + j] * fp.input[j];
      fp.hidden[k] = std::tanh(a);
      if (!std::isfinite(fp.hidden[k])) throw NumericError("non-finite activation in block 'hidden_weight'");
    }
    features = fp.hidden;
  } else {
    fp.hidden.clear();
  }
  const auto w = m.block("output_weight");
  const auto b = m.block("output_bias");
  const std::size_t n = features.size();
  double z0 = b[0], z1 = b[1];
  for (std::size_t j = 0; j < n; ++j) {
    z0 += w[j] * features[j];
    z1 += w[n + j] * features[j];
  }
  if (!std::isfinite(z0) || !std::isfinite(z1)) throw NumericError("non-finite activation in block 'output_weight'");
  fp.z0 = z0;
  fp.z1 = z1;
}

inline std::uint64_t hash_doubles(std::span<const double> x, std::uint64_t h) {
  for (double v : x) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= kFnvPrime;
    }
  }
  return h;
}

inline double unit_from_hash(std::uint64_t h) {
  // splitmix64 finaliser to spread FNV output over all bits
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline ClassProbabilities predict_proba(const PrunerModel& m, std::span<const double> x) {
  if (x.size() != m.input_dim())
    throw UsageError("predict: feature dimension " + std::to_string(x.size()) + " != model input_dim " +
                     std::to_string(m.input_dim()));
  if (m.kind() == ModelKind::random) {
    const double p = detail::unit_from_hash(detail::hash_doubles(x, kFnvOffset ^ m.seed()));
    return {1.0 - p, p};
  }
  detail::ForwardPass fp;
  detail::forward(m, x, {}, fp);
  return softmax2(fp.z0, fp.z1);
}

// Probability that the edge should be retained. Dropout is never applied.
inline double predict(const PrunerModel& m, std::span<const double> x) { return predict_proba(m, x).retain; }

// Per-edge prediction; the random baseline keys its coin on the edge identity
// so edges with equal features still get independent draws.
inline double predict_edge(const PrunerModel& m, const EdgeKey& key, std::span<const double> x) {
  if (m.kind() != ModelKind::random) return predict(m, x);
  if (x.size() != m.input_dim()) throw UsageError("predict: feature dimension mismatch");
  return detail::unit_from_hash(EdgeKeyHash{}(key) ^ (m.seed() * 0x9e3779b97f4a7c15ULL));
}

// ---------------------------------------------------------------------------
// Gradients

// Inverted-dropout multipliers for a batch: each entry is 0 with probability
// `rate`, else 1/(1-rate).
inline Matrix make_dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix mask(rows, cols, 1.0);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.data) v = uniform_unit(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> gradients;  // same layout as PrunerModel::parameters()
};

// Mean weighted cross-entropy of a batch (rows of x) under an optional
// dropout mask.
inline double batch_loss(const PrunerModel& m, const Matrix& x, std::span<const int> y, double w1, double w2,
                         const Matrix* mask = nullptr) {
  if (x.rows == 0) throw UsageError("batch_loss: empty batch");
  if (x.rows != y.size()) throw UsageError("batch_loss: label count mismatch");
  std::vector<double> p1(x.rows);
  detail::ForwardPass fp;
  for (std::size_t i = 0; i < x.rows; ++i) {
    detail::forward(m, x.row(i), mask ? mask->row(i) : std::span<const double>{}, fp);
    p1[i] = softmax2(fp.z0, fp.z1).retain;
  }
  return weighted_ce_loss(y, p1, w1, w2);
}

// Analytic gradient of batch_loss with respect to every parameter.
inline LossAndGradients loss_gradients(const PrunerModel& m, const Matrix& x, std::span<const int> y, double w1,
                                       double w2, const Matrix* mask = nullptr) {
  if (m.kind() != ModelKind::neural) throw UsageError("loss_gradients: model has no trainable parameters");
  if (x.rows == 0) throw UsageError("loss_gradients: empty batch");
  if (x.rows != y.size()) throw UsageError("loss_gradients: label count mismatch");
  if (x.cols != m.input_dim()) throw UsageError("loss_gradients: feature dimension mismatch");
  if (mask && (mask->rows != x.rows || mask->cols != x.cols)) throw UsageError("loss_gradients: mask shape mismatch");

  const std::size_t d = m.input_dim(), h = m.hidden_dim();
  LossAndGradients out;
  out.gradients.assign(m.parameters().size(), 0.0);
  const auto blocks = m.blocks();
  auto offset_of = [&](std::string_view name) {
    for (const auto& b : blocks)
      if (b.name == name) return b.offset;
    return std::size_t{0};
  };
  const std::size_t ow = offset_of("output_weight"), ob = offset_of("output_bias");
  const std::size_t hw = offset_of("hidden_weight"), hb = offset_of("hidden_bias");
  const auto w_out = m.block("output_weight");
  const double inv_n = 1.0 / static_cast<double>(x.rows);

  detail::ForwardPass fp;
  std::vector<double> dhidden(h);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    detail::forward(m, x.row(i), mask ? mask->row(i) : std::span<const double>{}, fp);
    const double p1 = softmax2(fp.z0, fp.z1).retain;
    const double p_true = y[i] ? p1 : 1.0 - p1;
    const double pc = clamp_probability(p_true);
    const bool clamped = pc != p_true;
    // g = dL_i / d(z1 - z0); zero where the floor flattens the loss.
    double g;
    if (y[i]) {
      loss_sum += w1 * std::log(pc);
      g = clamped ? 0.0 : -w1 * (1.0 - p1);
    } else {
      loss_sum += w2 * std::log(pc);
      g = clamped ? 0.0 : w2 * p1;
    }
    g *= inv_n;
    if (g == 0.0) continue;

    std::span<const double> feat = h > 0 ? std::span<const double>(fp.hidden) : std::span<const double>(fp.input);
    const std::size_t n = feat.size();
    for (std::size_t j = 0; j < n; ++j) {
      out.gradients[ow + j] -= g * feat[j];
      out.gradients[ow + n + j] += g * feat[j];
    }
    out.gradients[ob + 0] -= g;
    out.gradients[ob + 1] += g;

    if (h > 0) {
      for (std::size_t k = 0; k < h; ++k) {
        const double dh = g * (w_out[n + k] - w_out[k]);
        dhidden[k] = dh * (1.0 - fp.hidden[k] * fp.hidden[k]);
      }
      for (std::size_t k = 0; k < h; ++k) {
        const double da = dhidden[k];
        for (std::size_t j = 0; j < d; ++j) out.gradients[hw + k * d + j] += da * fp.input[j];
        out.gradients[hb + k] += da;
      }
    }
  }
  out.loss = -loss_sum * inv_n;

  for (const auto& b : blocks)
    for (std::size_t i = 0; i < b.size; ++i)
      if (!std::isfinite(out.gradients[b.offset + i]))
        throw NumericError("non-finite gradient in block '" + std::string(b.name) + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

// One AdamW update with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
inline void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grads, double lr,
                       const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw UsageError("adamw_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw UsageError("adamw_step: optimizer state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * params[i]);
  }
}

// Linear warmup from 0 to the base rate over warmup_steps, then linear decay
// to 0 at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  const double base = cfg.learning_rate;
  if (step < cfg.warmup_steps) return base * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= total_steps) return 0.0;
  const std::size_t decay_span = total_steps - cfg.warmup_steps;
  return base * static_cast<double>(total_steps - step) / static_cast<double>(decay_span);
}

// ---------------------------------------------------------------------------
// Training

struct Dataset {
  Matrix x;
  std::vector<int> y;  // 1 = retain, 0 = prune

  std::size_t size() const noexcept { return y.size(); }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr_last = 0.0;
};

struct TrainResult {
  PrunerModel model;
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
  std::size_t total_steps = 0;
};

inline std::size_t schedule_steps(std::size_t samples, const TrainConfig& cfg) {
  return cfg.epochs * ((samples + cfg.batch_size - 1) / cfg.batch_size);
}

inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw UsageError("train: no samples");
  if (data.x.rows != data.size()) throw UsageError("train: feature/label count mismatch");

  TrainResult result;
  std::size_t positives = 0;
  for (int v : data.y) positives += v ? 1 : 0;
  if (positives == 0 || positives == data.size()) {
    result.warnings.push_back(std::string("training data has only ") +
                              (positives == 0 ? "prune" : "retain") + "-labeled samples");
  }

  PrunerModel model(data.x.cols, cfg.hidden_dim);
  model.init_parameters(cfg.seed);
  if (cfg.standardize) model.fit_standardizer(data.x);

  const std::size_t n = data.size();
  const std::size_t total = schedule_steps(n, cfg);
  result.total_steps = total;
  if (total < cfg.warmup_steps)
    result.warnings.push_back("schedule has fewer steps (" + std::to_string(total) + ") than warmup_steps (" +
                              std::to_string(cfg.warmup_steps) + ")");

  Rng rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  OptimizerState opt;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t step = 0;
  Matrix batch_x;
  std::vector<int> batch_y;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      batch_x = Matrix(0, data.x.cols);
      batch_x.data.reserve((end - start) * data.x.cols);
      batch_y.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch_x.append_row(data.x.row(order[k]));
        batch_y.push_back(data.y[order[k]]);
      }
      const Matrix mask = make_dropout_mask(batch_x.rows, batch_x.cols, cfg.dropout_rate, rng);
      const auto lg = loss_gradients(model, batch_x, batch_y, cfg.w_retain, cfg.w_prune(),
                                     cfg.dropout_rate > 0.0 ? &mask : nullptr);
      lr = lr_at(step, cfg, std::max(total, cfg.warmup_steps));
      adamw_step(opt, model.parameters(), lg.gradients, lr, cfg);
      loss_sum += lg.loss * static_cast<double>(end - start);
      ++step;
    }
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(n), lr});
  }
  for (const auto& b : model.blocks())
    for (std::size_t i = 0; i < b.size; ++i)
      if (!std::isfinite(model.parameters()[b.offset + i]))
        throw NumericError("non-finite parameter in block '" + std::string(b.name) + "' after training");
  result.model = std::move(model);
  return result;
}

inline std::string training_log_csv(std::span<const EpochLog> log) {
  std::string out = "epoch,mean_loss,lr_last\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," + format_double(e.lr_last) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Model files

inline Json model_to_json(const PrunerModel& m, const Json& extra = Json::object()) {
  Json j;
  j["format"] = kModelFormat;
  j["kind"] = m.kind() == ModelKind::random ? "random" : "neural";
  j["input_dim"] = m.input_dim();
  j["hidden_dim"] = m.hidden_dim();
  j["seed"] = m.seed();
  j["feature_mean"] = m.feature_mean();
  j["feature_scale"] = m.feature_scale();
  Json params = Json::object();
  for (const auto& b : m.blocks()) {
    auto blk = m.block(b.name);
    params[std::string(b.name)] = std::vector<double>(blk.begin(), blk.end());
  }
  j["parameters"] = std::move(params);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

inline PrunerModel model_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat)
      throw FormatError("model file: unsupported format '" + j.at("format").get<std::string>() + "'");
    const auto kind = j.at("kind").get<std::string>();
    const auto d = j.at("input_dim").get<std::size_t>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    if (kind == "random") return PrunerModel::random_baseline(d, seed);
    if (kind != "neural") throw FormatError("model file: unknown kind '" + kind + "'");
    PrunerModel m(d, j.at("hidden_dim").get<std::size_t>());
    m.set_seed(seed);
    for (const auto& b : m.blocks()) {
      auto values = j.at("parameters").at(std::string(b.name)).get<std::vector<double>>();
      if (values.size() != b.size)
        throw FormatError("model file: block '" + std::string(b.name) + "' has " + std::to_string(values.size()) +
                          " values, expected " + std::to_string(b.size));
      for (double v : values)
        if (!std::isfinite(v)) throw FormatError("model file: non-finite parameter");
      std::copy(values.begin(), values.end(), m.block(b.name).begin());
    }
    m.set_standardizer(j.at("feature_mean").get<std::vector<double>>(),
                       j.at("feature_scale").get<std::vector<double>>());
    return m;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

}  // namespace cgprune
