#pragma once

// Enhanced-MLP hallucination detector.
//
//   h_l = Dropout(ReLU(BN(W_l h_{l-1} + b_l)))     hidden blocks, widths -> 256
//   p   = sigmoid(w_out . h_L + b_out)
//
// Objective: mean binary cross-entropy + lambda * ||W_1||_1. Trained with Adam
// (decoupled weight decay) and per-epoch cosine learning-rate decay.
// All arithmetic is double precision; matrices are batch-major (B x features).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsad/binary_io.hpp"
#include "hsad/error.hpp"

namespace hsad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline constexpr int kFinalHiddenWidth = 256;

struct HiddenLayer {
  Matrix weight;  // [out][in]
  Vector bias;
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

struct DetectorModel {
  int input_dim = 0;
  std::vector<int> hidden_sizes;
  double dropout_rate = 0.1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  std::vector<HiddenLayer> layers;
  Vector head_weight;
  double head_bias = 0.0;
  Json train_config = Json::object();

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size() +
                                    l.running_mean.size() + l.running_var.size());
    }
    return n + static_cast<std::size_t>(head_weight.size()) + 1;
  }
};

// Trainable tensors in a fixed order: per layer W, b, gamma, beta; then head
// weight and bias. Gradients use the same layout.
template <typename Model, typename Fn>
void for_each_trainable(Model& m, Fn&& fn) {
  for (auto& l : m.layers) {
    fn(std::span(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
    fn(std::span(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
    fn(std::span(l.gamma.data(), static_cast<std::size_t>(l.gamma.size())));
    fn(std::span(l.beta.data(), static_cast<std::size_t>(l.beta.size())));
  }
  fn(std::span(m.head_weight.data(), static_cast<std::size_t>(m.head_weight.size())));
  fn(std::span(&m.head_bias, 1));
}

inline void validate_hidden_sizes(const std::vector<int>& hidden, bool allow_any_width) {
  if (hidden.empty()) throw ConfigError("at least one hidden layer is required");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden sizes must be positive");
  }
  if (!allow_any_width && hidden.back() != kFinalHiddenWidth) {
    throw ConfigError("the last hidden layer must have width 256");
  }
}

// PyTorch-style init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); BN identity.
inline DetectorModel init_model(int input_dim, const std::vector<int>& hidden_sizes, double dropout_rate,
                                std::uint64_t seed, bool allow_any_width = false) {
  if (input_dim < 1) throw ConfigError("input dim must be positive");
  validate_hidden_sizes(hidden_sizes, allow_any_width);
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");

  DetectorModel m;
  m.input_dim = input_dim;
  m.hidden_sizes = hidden_sizes;
  m.dropout_rate = dropout_rate;
  m.seed = seed;
  Rng rng(seed);
  auto fill_uniform = [&rng](double* data, Eigen::Index n, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < n; ++i) data[i] = u(rng);
  };
  int fan_in = input_dim;
  for (int width : hidden_sizes) {
    HiddenLayer l;
    l.weight.resize(width, fan_in);
    l.bias.resize(width);
    fill_uniform(l.weight.data(), l.weight.size(), fan_in);
    fill_uniform(l.bias.data(), l.bias.size(), fan_in);
    l.gamma = Vector::Ones(width);
    l.beta = Vector::Zero(width);
    l.running_mean = Vector::Zero(width);
    l.running_var = Vector::Ones(width);
    m.layers.push_back(std::move(l));
    fan_in = width;
  }
  m.head_weight.resize(fan_in);
  fill_uniform(m.head_weight.data(), m.head_weight.size(), fan_in);
  fill_uniform(&m.head_bias, 1, fan_in);
  return m;
}

enum class Mode { train, eval };

struct LayerCache {
  Matrix input;     // B x in
  Matrix xhat;      // normalized pre-activation
  Vector inv_std;   // per feature
  Matrix bn_out;    // gamma * xhat + beta
  Matrix keep;      // dropout multiplier: 0 or 1/(1-p); empty when unused
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix last_hidden;
  Vector probs;
};

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

namespace detail {

inline void check_batch(const DetectorModel& model, const Matrix& batch, Mode mode) {
  if (batch.cols() != model.input_dim) {
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                     std::to_string(model.input_dim));
  }
  if (batch.rows() < 1) throw ShapeError("empty batch");
  if (mode == Mode::train && batch.rows() < 2) {
    throw DataError("train-mode batch norm needs a batch of at least 2");
  }
}

}  // namespace detail

// Eval-mode forward; never touches model state.
inline Vector forward_eval(const DetectorModel& model, const Matrix& batch) {
  detail::check_batch(model, batch, Mode::eval);
  Matrix x = batch;
  for (const auto& layer : model.layers) {
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    const Vector scale =
        layer.gamma.cwiseProduct((layer.running_var.array() + model.bn_eps).rsqrt().matrix());
    const Vector shift = layer.beta - layer.running_mean.cwiseProduct(scale);
    x = ((z.array().rowwise() * scale.transpose().array()).rowwise() + shift.transpose().array())
            .cwiseMax(0.0)
            .matrix();
  }
  const Vector logits = (x * model.head_weight).array() + model.head_bias;
  return logits.unaryExpr([](double z) { return sigmoid(z); });
}

// Train mode uses batch statistics, updates running statistics and applies
// inverted dropout drawn from `rng`. Eval mode uses running statistics only.
inline Vector forward(DetectorModel& model, const Matrix& batch, Mode mode, Rng& rng,
                      ForwardCache* cache = nullptr) {
  if (mode == Mode::eval && cache == nullptr) return forward_eval(model, batch);
  detail::check_batch(model, batch, mode);
  const auto b = static_cast<double>(batch.rows());
  if (cache) cache->layers.assign(model.layers.size(), {});

  Matrix x = batch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto& layer = model.layers[li];
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();

    Vector mean, var;
    if (mode == Mode::train) {
      mean = z.colwise().mean().transpose();
      var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
      const double m = model.bn_momentum;
      layer.running_mean = (1.0 - m) * layer.running_mean + m * mean;
      layer.running_var = (1.0 - m) * layer.running_var + m * var * (b / (b - 1.0));
    } else {
      mean = layer.running_mean;
      var = layer.running_var;
    }
    const Vector inv_std = (var.array() + model.bn_eps).rsqrt().matrix();
    Matrix xhat = (z.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
    Matrix bn = (xhat.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
                layer.beta.transpose().array();
    Matrix a = bn.cwiseMax(0.0);

    Matrix keep;
    if (mode == Mode::train && model.dropout_rate > 0.0) {
      keep.resize(a.rows(), a.cols());
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double scale = 1.0 / (1.0 - model.dropout_rate);
      for (Eigen::Index i = 0; i < keep.size(); ++i) {
        keep.data()[i] = u(rng) < model.dropout_rate ? 0.0 : scale;
      }
      a = a.cwiseProduct(keep);
    }
    if (cache) {
      auto& c = cache->layers[li];
      c.input = std::move(x);
      c.xhat = std::move(xhat);
      c.inv_std = inv_std;
      c.bn_out = std::move(bn);
      c.keep = std::move(keep);
    }
    x = std::move(a);
  }

  const Vector logits = (x * model.head_weight).array() + model.head_bias;
  Vector probs = logits.unaryExpr([](double z) { return sigmoid(z); });
  if (cache) {
    cache->last_hidden = std::move(x);
    cache->probs = probs;
  }
  return probs;
}

inline constexpr double kProbClamp = 1e-12;

inline double l1_norm_first_layer(const DetectorModel& model) {
  return model.layers.empty() ? 0.0 : model.layers.front().weight.cwiseAbs().sum();
}

inline double bce(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size() || probs.empty()) throw ShapeError("probability/label length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    total -= labels[i] != 0 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

inline double loss(std::span<const double> probs, std::span<const int> labels, const DetectorModel& model,
                   double l1_lambda) {
  return bce(probs, labels) + l1_lambda * l1_norm_first_layer(model);
}

struct Gradients {
  struct Layer {
    Matrix weight;
    Vector bias, gamma, beta;
  };
  std::vector<Layer> layers;
  Vector head_weight;
  double head_bias = 0.0;
};

// Backpropagates the objective through a train-mode cache.
inline Gradients backward(const DetectorModel& model, const ForwardCache& cache, std::span<const int> labels,
                          double l1_lambda) {
  const auto batch = static_cast<Eigen::Index>(labels.size());
  if (cache.probs.size() != batch) throw ShapeError("label count does not match the cached batch");
  const double inv_b = 1.0 / static_cast<double>(batch);

  // d(-log clamp(p))/dlogit vanishes where the clamp is active.
  Vector dlogit(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double p = cache.probs[i];
    const bool y = labels[static_cast<std::size_t>(i)] != 0;
    const bool clamped = y ? p > 1.0 - kProbClamp : p < kProbClamp;
    dlogit[i] = clamped ? 0.0 : (p - (y ? 1.0 : 0.0)) * inv_b;
  }

  Gradients g;
  g.layers.resize(model.layers.size());
  g.head_weight = cache.last_hidden.transpose() * dlogit;
  g.head_bias = dlogit.sum();
  Matrix upstream = dlogit * model.head_weight.transpose();  // B x last width

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& layer = model.layers[li];
    const auto& c = cache.layers[li];
    auto& gl = g.layers[li];
    if (c.keep.size() > 0) upstream = upstream.cwiseProduct(c.keep);
    const Matrix dbn = upstream.array() * (c.bn_out.array() > 0.0).cast<double>();
    gl.gamma = (dbn.cwiseProduct(c.xhat)).colwise().sum().transpose();
    gl.beta = dbn.colwise().sum().transpose();
    const Matrix dxhat = dbn.array().rowwise() * layer.gamma.transpose().array();
    const Vector sum_dxhat = dxhat.colwise().sum().transpose();
    const Vector sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).colwise().sum().transpose();
    // batch-statistics BN backward
    Matrix dz = (static_cast<double>(batch) * dxhat.array()).matrix();
    dz.rowwise() -= sum_dxhat.transpose();
    dz -= (c.xhat.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
    dz = (dz.array().rowwise() * (c.inv_std.transpose().array() * inv_b)).matrix();

    gl.weight = dz.transpose() * c.input;
    gl.bias = dz.colwise().sum().transpose();
    if (li == 0 && l1_lambda != 0.0) {
      gl.weight += l1_lambda * layer.weight.unaryExpr([](double w) { return double((w > 0.0) - (w < 0.0)); });
    }
    if (li > 0) upstream = dz * layer.weight;
  }
  return g;
}

struct TrainConfig {
  int epochs = 50;
  double initial_lr = 5e-4;
  int batch_size = 128;
  double weight_decay = 1e-4;
  double l1_lambda = 1e-5;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<int> hidden_sizes{1024, 512, 256};
  bool allow_any_width = false;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
    if (!(initial_lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(weight_decay >= 0.0) || !(l1_lambda >= 0.0)) throw ConfigError("regularization must be non-negative");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
      throw ConfigError("invalid Adam hyperparameters");
    }
    validate_hidden_sizes(hidden_sizes, allow_any_width);
  }

  Json to_json() const {
    return Json{{"epochs", epochs},          {"lr", initial_lr},        {"batch_size", batch_size},
                {"weight_decay", weight_decay}, {"l1_lambda", l1_lambda}, {"dropout", dropout_rate},
                {"seed", seed},              {"beta1", beta1},          {"beta2", beta2},
                {"adam_eps", adam_eps},      {"hidden_sizes", hidden_sizes}};
  }
};

// lr_t = lr_0 * (1 + cos(pi * t / epochs)) / 2, t zero-based.
inline double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.initial_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
}

struct TrainResult {
  DetectorModel model;
  std::vector<double> epoch_loss;  // sample-weighted mean objective per epoch
};

struct LabeledMatrix {
  Matrix features;  // n x d
  std::vector<int> labels;
};

namespace detail {

class Adam {
 public:
  Adam(const DetectorModel& model, const TrainConfig& cfg) : cfg_(cfg) {
    std::size_t n = 0;
    for_each_trainable(model, [&](auto s) { n += s.size(); });
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }

  void step(DetectorModel& model, const Gradients& g, double lr) {
    ++t_;
    std::vector<std::span<const double>> grads;
    for (const auto& l : g.layers) {
      grads.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      grads.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
      grads.emplace_back(l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
      grads.emplace_back(l.beta.data(), static_cast<std::size_t>(l.beta.size()));
    }
    grads.emplace_back(g.head_weight.data(), static_cast<std::size_t>(g.head_weight.size()));
    grads.emplace_back(&g.head_bias, 1);

    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    std::size_t offset = 0;
    std::size_t tensor = 0;
    for_each_trainable(model, [&](std::span<double> p) {
      const auto gs = grads[tensor++];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double& m = m_[offset + i];
        double& v = v_[offset + i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gs[i];
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gs[i] * gs[i];
        p[i] = p[i] * decay - lr * (m / c1) / (std::sqrt(v / c2) + cfg_.adam_eps);
      }
      offset += p.size();
    });
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace detail

// Mini-batch boundaries for one epoch. The final partial batch is kept; a
// trailing batch of one sample is merged into its predecessor because
// train-mode batch norm is undefined for it.
inline std::vector<std::size_t> batch_boundaries(std::size_t n, std::size_t batch_size) {
  std::vector<std::size_t> bounds{0};
  while (bounds.back() < n) bounds.push_back(std::min(n, bounds.back() + batch_size));
  if (bounds.size() > 2 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] == 1) {
    bounds.erase(bounds.end() - 2);
  }
  return bounds;
}

inline TrainResult train(const LabeledMatrix& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(data.features.rows());
  if (data.labels.size() != n) throw ShapeError("feature/label count mismatch");
  if (n < 2) throw DataError("need at least 2 training records");
  std::size_t positives = 0;
  for (int y : data.labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    positives += static_cast<std::size_t>(y);
  }
  if (positives == 0 || positives == n) throw DataError("training data contains a single class");

  TrainResult result{init_model(static_cast<int>(data.features.cols()), cfg.hidden_sizes, cfg.dropout_rate,
                                cfg.seed, cfg.allow_any_width),
                     {}};
  DetectorModel& model = result.model;
  model.train_config = cfg.to_json();

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  detail::Adam adam(model, cfg);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bounds = batch_boundaries(n, static_cast<std::size_t>(cfg.batch_size));

  Matrix batch;
  std::vector<int> labels;
  ForwardCache cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t bi = 0; bi + 1 < bounds.size(); ++bi) {
      const std::size_t begin = bounds[bi];
      const std::size_t size = bounds[bi + 1] - begin;
      batch.resize(static_cast<Eigen::Index>(size), data.features.cols());
      labels.resize(size);
      for (std::size_t r = 0; r < size; ++r) {
        batch.row(static_cast<Eigen::Index>(r)) = data.features.row(static_cast<Eigen::Index>(order[begin + r]));
        labels[r] = data.labels[order[begin + r]];
      }
      const Vector probs = forward(model, batch, Mode::train, rng, &cache);
      weighted += loss(std::span(probs.data(), size), labels, model, cfg.l1_lambda) * static_cast<double>(size);
      adam.step(model, backward(model, cache, labels, cfg.l1_lambda), lr);
    }
    result.epoch_loss.push_back(weighted / static_cast<double>(n));
  }
  return result;
}

struct Prediction {
  std::vector<double> probabilities;
  std::vector<int> bits;  // 1 where probability > 0.5
};

inline Prediction predict(const DetectorModel& model, const Matrix& features) {
  const Vector p = forward_eval(model, features);
  Prediction out;
  out.probabilities.assign(p.data(), p.data() + p.size());
  for (double v : out.probabilities) out.bits.push_back(v > 0.5 ? 1 : 0);
  return out;
}

}  // namespace hsad
