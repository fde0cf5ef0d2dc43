#pragma once

// The small residual classifier, its SGD training loop and prediction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sarxai/dataset.hpp"
#include "sarxai/error.hpp"
#include "sarxai/nn.hpp"
#include "sarxai/random.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

struct ClassifierConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::vector<std::size_t> stage_widths = {16, 32, 64};
  std::size_t blocks_per_stage = 2;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (in_channels == 0) throw ConfigError("classifier: in_channels must be positive");
    if (num_classes < 2) throw ConfigError("classifier: num_classes must be at least 2");
    if (stage_widths.empty()) throw ConfigError("classifier: at least one stage is required");
    if (blocks_per_stage == 0) throw ConfigError("classifier: blocks_per_stage must be positive");
    for (std::size_t i = 0; i < stage_widths.size(); ++i) {
      if (stage_widths[i] == 0) throw ConfigError("classifier: stage widths must be positive");
      if (i > 0 && stage_widths[i] < stage_widths[i - 1]) {
        throw ConfigError("classifier: stage widths must be nondecreasing");
      }
    }
    // Stem pooling halves the input, each later stage halves it again.
    std::size_t h = input_height / 2, w = input_width / 2;
    for (std::size_t i = 1; i < stage_widths.size(); ++i) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    if (input_height < 2 || input_width < 2 || h == 0 || w == 0) {
      throw ConfigError("classifier: input too small for the number of stages");
    }
  }
};

namespace detail {

inline layer::Conv<float> he_uniform_conv(const ConvSpec& spec, Rng& rng) {
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
  const double bound = std::sqrt(6.0 / fan_in);
  Tensor w(spec.weight_shape());
  for (float& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return {spec, std::move(w), std::vector<float>(spec.out_channels, 0.0f)};
}

inline layer::Dense<float> he_uniform_dense(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  Tensor w({out, in});
  for (float& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return {std::move(w), std::vector<float>(out, 0.0f)};
}

}  // namespace detail

// Layout:
//   stem:    Conv3x3(in -> w0) ReLU MaxPool2
//   stage s: [transition Conv3x3 stride 2 (w_{s-1} -> w_s) ReLU, for s > 0]
//            blocks x { Conv3x3 ReLU Conv3x3 ResidualAdd ReLU }
//   head:    GlobalAvgPool Dense(w_last -> classes)
inline Network build_classifier(const ClassifierConfig& cfg) {
  cfg.validate();
  Rng rng(hash_combine(cfg.seed, 0x5EED));
  std::vector<Layer<float>> layers;
  auto add = [&](std::string name, LayerOp<float> op) {
    layers.push_back(Layer<float>{layers.size(), std::move(name), std::move(op)});
    return layers.size() - 1;
  };
  auto conv3 = [&](std::size_t in, std::size_t out, std::size_t stride) {
    return detail::he_uniform_conv(ConvSpec{out, in, 3, 3, stride, 1}, rng);
  };

  add("stem.conv", conv3(cfg.in_channels, cfg.stage_widths[0], 1));
  add("stem.relu", layer::ReLU{});
  std::size_t block_input = add("stem.pool", layer::MaxPool{2, 2});

  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    const std::size_t width = cfg.stage_widths[s];
    if (s > 0) {
      add(stage + ".down.conv", conv3(cfg.stage_widths[s - 1], width, 2));
      block_input = add(stage + ".down.relu", layer::ReLU{});
    }
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string block = stage + ".block" + std::to_string(b + 1);
      add(block + ".conv1", conv3(width, width, 1));
      add(block + ".relu1", layer::ReLU{});
      add(block + ".conv2", conv3(width, width, 1));
      add(block + ".add", layer::ResidualAdd{block_input});
      block_input = add(block + ".relu2", layer::ReLU{});
    }
  }
  add("head.pool", layer::GlobalAvgPool{});
  add("head.fc", detail::he_uniform_dense(cfg.num_classes, cfg.stage_widths.back(), rng));
  return Network({cfg.in_channels, cfg.input_height, cfg.input_width}, std::move(layers));
}

struct LrSchedule {
  enum class Kind { Constant, StepDecay };
  Kind kind = Kind::Constant;
  double factor = 0.5;
  std::size_t every_n_epochs = 10;

  double rate(double base, std::size_t epoch) const {
    if (kind == Kind::Constant || every_n_epochs == 0) return base;
    return base * std::pow(factor, static_cast<double>(epoch / every_n_epochs));
  }
};

struct TrainConfig {
  double learning_rate = 0.005;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule{LrSchedule::Kind::StepDecay, 0.5, 10};
  bool augment_flips = true;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train: learning_rate must be finite and non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("train: momentum must lie in [0, 1)");
    }
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Network network;  // weights of the best validation epoch
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_accuracy = 0.0;
};

struct Prediction {
  std::size_t class_index = 0;
  std::vector<float> probabilities;
};

inline std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> p(logits.size());
  if (logits.empty()) return p;
  const float mx = *std::max_element(logits.begin(), logits.end());
  float z = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (float& v : p) v /= z;
  return p;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline Prediction predict(const Network& net, const Tensor& x) {
  const Tensor logits = forward_logits(net, x);
  if (logits.dim(0) != 1) throw ShapeError("predict expects a single image");
  Prediction p;
  p.probabilities = softmax(logits.data());
  p.class_index = argmax(logits.data());
  return p;
}

struct Accuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

inline void check_labels(const Network& net, const Dataset& ds, const char* which) {
  if (ds.empty()) throw ConfigError(std::string("train: ") + which + " set is empty");
  for (const auto& r : ds.records) {
    if (r.label >= net.num_classes()) {
      throw ConfigError(std::string("train: ") + which + " label " +
                        std::to_string(r.label) + " out of range for " +
                        std::to_string(net.num_classes()) + " classes");
    }
  }
}

inline Tensor stack_batch(const Network& net, const Dataset& ds,
                          std::span<const std::size_t> indices,
                          std::span<const std::uint8_t> flips = {}) {
  const Shape& in = net.input_shape();
  const std::size_t c = in[0], h = in[1], w = in[2];
  Tensor batch({indices.size(), c, h, w});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = ds.records[indices[b]].image;
    if (img.size() != c * h * w) {
      throw ShapeError("image " + ds.records[indices[b]].image_id + " has shape " +
                       shape_to_string(img.shape()) + ", network expects " +
                       shape_to_string(in));
    }
    const std::uint8_t f = flips.empty() ? 0 : flips[b];
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = (f & 2) ? h - 1 - y : y;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sx = (f & 1) ? w - 1 - x : x;
          batch.at(b, ch, y, x) = img[(ch * h + sy) * w + sx];
        }
      }
    }
  }
  return batch;
}

// Mean cross-entropy; writes d(loss)/d(logits) into grad when given.
inline double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                            Tensor* grad, std::size_t* correct) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    std::span<const float> row(logits.data().data() + b * k, k);
    const std::vector<float> p = softmax(row);
    loss -= std::log(std::max(static_cast<double>(p[labels[b]]), 1e-30));
    if (correct && argmax(row) == labels[b]) ++*correct;
    if (grad) {
      for (std::size_t j = 0; j < k; ++j) {
        (*grad)[b * k + j] =
            (p[j] - (j == labels[b] ? 1.0f : 0.0f)) / static_cast<float>(n);
      }
    }
  }
  return loss;
}

}  // namespace detail

inline Accuracy evaluate_accuracy(const Network& net, const Dataset& ds,
                                  std::size_t batch_size = 32) {
  Accuracy a;
  if (ds.empty()) return a;
  std::size_t correct = 0;
  std::vector<std::size_t> idx, labels;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    idx.clear();
    labels.clear();
    for (std::size_t i = start; i < end; ++i) {
      idx.push_back(i);
      labels.push_back(ds.records[i].label);
    }
    const Tensor logits = forward_logits(net, detail::stack_batch(net, ds, idx));
    a.loss += detail::cross_entropy(logits, labels, nullptr, &correct);
  }
  a.loss /= static_cast<double>(ds.size());
  a.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return a;
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Minibatch SGD with momentum on softmax cross-entropy. The shuffle order and
// flip augmentation derive from cfg.seed only, so a run is reproducible
// bit for bit. Returns the weights of the epoch with the best validation
// accuracy (earliest epoch on ties).
inline TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_labels(net, train_set, "training");
  detail::check_labels(net, val_set, "validation");

  TrainResult result;
  result.network = net;
  if (cfg.epochs == 0) return result;

  ParamGrads<float> velocity = zero_param_grads(net);
  Rng rng(hash_combine(cfg.seed, 0x7A1A));
  std::vector<std::size_t> order(train_set.size());
  double best = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::uint8_t> flips(idx.size(), 0);
      std::vector<std::size_t> labels(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (cfg.augment_flips) flips[b] = static_cast<std::uint8_t>(rng.below(4));
        labels[b] = train_set.records[idx[b]].label;
      }
      const Tensor batch = detail::stack_batch(net, train_set, idx, flips);
      const ForwardPass<float> pass = forward(net, batch);
      Tensor grad(pass.logits.shape());
      loss_sum += detail::cross_entropy(pass.logits, labels, &grad, &correct);
      const ParamGrads<float> g = backward_weights(net, pass.trace, grad);

      const float mu = static_cast<float>(cfg.momentum);
      const float step = static_cast<float>(lr);
      auto update = [&](std::span<float> param, std::span<float> vel,
                        std::span<const float> grad_span) {
        for (std::size_t k = 0; k < param.size(); ++k) {
          vel[k] = mu * vel[k] + grad_span[k];
          param[k] -= step * vel[k];
        }
      };
      for (std::size_t i = 0; i < net.num_layers(); ++i) {
        auto& op = net.mutable_layers()[i].op;
        if (auto* c = std::get_if<layer::Conv<float>>(&op)) {
          update(c->weights.data(), velocity.weights[i].data(), g.weights[i].data());
          update(c->bias, velocity.bias[i], g.bias[i]);
        } else if (auto* d = std::get_if<layer::Dense<float>>(&op)) {
          update(d->weights.data(), velocity.weights[i].data(), g.weights[i].data());
          update(d->bias, velocity.bias[i], g.bias[i]);
        }
      }
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.learning_rate = lr;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    const Accuracy val = evaluate_accuracy(net, val_set);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stats.val_accuracy > best) {
      best = stats.val_accuracy;
      result.network = net;
      result.best_epoch = stats.epoch;
      result.best_val_accuracy = stats.val_accuracy;
    }
  }
  return result;
}

}  // namespace sarxai
