#pragma once

// Sequential layer graph with residual shortcuts, a caching forward pass and
// a backward pass whose ReLU handling is selected by GradientRule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sarxai/error.hpp"
#include "sarxai/kernels.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

// How ReLU layers propagate a cotangent g given their forward input z.
//   Standard: g * [z > 0]             (true gradient)
//   Guided:   g * [z > 0] * [g > 0]   (guided backpropagation)
//   Deconv:   g * [g > 0]             (deconvnet)
enum class GradientRule { Standard, Guided, Deconv };

// Scalar being explained: the pre-softmax logit of the class, or its softmax
// probability.
enum class Objective { Logit, Softmax };

namespace layer {

template <typename T>
struct Conv {
  ConvSpec spec;
  BasicTensor<T> weights;  // [out, in, kh, kw]
  std::vector<T> bias;     // [out]
};

struct ReLU {};

struct MaxPool {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct GlobalAvgPool {};

template <typename T>
struct Dense {
  BasicTensor<T> weights;  // [out, in]
  std::vector<T> bias;     // [out]
};

// Adds the output of an earlier layer to the current activation.
struct ResidualAdd {
  std::size_t source = 0;
};

struct Flatten {};

}  // namespace layer

// Serialized tag of each layer kind; values are part of the weight file format.
enum class LayerKind : std::uint8_t {
  Conv = 1,
  ReLU = 2,
  MaxPool = 3,
  GlobalAvgPool = 4,
  Dense = 5,
  ResidualAdd = 6,
  Flatten = 7,
};

template <typename T>
using LayerOp = std::variant<layer::Conv<T>, layer::ReLU, layer::MaxPool,
                             layer::GlobalAvgPool, layer::Dense<T>,
                             layer::ResidualAdd, layer::Flatten>;

template <typename T>
struct Layer {
  std::size_t id = 0;  // equals the layer's position in the network
  std::string name;
  LayerOp<T> op;

  LayerKind kind() const {
    return std::visit(
        [](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, layer::Conv<T>>) return LayerKind::Conv;
          else if constexpr (std::is_same_v<L, layer::ReLU>) return LayerKind::ReLU;
          else if constexpr (std::is_same_v<L, layer::MaxPool>) return LayerKind::MaxPool;
          else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) return LayerKind::GlobalAvgPool;
          else if constexpr (std::is_same_v<L, layer::Dense<T>>) return LayerKind::Dense;
          else if constexpr (std::is_same_v<L, layer::ResidualAdd>) return LayerKind::ResidualAdd;
          else return LayerKind::Flatten;
        },
        op);
  }

  const layer::Conv<T>* conv() const { return std::get_if<layer::Conv<T>>(&op); }
  const layer::Dense<T>* dense() const { return std::get_if<layer::Dense<T>>(&op); }
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::Dense: return "Dense";
    case LayerKind::ResidualAdd: return "ResidualAdd";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;

  // input_shape is per sample: {C, H, W}. Layer ids are reassigned to their
  // positions; shapes are checked layer by layer.
  BasicNetwork(Shape input_shape, std::vector<Layer<T>> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].id = i;
    infer_shapes();
  }

  template <typename U>
  static BasicNetwork cast(const BasicNetwork<U>& other) {
    std::vector<Layer<T>> layers;
    layers.reserve(other.layers().size());
    for (const auto& l : other.layers()) {
      Layer<T> out{l.id, l.name, layer::ReLU{}};
      std::visit(
          [&](const auto& op) {
            using L = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<L, layer::Conv<U>>) {
              out.op = layer::Conv<T>{op.spec, BasicTensor<T>::cast(op.weights),
                                      std::vector<T>(op.bias.begin(), op.bias.end())};
            } else if constexpr (std::is_same_v<L, layer::Dense<U>>) {
              out.op = layer::Dense<T>{BasicTensor<T>::cast(op.weights),
                                       std::vector<T>(op.bias.begin(), op.bias.end())};
            } else {
              out.op = op;
            }
          },
          l.op);
      layers.push_back(std::move(out));
    }
    return BasicNetwork(other.input_shape(), std::move(layers));
  }

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& mutable_layers() { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_classes() const { return shapes_.empty() ? 0 : shapes_.back().at(0); }

  // Per-sample shape of activation i: 0 is the input, i + 1 the output of
  // layer i.
  const Shape& activation_shape(std::size_t i) const { return shapes_.at(i); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (const auto* c = l.conv()) n += c->weights.size() + c->bias.size();
      if (const auto* d = l.dense()) n += d->weights.size() + d->bias.size();
    }
    return n;
  }

  // Id of the last convolutional layer, if any.
  std::optional<std::size_t> last_conv_layer() const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (layers_[i].conv()) return i;
    }
    return std::nullopt;
  }

 private:
  void infer_shapes() {
    if (input_shape_.empty()) throw ShapeError("network: empty input shape");
    for (std::size_t d : input_shape_) {
      if (d == 0) throw ShapeError("network: input dimensions must be positive");
    }
    shapes_.assign(1, input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Shape& in = shapes_.back();
      const std::string where = "network layer " + std::to_string(i) + " (" +
                                layer_kind_name(layers_[i].kind()) + ")";
      Shape out = std::visit(
          [&](const auto& op) -> Shape {
            using L = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<L, layer::Conv<T>>) {
              op.spec.validate();
              if (in.size() != 3 || in[0] != op.spec.in_channels) {
                throw ShapeError(where + ": input " + shape_to_string(in) +
                                 " incompatible with " +
                                 std::to_string(op.spec.in_channels) + " input channels");
              }
              if (op.weights.shape() != op.spec.weight_shape() ||
                  op.bias.size() != op.spec.out_channels) {
                throw ShapeError(where + ": parameter shapes do not match spec");
              }
              return {op.spec.out_channels, op.spec.output_extent(in[1], op.spec.kernel_h),
                      op.spec.output_extent(in[2], op.spec.kernel_w)};
            } else if constexpr (std::is_same_v<L, layer::ReLU>) {
              return in;
            } else if constexpr (std::is_same_v<L, layer::MaxPool>) {
              if (in.size() != 3 || op.window == 0 || op.stride == 0 ||
                  op.window > in[1] || op.window > in[2]) {
                throw ShapeError(where + ": window does not fit input " + shape_to_string(in));
              }
              return {in[0], (in[1] - op.window) / op.stride + 1,
                      (in[2] - op.window) / op.stride + 1};
            } else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) {
              if (in.size() != 3) throw ShapeError(where + ": expects a C x H x W input");
              return {in[0]};
            } else if constexpr (std::is_same_v<L, layer::Dense<T>>) {
              if (in.size() != 1 || op.weights.rank() != 2 || op.weights.dim(1) != in[0] ||
                  op.bias.size() != op.weights.dim(0)) {
                throw ShapeError(where + ": input " + shape_to_string(in) +
                                 " incompatible with weights " +
                                 shape_to_string(op.weights.shape()));
              }
              return {op.weights.dim(0)};
            } else if constexpr (std::is_same_v<L, layer::ResidualAdd>) {
              if (op.source >= i) {
                throw ShapeError(where + ": residual source " + std::to_string(op.source) +
                                 " does not precede the layer");
              }
              if (shapes_[op.source + 1] != in) {
                throw ShapeError(where + ": residual source shape " +
                                 shape_to_string(shapes_[op.source + 1]) +
                                 " differs from " + shape_to_string(in));
              }
              return in;
            } else {
              return {shape_numel(in)};
            }
          },
          layers_[i].op);
      shapes_.push_back(std::move(out));
    }
    if (shapes_.back().size() != 1) {
      throw ShapeError("network: final layer must produce a vector of logits, got " +
                       shape_to_string(shapes_.back()));
    }
  }

  Shape input_shape_;
  std::vector<Layer<T>> layers_;
  std::vector<Shape> shapes_;
};

using Network = BasicNetwork<float>;

// Activations cached by one forward call. activations[0] is the input and
// activations[i + 1] the output of layer i; all carry a leading batch axis.
template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> activations;
  std::vector<PoolIndex> pool_index;  // filled for MaxPool layers only

  std::size_t size() const { return activations.empty() ? 0 : activations.size() - 1; }
  const BasicTensor<T>& layer_input(std::size_t i) const { return activations.at(i); }
  const BasicTensor<T>& layer_output(std::size_t i) const { return activations.at(i + 1); }
  const BasicTensor<T>& logits() const { return activations.back(); }
};

template <typename T>
struct ForwardPass {
  BasicTensor<T> logits;  // [N, num_classes]
  ForwardTrace<T> trace;
};

namespace detail {

template <typename T>
Shape batched(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Accepts [C,H,W] (batch of one) or [N,C,H,W].
template <typename T>
BasicTensor<T> as_batch(const BasicNetwork<T>& net, const BasicTensor<T>& x) {
  const Shape& in = net.input_shape();
  if (x.shape() == in) return x.reshaped(batched<T>(1, in));
  if (x.rank() == in.size() + 1 &&
      Shape(x.shape().begin() + 1, x.shape().end()) == in) {
    return x;
  }
  throw ShapeError("forward: input shape " + shape_to_string(x.shape()) +
                   " does not match network input " + shape_to_string(in));
}

template <typename T>
BasicTensor<T> apply_layer(const BasicNetwork<T>& net, std::size_t i,
                           const BasicTensor<T>& in,
                           const std::vector<BasicTensor<T>>* activations,
                           PoolIndex* pool_index) {
  const Layer<T>& l = net.layers()[i];
  const std::size_t n = in.dim(0);
  return std::visit(
      [&](const auto& op) -> BasicTensor<T> {
        using L = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<L, layer::Conv<T>>) {
          return conv2d_forward(in, op.weights, std::span<const T>(op.bias), op.spec);
        } else if constexpr (std::is_same_v<L, layer::ReLU>) {
          BasicTensor<T> out = in;
          for (T& v : out.data()) v = v > T{0} ? v : T{0};
          return out;
        } else if constexpr (std::is_same_v<L, layer::MaxPool>) {
          auto r = maxpool2d(in, op.window, op.stride);
          if (pool_index) *pool_index = std::move(r.index);
          return std::move(r.output);
        } else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) {
          return global_avg_pool(in);
        } else if constexpr (std::is_same_v<L, layer::Dense<T>>) {
          return dense_forward(in.reshaped({n, in.size() / n}), op.weights,
                               std::span<const T>(op.bias));
        } else if constexpr (std::is_same_v<L, layer::ResidualAdd>) {
          const BasicTensor<T>& skip = (*activations)[op.source + 1];
          BasicTensor<T> out = in;
          for (std::size_t k = 0; k < out.size(); ++k) out[k] += skip[k];
          return out;
        } else {
          return in.reshaped({n, in.size() / n});
        }
      },
      l.op);
}

template <typename T>
void accumulate(std::optional<BasicTensor<T>>& slot, const BasicTensor<T>& g) {
  if (!slot) {
    slot = g;
    return;
  }
  for (std::size_t k = 0; k < g.size(); ++k) (*slot)[k] += g[k];
}

}  // namespace detail

template <typename T>
ForwardPass<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& x) {
  ForwardPass<T> pass;
  auto& acts = pass.trace.activations;
  acts.reserve(net.num_layers() + 1);
  acts.push_back(detail::as_batch(net, x));
  pass.trace.pool_index.resize(net.num_layers());
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    BasicTensor<T> out =
        detail::apply_layer(net, i, acts.back(), &acts, &pass.trace.pool_index[i]);
    acts.push_back(std::move(out));
  }
  pass.logits = acts.back();
  return pass;
}

// Logits only, same arithmetic as forward().
template <typename T>
BasicTensor<T> forward_logits(const BasicNetwork<T>& net, const BasicTensor<T>& x) {
  return forward(net, x).logits;
}

// Per-layer parameter gradients; empty tensors for parameter-free layers.
template <typename T>
struct ParamGrads {
  std::vector<BasicTensor<T>> weights;
  std::vector<std::vector<T>> bias;
};

template <typename T>
ParamGrads<T> zero_param_grads(const BasicNetwork<T>& net) {
  ParamGrads<T> g;
  g.weights.resize(net.num_layers());
  g.bias.resize(net.num_layers());
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& l = net.layers()[i];
    if (const auto* c = l.conv()) {
      g.weights[i] = BasicTensor<T>(c->weights.shape());
      g.bias[i].assign(c->bias.size(), T{0});
    } else if (const auto* d = l.dense()) {
      g.weights[i] = BasicTensor<T>(d->weights.shape());
      g.bias[i].assign(d->bias.size(), T{0});
    }
  }
  return g;
}

namespace detail {

template <typename T>
void check_trace(const BasicNetwork<T>& net, const ForwardTrace<T>& trace) {
  if (trace.size() != net.num_layers()) {
    throw ShapeError("stale trace: " + std::to_string(trace.size()) +
                     " cached layers for a network of " +
                     std::to_string(net.num_layers()));
  }
  const std::size_t n = trace.activations[0].dim(0);
  for (std::size_t i = 0; i <= net.num_layers(); ++i) {
    if (trace.activations[i].shape() != batched<T>(n, net.activation_shape(i))) {
      throw ShapeError("stale trace: activation " + std::to_string(i) + " has shape " +
                       shape_to_string(trace.activations[i].shape()));
    }
  }
}

}  // namespace detail

// Propagates `seed` (cotangent of the logits, [N, num_classes]) down to
// activation `stop` and returns the cotangent there. ReLU layers follow
// `rule`. When `param_grads` is given, parameter gradients of every layer at
// or above `stop` are accumulated into it.
template <typename T>
BasicTensor<T> backward_from(const BasicNetwork<T>& net, const ForwardTrace<T>& trace,
                             const BasicTensor<T>& seed, GradientRule rule,
                             std::size_t stop = 0, ParamGrads<T>* param_grads = nullptr) {
  detail::check_trace(net, trace);
  require_shape(seed, trace.logits().shape(), "backward seed");
  if (stop > net.num_layers()) throw ShapeError("backward: stop index out of range");
  std::vector<std::optional<BasicTensor<T>>> pending(net.num_layers() + 1);
  pending.back() = seed;
  for (std::size_t i = net.num_layers(); i-- > stop;) {
    if (!pending[i + 1]) {
      pending[i + 1] = BasicTensor<T>(trace.activations[i + 1].shape());
    }
    const BasicTensor<T>& g = *pending[i + 1];
    const BasicTensor<T>& in = trace.activations[i];
    const std::size_t n = in.dim(0);
    BasicTensor<T> grad_in = std::visit(
        [&](const auto& op) -> BasicTensor<T> {
          using L = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<L, layer::Conv<T>>) {
            if (param_grads) {
              conv2d_accumulate_param_grads(in, op.spec, g, param_grads->weights[i],
                                            std::span<T>(param_grads->bias[i]));
            }
            return conv2d_backward_input(in, op.weights, op.spec, g);
          } else if constexpr (std::is_same_v<L, layer::ReLU>) {
            BasicTensor<T> out(in.shape());
            for (std::size_t k = 0; k < out.size(); ++k) {
              bool pass = false;
              switch (rule) {
                case GradientRule::Standard: pass = in[k] > T{0}; break;
                case GradientRule::Guided: pass = in[k] > T{0} && g[k] > T{0}; break;
                case GradientRule::Deconv: pass = g[k] > T{0}; break;
              }
              out[k] = pass ? g[k] : T{0};
            }
            return out;
          } else if constexpr (std::is_same_v<L, layer::MaxPool>) {
            return maxpool2d_backward(trace.pool_index.at(i), g);
          } else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) {
            return global_avg_pool_backward(in.shape(), g);
          } else if constexpr (std::is_same_v<L, layer::Dense<T>>) {
            const BasicTensor<T> flat = in.reshaped({n, in.size() / n});
            if (param_grads) {
              dense_accumulate_param_grads(flat, g, param_grads->weights[i],
                                           std::span<T>(param_grads->bias[i]));
            }
            return dense_backward_input(op.weights, g).reshaped(in.shape());
          } else if constexpr (std::is_same_v<L, layer::ResidualAdd>) {
            detail::accumulate(pending[op.source + 1], g);
            return g;
          } else {
            return g.reshaped(in.shape());
          }
        },
        net.layers()[i].op);
    detail::accumulate(pending[i], grad_in);
    pending[i + 1].reset();
  }
  if (!pending[stop]) return BasicTensor<T>(trace.activations[stop].shape());
  return std::move(*pending[stop]);
}

// Cotangent of the objective with respect to the logits, per sample.
template <typename T>
BasicTensor<T> objective_seed(const BasicTensor<T>& logits, std::size_t class_index,
                              Objective objective = Objective::Logit) {
  require_rank(logits, 2, "objective_seed");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (class_index >= k) {
    throw ConfigError("class index " + std::to_string(class_index) +
                      " out of range for " + std::to_string(k) + " classes");
  }
  BasicTensor<T> seed(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    if (objective == Objective::Logit) {
      seed[b * k + class_index] = T{1};
      continue;
    }
    T mx = logits[b * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[b * k + j]);
    std::vector<T> p(k);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += p[j] = std::exp(logits[b * k + j] - mx);
    for (T& v : p) v /= z;
    for (std::size_t j = 0; j < k; ++j) {
      seed[b * k + j] = p[class_index] * ((j == class_index ? T{1} : T{0}) - p[j]);
    }
  }
  return seed;
}

// Scalar objective per sample: logit or softmax probability of the class.
template <typename T>
T objective_value(const BasicTensor<T>& logits, std::size_t class_index,
                  Objective objective = Objective::Logit, std::size_t sample = 0) {
  const std::size_t k = logits.dim(1);
  if (class_index >= k) {
    throw ConfigError("class index " + std::to_string(class_index) +
                      " out of range for " + std::to_string(k) + " classes");
  }
  const T* row = logits.data().data() + sample * k;
  if (objective == Objective::Logit) return row[class_index];
  T mx = row[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
  T z{0};
  for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
  return std::exp(row[class_index] - mx) / z;
}

// Rule-modified cotangent of the class objective at the input, [N, C, H, W].
// With GradientRule::Standard this is the exact gradient.
template <typename T>
BasicTensor<T> backward_to_input(const BasicNetwork<T>& net, const ForwardTrace<T>& trace,
                                 std::size_t class_index, GradientRule rule,
                                 Objective objective = Objective::Logit) {
  detail::check_trace(net, trace);
  const BasicTensor<T> seed = objective_seed(trace.logits(), class_index, objective);
  return backward_from(net, trace, seed, rule, 0);
}

template <typename T>
struct LayerSignal {
  BasicTensor<T> activation;  // [K, u, v]
  BasicTensor<T> gradient;    // [K, u, v]
};

// Cached output of a convolutional layer and the Standard-rule gradient of the
// class objective with respect to it, for a batch-of-one trace.
template <typename T>
LayerSignal<T> layer_activations_and_gradients(const BasicNetwork<T>& net,
                                               const ForwardTrace<T>& trace,
                                               std::size_t class_index,
                                               std::size_t layer_id,
                                               Objective objective = Objective::Logit) {
  if (layer_id >= net.num_layers()) {
    throw ConfigError("layer " + std::to_string(layer_id) + " not found");
  }
  if (!net.layers()[layer_id].conv()) {
    throw ConfigError("layer " + std::to_string(layer_id) + " (" +
                      layer_kind_name(net.layers()[layer_id].kind()) +
                      ") is not convolutional");
  }
  detail::check_trace(net, trace);
  if (trace.activations[0].dim(0) != 1) {
    throw ShapeError("layer_activations_and_gradients expects a batch of one");
  }
  const BasicTensor<T> seed = objective_seed(trace.logits(), class_index, objective);
  const Shape& s = net.activation_shape(layer_id + 1);
  LayerSignal<T> out;
  out.activation = trace.layer_output(layer_id).reshaped(s);
  out.gradient = backward_from(net, trace, seed, GradientRule::Standard, layer_id + 1)
                     .reshaped(s);
  return out;
}

// Exact gradients of a loss with respect to every Conv/Dense parameter, given
// the loss cotangent at the logits.
template <typename T>
ParamGrads<T> backward_weights(const BasicNetwork<T>& net, const ForwardTrace<T>& trace,
                               const BasicTensor<T>& loss_grad) {
  ParamGrads<T> grads = zero_param_grads(net);
  backward_from(net, trace, loss_grad, GradientRule::Standard, 0, &grads);
  return grads;
}

}  // namespace sarxai
