#pragma once

// Attribution methods: each maps (network, image, target class) to a signed
// per-pixel relevance map with the image's shape.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sarxai/error.hpp"
#include "sarxai/kernels.hpp"
#include "sarxai/nn.hpp"
#include "sarxai/parallel.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

// Enumerator values are the method tags stored in .att files; the order is
// the row order of the evaluation table.
enum class Method : std::uint8_t {
  IntegratedGradients = 0,
  InputXGradient = 1,
  GuidedBackprop = 2,
  Deconvolution = 3,
  Saliency = 4,
  Occlusion = 5,
  GuidedGradCam = 6,
  GradCam = 7,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::IntegratedGradients, Method::InputXGradient, Method::GuidedBackprop,
    Method::Deconvolution,       Method::Saliency,       Method::Occlusion,
    Method::GuidedGradCam,       Method::GradCam,
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::IntegratedGradients: return "integrated_gradients";
    case Method::InputXGradient: return "input_x_gradient";
    case Method::GuidedBackprop: return "guided_backprop";
    case Method::Deconvolution: return "deconvolution";
    case Method::Saliency: return "saliency";
    case Method::Occlusion: return "occlusion";
    case Method::GuidedGradCam: return "guided_grad_cam";
    case Method::GradCam: return "grad_cam";
  }
  return "?";
}

inline const char* method_display_name(Method m) {
  switch (m) {
    case Method::IntegratedGradients: return "Integrated Gradients";
    case Method::InputXGradient: return "Input x Gradient";
    case Method::GuidedBackprop: return "Guided Backpropagation";
    case Method::Deconvolution: return "Deconvolution";
    case Method::Saliency: return "Saliency";
    case Method::Occlusion: return "Occlusion";
    case Method::GuidedGradCam: return "Guided Grad-CAM";
    case Method::GradCam: return "Grad-CAM";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (name == method_name(m)) return m;
  }
  return std::nullopt;
}

inline std::string valid_method_names() {
  std::string s;
  for (Method m : kAllMethods) {
    if (!s.empty()) s += ", ";
    s += method_name(m);
  }
  return s;
}

inline std::optional<Method> method_from_tag(std::uint8_t tag) {
  if (tag < kAllMethods.size()) return static_cast<Method>(tag);
  return std::nullopt;
}

// Reference input x' for path and perturbation methods.
struct Baseline {
  enum class Kind { Zero, Constant, Mean };
  Kind kind = Kind::Zero;
  float value = 0.0f;  // used by Constant

  friend bool operator==(const Baseline&, const Baseline&) = default;
};

struct IntGradParams {
  std::size_t steps = 50;
  Baseline baseline;  // Zero or Constant
};

struct OcclusionParams {
  std::size_t window_h = 15;
  std::size_t window_w = 15;
  std::size_t stride_h = 5;
  std::size_t stride_w = 5;
  Baseline baseline;
};

struct GradCamParams {
  std::optional<std::size_t> layer;  // defaults to the last Conv layer
};

struct NoParams {};

using MethodParams = std::variant<NoParams, IntGradParams, OcclusionParams, GradCamParams>;

struct ExplainOptions {
  Objective objective = Objective::Logit;
  std::size_t jobs = 1;  // internal workers for occlusion / integrated gradients
};

struct AttributionMap {
  Tensor scores;  // same shape as the explained image
  Method method = Method::Saliency;
  std::size_t target_class = 0;
  MethodParams params;
};

namespace detail {

inline Tensor as_image(const Network& net, const Tensor& x) {
  if (x.shape() == net.input_shape()) return x;
  if (x.rank() == 4 && x.dim(0) == 1 &&
      Shape(x.shape().begin() + 1, x.shape().end()) == net.input_shape()) {
    return x.reshaped(net.input_shape());
  }
  throw ShapeError("explain: image shape " + shape_to_string(x.shape()) +
                   " does not match network input " + shape_to_string(net.input_shape()));
}

inline void check_class(const Network& net, std::size_t c) {
  if (c >= net.num_classes()) {
    throw ConfigError("invalid class index " + std::to_string(c) + " for " +
                      std::to_string(net.num_classes()) + " classes");
  }
}

inline Tensor rule_gradient(const Network& net, const Tensor& image, std::size_t c,
                            GradientRule rule, Objective objective) {
  const ForwardPass<float> pass = forward(net, image);
  return backward_to_input(net, pass.trace, c, rule, objective).reshaped(image.shape());
}

inline float class_score(const Network& net, const Tensor& image, std::size_t c,
                         Objective objective) {
  return objective_value(forward_logits(net, image), c, objective);
}

inline Tensor baseline_image(const Tensor& x, const Baseline& b) {
  Tensor out(x.shape());
  switch (b.kind) {
    case Baseline::Kind::Zero: break;
    case Baseline::Kind::Constant: out.fill(b.value); break;
    case Baseline::Kind::Mean: {
      const std::size_t c = x.dim(0), plane = x.size() / c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += x[ch * plane + p];
        const float mean = static_cast<float>(acc / static_cast<double>(plane));
        std::fill(out.data().begin() + static_cast<std::ptrdiff_t>(ch * plane),
                  out.data().begin() + static_cast<std::ptrdiff_t>((ch + 1) * plane), mean);
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

// |gradient of the class score|
inline AttributionMap saliency(const Network& net, const Tensor& x, std::size_t c,
                               const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  Tensor g = detail::rule_gradient(net, image, c, GradientRule::Standard, opt.objective);
  for (float& v : g.data()) v = std::fabs(v);
  return {std::move(g), Method::Saliency, c, NoParams{}};
}

// x * gradient, signed.
inline AttributionMap input_x_gradient(const Network& net, const Tensor& x, std::size_t c,
                                       const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  Tensor g = detail::rule_gradient(net, image, c, GradientRule::Standard, opt.objective);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = image[i] * g[i];
  return {std::move(g), Method::InputXGradient, c, NoParams{}};
}

// (x - x') * mean_k grad(x' + a_k (x - x')), a_k = (k - 1/2) / steps.
inline AttributionMap integrated_gradients(const Network& net, const Tensor& x, std::size_t c,
                                           const IntGradParams& p = {},
                                           const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  if (p.steps == 0) throw ConfigError("integrated gradients: steps must be at least 1");
  if (p.baseline.kind == Baseline::Kind::Mean) {
    throw ConfigError("integrated gradients: baseline must be Zero or Constant");
  }
  const Tensor image = detail::as_image(net, x);
  const Tensor base = detail::baseline_image(image, p.baseline);

  std::vector<Tensor> grads(p.steps);
  parallel_for(p.steps, opt.jobs, [&](std::size_t k) {
    const float a = static_cast<float>((static_cast<double>(k) + 0.5) /
                                       static_cast<double>(p.steps));
    Tensor point(image.shape());
    for (std::size_t i = 0; i < point.size(); ++i) {
      point[i] = base[i] + a * (image[i] - base[i]);
    }
    grads[k] = detail::rule_gradient(net, point, c, GradientRule::Standard, opt.objective);
  });

  std::vector<double> sum(image.size(), 0.0);
  for (const Tensor& g : grads) {
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
  }
  Tensor scores(image.shape());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double diff = static_cast<double>(image[i]) - static_cast<double>(base[i]);
    scores[i] = static_cast<float>(diff * (sum[i] / static_cast<double>(p.steps)));
  }
  return {std::move(scores), Method::IntegratedGradients, c, p};
}

inline AttributionMap guided_backprop(const Network& net, const Tensor& x, std::size_t c,
                                      const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  return {detail::rule_gradient(net, image, c, GradientRule::Guided, opt.objective),
          Method::GuidedBackprop, c, NoParams{}};
}

inline AttributionMap deconvolution(const Network& net, const Tensor& x, std::size_t c,
                                    const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  return {detail::rule_gradient(net, image, c, GradientRule::Deconv, opt.objective),
          Method::Deconvolution, c, NoParams{}};
}

struct GradCamMaps {
  Tensor pre_relu;   // [1, u, v]
  Tensor post_relu;  // [1, u, v]
  std::vector<float> channel_weights;
};

// Channel weights are spatial means of the gradient; the map is the
// rectified weighted sum of activation channels.
inline GradCamMaps grad_cam_from_signal(const Tensor& activation, const Tensor& gradient) {
  require_rank(activation, 3, "grad_cam activation");
  require_shape(gradient, activation.shape(), "grad_cam gradient");
  const std::size_t k = activation.dim(0), u = activation.dim(1), v = activation.dim(2);
  const std::size_t plane = u * v;
  GradCamMaps m;
  m.channel_weights.resize(k);
  for (std::size_t ch = 0; ch < k; ++ch) {
    float acc = 0.0f;
    for (std::size_t p = 0; p < plane; ++p) acc += gradient[ch * plane + p];
    m.channel_weights[ch] = acc / static_cast<float>(plane);
  }
  m.pre_relu = Tensor({1, u, v});
  for (std::size_t ch = 0; ch < k; ++ch) {
    const float w = m.channel_weights[ch];
    for (std::size_t p = 0; p < plane; ++p) m.pre_relu[p] += w * activation[ch * plane + p];
  }
  m.post_relu = m.pre_relu;
  for (float& val : m.post_relu.data()) val = val > 0.0f ? val : 0.0f;
  return m;
}

inline AttributionMap grad_cam(const Network& net, const Tensor& x, std::size_t c,
                               const GradCamParams& p = {}, const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  const std::optional<std::size_t> layer = p.layer ? p.layer : net.last_conv_layer();
  if (!layer) throw ConfigError("grad-cam: network has no convolutional layer");
  const ForwardPass<float> pass = forward(net, image);
  const LayerSignal<float> sig =
      layer_activations_and_gradients(net, pass.trace, c, *layer, opt.objective);
  const GradCamMaps maps = grad_cam_from_signal(sig.activation, sig.gradient);

  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Tensor up = bilinear_upsample(maps.post_relu, h, w);
  Tensor scores(image.shape());
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::copy(up.data().begin(), up.data().end(),
              scores.data().begin() + static_cast<std::ptrdiff_t>(ch * h * w));
  }
  return {std::move(scores), Method::GradCam, c, GradCamParams{layer}};
}

inline AttributionMap guided_grad_cam(const Network& net, const Tensor& x, std::size_t c,
                                      const GradCamParams& p = {},
                                      const ExplainOptions& opt = {}) {
  AttributionMap guided = guided_backprop(net, x, c, opt);
  const AttributionMap cam = grad_cam(net, x, c, p, opt);
  for (std::size_t i = 0; i < guided.scores.size(); ++i) guided.scores[i] *= cam.scores[i];
  guided.method = Method::GuidedGradCam;
  guided.params = cam.params;
  return guided;
}

// Window start offsets along one axis: 0, stride, 2*stride, ... up to and
// including the first window that reaches the far edge. That last window may
// be clipped, so every position is covered.
inline std::vector<std::size_t> occlusion_starts(std::size_t extent, std::size_t window,
                                                 std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    starts.push_back(s);
    if (s + window >= extent) break;
  }
  return starts;
}

// Each window scores f(x) - f(x with the window set to the baseline); a pixel
// receives the mean score of the windows covering it.
inline AttributionMap occlusion(const Network& net, const Tensor& x, std::size_t c,
                                const OcclusionParams& p = {}, const ExplainOptions& opt = {}) {
  detail::check_class(net, c);
  const Tensor image = detail::as_image(net, x);
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (p.stride_h == 0 || p.stride_w == 0) throw ConfigError("occlusion: stride must be positive");
  if (p.window_h == 0 || p.window_w == 0) throw ConfigError("occlusion: window must be positive");
  if (p.window_h > h || p.window_w > w) {
    throw ConfigError("occlusion: window " + std::to_string(p.window_h) + "x" +
                      std::to_string(p.window_w) + " larger than image " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  if (p.stride_h > p.window_h || p.stride_w > p.window_w) {
    throw ConfigError("occlusion: stride must not exceed the window");
  }
  const Tensor base = detail::baseline_image(image, p.baseline);
  const float reference = detail::class_score(net, image, c, opt.objective);

  const std::vector<std::size_t> ys = occlusion_starts(h, p.window_h, p.stride_h);
  const std::vector<std::size_t> xs = occlusion_starts(w, p.window_w, p.stride_w);
  std::vector<float> delta(ys.size() * xs.size());
  parallel_for(delta.size(), opt.jobs, [&](std::size_t k) {
    const std::size_t y0 = ys[k / xs.size()], x0 = xs[k % xs.size()];
    const std::size_t y1 = std::min(h, y0 + p.window_h), x1 = std::min(w, x0 + p.window_w);
    Tensor occluded = image;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t xx = x0; xx < x1; ++xx) {
          const std::size_t i = (ch * h + y) * w + xx;
          occluded[i] = base[i];
        }
      }
    }
    delta[k] = reference - detail::class_score(net, occluded, c, opt.objective);
  });

  std::vector<double> sum(h * w, 0.0);
  std::vector<std::uint32_t> count(h * w, 0);
  for (std::size_t k = 0; k < delta.size(); ++k) {
    const std::size_t y0 = ys[k / xs.size()], x0 = xs[k % xs.size()];
    const std::size_t y1 = std::min(h, y0 + p.window_h), x1 = std::min(w, x0 + p.window_w);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t xx = x0; xx < x1; ++xx) {
        sum[y * w + xx] += delta[k];
        ++count[y * w + xx];
      }
    }
  }
  Tensor scores(image.shape());
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      scores[ch * h * w + i] =
          count[i] ? static_cast<float>(sum[i] / static_cast<double>(count[i])) : 0.0f;
    }
  }
  return {std::move(scores), Method::Occlusion, c, p};
}

inline MethodParams default_params(Method m) {
  switch (m) {
    case Method::IntegratedGradients: return IntGradParams{};
    case Method::Occlusion: return OcclusionParams{};
    case Method::GradCam:
    case Method::GuidedGradCam: return GradCamParams{};
    default: return NoParams{};
  }
}

namespace detail {

template <typename P>
P params_as(Method m, const MethodParams& params) {
  if (std::holds_alternative<NoParams>(params)) return P{};
  if (const P* p = std::get_if<P>(&params)) return *p;
  throw ConfigError(std::string("parameter type does not match method ") + method_name(m));
}

}  // namespace detail

// Dispatches to one of the eight methods. NoParams selects the method's
// defaults.
inline AttributionMap explain(const Network& net, const Tensor& x, std::size_t c, Method method,
                              const MethodParams& params = NoParams{},
                              const ExplainOptions& opt = {}) {
  switch (method) {
    case Method::Saliency:
    case Method::InputXGradient:
    case Method::GuidedBackprop:
    case Method::Deconvolution:
      if (!std::holds_alternative<NoParams>(params)) {
        throw ConfigError(std::string("method ") + method_name(method) + " takes no parameters");
      }
      break;
    default: break;
  }
  switch (method) {
    case Method::Saliency: return saliency(net, x, c, opt);
    case Method::InputXGradient: return input_x_gradient(net, x, c, opt);
    case Method::GuidedBackprop: return guided_backprop(net, x, c, opt);
    case Method::Deconvolution: return deconvolution(net, x, c, opt);
    case Method::IntegratedGradients:
      return integrated_gradients(net, x, c, detail::params_as<IntGradParams>(method, params), opt);
    case Method::Occlusion:
      return occlusion(net, x, c, detail::params_as<OcclusionParams>(method, params), opt);
    case Method::GradCam:
      return grad_cam(net, x, c, detail::params_as<GradCamParams>(method, params), opt);
    case Method::GuidedGradCam:
      return guided_grad_cam(net, x, c, detail::params_as<GradCamParams>(method, params), opt);
  }
  throw ConfigError("unknown method tag " + std::to_string(static_cast<int>(method)));
}

// A method bound to its parameters.
struct Explainer {
  Method method = Method::Saliency;
  MethodParams params = NoParams{};
  ExplainOptions options;

  AttributionMap operator()(const Network& net, const Tensor& x, std::size_t c) const {
    return explain(net, x, c, method, params, options);
  }
};

}  // namespace sarxai
