#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "sarxai/sarxai.hpp"

namespace sxt {

using namespace sarxai;

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
layer::Conv<T> random_conv(const ConvSpec& spec, Rng& rng, double scale = 0.5) {
  layer::Conv<T> c{spec, random_tensor<T>(spec.weight_shape(), rng, -scale, scale), {}};
  for (std::size_t i = 0; i < spec.out_channels; ++i) {
    c.bias.push_back(static_cast<T>(rng.uniform(-0.1, 0.1)));
  }
  return c;
}

template <typename T>
layer::Dense<T> random_dense(std::size_t out, std::size_t in, Rng& rng, double scale = 0.5) {
  layer::Dense<T> d{random_tensor<T>({out, in}, rng, -scale, scale), {}};
  for (std::size_t i = 0; i < out; ++i) d.bias.push_back(static_cast<T>(rng.uniform(-0.1, 0.1)));
  return d;
}

// Conv-ReLU-MaxPool, a residual conv block, a strided conv and a global-pool
// head: every layer kind except Flatten. Input [1, 8, 8].
template <typename T>
BasicNetwork<T> small_residual_net(Rng& rng, std::size_t classes = 3) {
  std::vector<Layer<T>> l;
  l.push_back({0, "conv0", random_conv<T>({3, 1, 3, 3, 1, 1}, rng)});
  l.push_back({0, "relu0", layer::ReLU{}});
  l.push_back({0, "pool0", layer::MaxPool{}});
  l.push_back({0, "conv1", random_conv<T>({3, 3, 3, 3, 1, 1}, rng)});
  l.push_back({0, "relu1", layer::ReLU{}});
  l.push_back({0, "add1", layer::ResidualAdd{2}});
  l.push_back({0, "conv2", random_conv<T>({4, 3, 3, 3, 2, 1}, rng)});
  l.push_back({0, "relu2", layer::ReLU{}});
  l.push_back({0, "gap", layer::GlobalAvgPool{}});
  l.push_back({0, "fc", random_dense<T>(classes, 4, rng)});
  return BasicNetwork<T>({1, 8, 8}, std::move(l));
}

// Conv-ReLU-Conv-ReLU-Flatten-Dense. Input [2, 6, 6].
template <typename T>
BasicNetwork<T> small_flat_net(Rng& rng, std::size_t classes = 3) {
  std::vector<Layer<T>> l;
  l.push_back({0, "conv0", random_conv<T>({3, 2, 3, 3, 1, 0}, rng)});
  l.push_back({0, "relu0", layer::ReLU{}});
  l.push_back({0, "conv1", random_conv<T>({2, 3, 2, 2, 1, 0}, rng)});
  l.push_back({0, "relu1", layer::ReLU{}});
  l.push_back({0, "flat", layer::Flatten{}});
  l.push_back({0, "fc", random_dense<T>(classes, 2 * 3 * 3, rng)});
  return BasicNetwork<T>({2, 6, 6}, std::move(l));
}

// Flatten then Dense: logits = W x + b.
template <typename T>
BasicNetwork<T> linear_net(const Shape& input, const BasicTensor<T>& w, std::vector<T> b) {
  std::vector<Layer<T>> l;
  l.push_back({0, "flat", layer::Flatten{}});
  l.push_back({0, "fc", layer::Dense<T>{w, std::move(b)}});
  return BasicNetwork<T>(input, std::move(l));
}

// Zeroes every parameter of the final Dense layer.
template <typename T>
void zero_head(BasicNetwork<T>& net) {
  for (auto& l : net.mutable_layers()) {
    if (auto* d = std::get_if<layer::Dense<T>>(&l.op)) {
      d->weights.fill(T{0});
      std::fill(d->bias.begin(), d->bias.end(), T{0});
    }
  }
}

struct FdCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Central differences of the scalar f around x, compared with `grad`. The
// functions under test are piecewise linear, so a coordinate whose forward
// and backward one-sided differences disagree straddles a ReLU or max-pool
// kink (including pool ties) and is skipped. The error is the max-norm
// difference relative to the max-norm of the finite-difference gradient.
inline FdCheck finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, const std::vector<double>& grad,
                                       double step = 1e-3) {
  FdCheck r;
  const double f0 = f(x);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    const double fwd = (fp - f0) / step, bwd = (f0 - fm) / step;
    if (std::fabs(fwd - bwd) > 1e-7 * std::max(1.0, std::fabs(fwd))) {
      ++r.skipped;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * step);
    num = std::max(num, std::fabs(fd - grad[i]));
    den = std::max(den, std::fabs(fd));
    ++r.checked;
  }
  r.max_rel_error = den > 0.0 ? num / den : num;
  return r;
}

template <typename T>
std::vector<double> to_doubles(const BasicTensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

template <typename T>
BasicTensor<T> from_doubles(const Shape& shape, const std::vector<double>& v) {
  return BasicTensor<T>(shape, std::vector<T>(v.begin(), v.end()));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("sarxai_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace sxt
