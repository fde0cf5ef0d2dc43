#pragma once

// Weight file layout (all integers little-endian):
//
//   "SXAI"                      magic
//   u8    version               = 1
//   u32   C, H, W               network input shape
//   u32   layer_count
//   per layer:
//     u8  kind                  LayerKind value
//     u32 name_length, bytes    layer name
//     u32 ...                   Conv: out, in, kh, kw, stride, padding
//                               MaxPool: window, stride
//                               Dense: out, in
//                               ResidualAdd: source layer id
//   per Conv/Dense layer, in layer order:
//     f32 weights..., f32 bias...
//   u32   CRC-32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sarxai/binary.hpp"
#include "sarxai/error.hpp"
#include "sarxai/nn.hpp"

namespace sarxai {

inline constexpr std::uint8_t kWeightFileVersion = 1;

inline std::vector<std::uint8_t> serialize_weights(const Network& net) {
  ByteWriter w;
  w.text("SXAI");
  w.u8(kWeightFileVersion);
  for (std::size_t d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.num_layers()));
  for (const auto& l : net.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind()));
    w.u32(static_cast<std::uint32_t>(l.name.size()));
    w.text(l.name);
    std::visit(
        [&](const auto& op) {
          using L = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<L, layer::Conv<float>>) {
            for (std::size_t v : {op.spec.out_channels, op.spec.in_channels, op.spec.kernel_h,
                                  op.spec.kernel_w, op.spec.stride, op.spec.padding}) {
              w.u32(static_cast<std::uint32_t>(v));
            }
          } else if constexpr (std::is_same_v<L, layer::MaxPool>) {
            w.u32(static_cast<std::uint32_t>(op.window));
            w.u32(static_cast<std::uint32_t>(op.stride));
          } else if constexpr (std::is_same_v<L, layer::Dense<float>>) {
            w.u32(static_cast<std::uint32_t>(op.weights.dim(0)));
            w.u32(static_cast<std::uint32_t>(op.weights.dim(1)));
          } else if constexpr (std::is_same_v<L, layer::ResidualAdd>) {
            w.u32(static_cast<std::uint32_t>(op.source));
          }
        },
        l.op);
  }
  for (const auto& l : net.layers()) {
    if (const auto* c = l.conv()) {
      w.f32s(c->weights.data());
      w.f32s(c->bias);
    } else if (const auto* d = l.dense()) {
      w.f32s(d->weights.data());
      w.f32s(d->bias);
    }
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

inline Network deserialize_weights(std::span<const std::uint8_t> data) {
  if (data.size() >= 4 && std::string(data.begin(), data.begin() + 4) != "SXAI") {
    throw FormatError("weight file: bad magic");
  }
  if (data.size() < 5) throw ChecksumError("weight file: truncated");
  if (data[4] != kWeightFileVersion) {
    throw UnsupportedVersionError("weight file: unsupported version " +
                                  std::to_string(static_cast<int>(data[4])));
  }
  if (data.size() < 9) throw ChecksumError("weight file: truncated");
  const auto body = data.first(data.size() - 4);
  ByteReader tail(data.last(4));
  if (crc32_of(body) != tail.u32()) {
    throw ChecksumError("weight file: checksum mismatch (truncated or corrupted)");
  }

  ByteReader r(body.subspan(5));
  Shape input{r.u32(), r.u32(), r.u32()};
  const std::uint32_t count = r.u32();
  if (count > (1u << 20)) throw FormatError("weight file: implausible layer count");
  std::vector<Layer<float>> layers;
  layers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer<float> l;
    l.id = i;
    const auto kind = static_cast<LayerKind>(r.u8());
    const std::uint32_t name_len = r.u32();
    l.name = r.text(name_len);
    switch (kind) {
      case LayerKind::Conv: {
        ConvSpec s;
        s.out_channels = r.u32();
        s.in_channels = r.u32();
        s.kernel_h = r.u32();
        s.kernel_w = r.u32();
        s.stride = r.u32();
        s.padding = r.u32();
        s.validate();
        l.op = layer::Conv<float>{s, Tensor(s.weight_shape()),
                                  std::vector<float>(s.out_channels)};
        break;
      }
      case LayerKind::ReLU: l.op = layer::ReLU{}; break;
      case LayerKind::MaxPool: {
        const std::size_t window = r.u32();
        l.op = layer::MaxPool{window, r.u32()};
        break;
      }
      case LayerKind::GlobalAvgPool: l.op = layer::GlobalAvgPool{}; break;
      case LayerKind::Dense: {
        const std::size_t out = r.u32();
        const std::size_t in = r.u32();
        if (out == 0 || in == 0) throw FormatError("weight file: empty dense layer");
        l.op = layer::Dense<float>{Tensor({out, in}), std::vector<float>(out)};
        break;
      }
      case LayerKind::ResidualAdd: l.op = layer::ResidualAdd{r.u32()}; break;
      case LayerKind::Flatten: l.op = layer::Flatten{}; break;
      default:
        throw FormatError("weight file: unknown layer kind " +
                          std::to_string(static_cast<int>(kind)));
    }
    layers.push_back(std::move(l));
  }
  for (auto& l : layers) {
    if (auto* c = std::get_if<layer::Conv<float>>(&l.op)) {
      r.f32s(c->weights.data());
      r.f32s(c->bias);
    } else if (auto* d = std::get_if<layer::Dense<float>>(&l.op)) {
      r.f32s(d->weights.data());
      r.f32s(d->bias);
    }
  }
  if (r.remaining() != 0) throw FormatError("weight file: trailing bytes before checksum");
  try {
    return Network(std::move(input), std::move(layers));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("weight file: inconsistent network: ") + e.what());
  }
}

inline void save_weights(const Network& net, const std::filesystem::path& path) {
  write_file(path, serialize_weights(net));
}

inline Network load_weights(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> data = read_file(path);
  return deserialize_weights(data);
}

}  // namespace sarxai
