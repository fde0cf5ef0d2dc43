#pragma once

// 8-bit image buffers and their PGM (binary P5) / PNG encodings. Both
// encoders are metadata-free and use fixed settings, so equal buffers always
// produce equal files.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "sarxai/binary.hpp"
#include "sarxai/error.hpp"

namespace sarxai {

struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // rows of width * channels bytes

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {
    if (c != 1 && c != 3) throw ConfigError("image buffer: channels must be 1 or 3");
  }

  std::size_t row_bytes() const { return width * channels; }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

enum class ImageFormat { PGM, PNG };

inline constexpr int kPngCompressionLevel = 9;

inline std::vector<std::uint8_t> encode_pgm(const ImageBuffer& img) {
  if (img.channels != 1) throw ConfigError("PGM output requires a single-channel image");
  ByteWriter w;
  w.text("P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n");
  w.bytes(img.pixels);
  return std::move(w.buffer());
}

inline ImageBuffer decode_pgm(std::span<const std::uint8_t> data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    for (;;) {
      while (pos < data.size() && std::isspace(data[pos])) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= data.size() || !std::isdigit(data[pos])) throw FormatError("PGM: malformed header");
    std::size_t v = 0;
    while (pos < data.size() && std::isdigit(data[pos])) {
      v = v * 10 + static_cast<std::size_t>(data[pos++] - '0');
      if (v > (1u << 24)) throw FormatError("PGM: dimension too large");
    }
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') {
    throw FormatError("PGM: only binary P5 files are supported");
  }
  pos = 2;
  const std::size_t width = number();
  const std::size_t height = number();
  const std::size_t maxval = number();
  if (width == 0 || height == 0) throw FormatError("PGM: empty image");
  if (maxval != 255) throw FormatError("PGM: only 8-bit (maxval 255) images are supported");
  if (pos >= data.size() || !std::isspace(data[pos])) throw FormatError("PGM: malformed header");
  ++pos;
  if (data.size() - pos < width * height) throw FormatError("PGM: truncated pixel data");
  ImageBuffer img(width, height, 1);
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos),
            data.begin() + static_cast<std::ptrdiff_t>(pos + width * height), img.pixels.begin());
  return img;
}

namespace detail {

inline void png_chunk(ByteWriter& w, const char* type, std::span<const std::uint8_t> payload) {
  w.u32_be(static_cast<std::uint32_t>(payload.size()));
  ByteWriter body;
  body.text(std::string_view(type, 4));
  body.bytes(payload);
  w.bytes(body.buffer());
  w.u32_be(crc32_of(body.buffer()));
}

inline std::vector<std::uint8_t> zlib_compress(std::span<const std::uint8_t> raw, int level) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), level) != Z_OK) {
    throw Error("zlib compression failed");
  }
  out.resize(bound);
  return out;
}

inline std::vector<std::uint8_t> zlib_decompress(std::span<const std::uint8_t> data,
                                                 std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &len, data.data(), static_cast<uLong>(data.size()));
  if (rc != Z_OK || len != expected) throw FormatError("PNG: corrupt image data");
  return out;
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

// Non-interlaced 8-bit gray or RGB, filter type 0 on every row, one IDAT
// compressed at kPngCompressionLevel, no ancillary chunks.
inline std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("PNG: unsupported channel count");
  ByteWriter w;
  const std::uint8_t signature[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  w.bytes(signature);

  ByteWriter ihdr;
  ihdr.u32_be(static_cast<std::uint32_t>(img.width));
  ihdr.u32_be(static_cast<std::uint32_t>(img.height));
  ihdr.u8(8);
  ihdr.u8(img.channels == 1 ? 0 : 2);
  ihdr.u8(0);
  ihdr.u8(0);
  ihdr.u8(0);
  detail::png_chunk(w, "IHDR", ihdr.buffer());

  std::vector<std::uint8_t> raw;
  raw.reserve(img.height * (img.row_bytes() + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.row_bytes()),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.row_bytes()));
  }
  detail::png_chunk(w, "IDAT", detail::zlib_compress(raw, kPngCompressionLevel));
  detail::png_chunk(w, "IEND", {});
  return std::move(w.buffer());
}

// Decodes non-interlaced 8-bit grayscale or RGB PNGs (all five row filters).
inline ImageBuffer decode_png(std::span<const std::uint8_t> data) {
  const std::uint8_t signature[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (data.size() < 8 || !std::equal(signature, signature + 8, data.begin())) {
    throw FormatError("PNG: bad signature");
  }
  ByteReader r(data.subspan(8));
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  bool seen_header = false, seen_end = false;
  while (!seen_end) {
    const std::uint32_t len = r.u32_be();
    const auto type_and_payload = r.take(4 + static_cast<std::size_t>(len));
    const std::uint32_t crc = r.u32_be();
    if (crc32_of(type_and_payload) != crc) throw FormatError("PNG: chunk CRC mismatch");
    const std::string type(type_and_payload.begin(), type_and_payload.begin() + 4);
    const auto payload = type_and_payload.subspan(4);
    if (type == "IHDR") {
      ByteReader h(payload);
      width = h.u32_be();
      height = h.u32_be();
      const std::uint8_t depth = h.u8(), color = h.u8(), comp = h.u8(), filter = h.u8(),
                         interlace = h.u8();
      if (depth != 8 || comp != 0 || filter != 0 || interlace != 0) {
        throw FormatError("PNG: only 8-bit non-interlaced images are supported");
      }
      if (color == 0) channels = 1;
      else if (color == 2) channels = 3;
      else throw FormatError("PNG: only grayscale or RGB images are supported");
      if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
        throw FormatError("PNG: unsupported dimensions");
      }
      seen_header = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload.begin(), payload.end());
    } else if (type == "IEND") {
      seen_end = true;
    }
  }
  if (!seen_header) throw FormatError("PNG: missing IHDR");

  const std::size_t stride = width * channels;
  const std::vector<std::uint8_t> raw = detail::zlib_decompress(idat, height * (stride + 1));
  ImageBuffer img(width, height, channels);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* dst = img.pixels.data() + y * stride;
    const std::uint8_t* prev = y ? dst - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= channels ? dst[i - channels] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= channels) ? prev[i - channels] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw FormatError("PNG: invalid row filter");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xFF);
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_image(const ImageBuffer& img, ImageFormat format) {
  return format == ImageFormat::PGM ? encode_pgm(img) : encode_png(img);
}

inline void write_image(const ImageBuffer& img, const std::filesystem::path& path,
                        ImageFormat format) {
  write_file(path, encode_image(img, format));
}

// Format chosen by extension (.pgm or .png, case-insensitive).
inline ImageBuffer read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  const std::vector<std::uint8_t> data = read_file(path);
  if (ext == ".pgm") return decode_pgm(data);
  if (ext == ".png") return decode_png(data);
  throw FormatError("unsupported image extension '" + ext + "'");
}

}  // namespace sarxai
