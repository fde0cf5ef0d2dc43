#pragma once

// Raw attribution file (.att), little-endian:
//
//   "SATT"          magic
//   u8  version     = 1
//   u8  method      Method tag
//   i32 class       explained class index
//   u32 rank, u32 dims[rank]
//   f32 scores...   row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sarxai/attribution.hpp"
#include "sarxai/binary.hpp"
#include "sarxai/error.hpp"

namespace sarxai {

inline constexpr std::uint8_t kAttFileVersion = 1;

inline std::vector<std::uint8_t> encode_att(const AttributionMap& att) {
  ByteWriter w;
  w.text("SATT");
  w.u8(kAttFileVersion);
  w.u8(static_cast<std::uint8_t>(att.method));
  w.i32(static_cast<std::int32_t>(att.target_class));
  w.u32(static_cast<std::uint32_t>(att.scores.rank()));
  for (std::size_t d : att.scores.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(att.scores.data());
  return std::move(w.buffer());
}

// Parameters are not stored; the result carries NoParams.
inline AttributionMap decode_att(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (data.size() < 4 || r.text(4) != "SATT") throw FormatError("attribution file: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kAttFileVersion) {
    throw UnsupportedVersionError("attribution file: unsupported version " +
                                  std::to_string(version));
  }
  const auto method = method_from_tag(r.u8());
  if (!method) throw FormatError("attribution file: unknown method tag");
  const std::int32_t cls = r.i32();
  if (cls < 0) throw FormatError("attribution file: negative class index");
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("attribution file: unsupported rank");
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(r.u32());
    count *= shape.back();
    if (count > (std::size_t{1} << 32)) throw FormatError("attribution file: shape too large");
  }
  if (r.remaining() != count * 4) throw FormatError("attribution file: size does not match shape");
  Tensor scores(shape);
  r.f32s(scores.data());
  return {std::move(scores), *method, static_cast<std::size_t>(cls), NoParams{}};
}

inline void save_att(const AttributionMap& att, const std::filesystem::path& path) {
  write_file(path, encode_att(att));
}

inline AttributionMap load_att(const std::filesystem::path& path) {
  return decode_att(read_file(path));
}

}  // namespace sarxai
