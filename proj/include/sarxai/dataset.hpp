#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sarxai/error.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

enum class Polarization { VH, VV, Unspecified };
enum class Split { Unassigned, Train, Val, Test };

inline const char* polarization_name(Polarization p) {
  switch (p) {
    case Polarization::VH: return "VH";
    case Polarization::VV: return "VV";
    case Polarization::Unspecified: return "unspecified";
  }
  return "unspecified";
}

inline Polarization parse_polarization(std::string_view s) {
  if (s == "VH") return Polarization::VH;
  if (s == "VV") return Polarization::VV;
  if (s == "unspecified" || s.empty()) return Polarization::Unspecified;
  throw FormatError("unknown polarization '" + std::string(s) + "'");
}

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Unassigned: return "unassigned";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unassigned";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unassigned" || s.empty()) return Split::Unassigned;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

// One image patch; pixel values lie in [0, 1].
struct PatchRecord {
  Tensor image;  // [1, H, W]
  std::size_t label = 0;
  Polarization polarization = Polarization::Unspecified;
  std::string image_id;
  Split split = Split::Unassigned;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PatchRecord> records;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  Dataset subset(Split s) const {
    Dataset out{class_names, {}};
    for (const auto& r : records) {
      if (r.split == s) out.records.push_back(r);
    }
    return out;
  }

  Dataset subset(Polarization p) const {
    Dataset out{class_names, {}};
    for (const auto& r : records) {
      if (r.polarization == p) out.records.push_back(r);
    }
    return out;
  }
};

}  // namespace sarxai
