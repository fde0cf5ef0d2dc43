#pragma once

// Synthetic speckled patches, directory ingestion, stratified splitting and
// dataset persistence (PGM files plus manifest.json).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarxai/binary.hpp"
#include "sarxai/dataset.hpp"
#include "sarxai/error.hpp"
#include "sarxai/image_io.hpp"
#include "sarxai/random.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

inline constexpr std::array<const char*, 6> kSyntheticClassNames = {
    "c0_strip", "c1_grid", "c2_flat", "c3_blocks", "c4_parallel", "c5_ring",
};

struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t patches_per_class = 100;
  std::size_t size = 64;
  std::size_t speckle_looks = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2 || num_classes > kSyntheticClassNames.size()) {
      throw ConfigError("synthetic data: num_classes must be between 2 and 6, got " +
                        std::to_string(num_classes));
    }
    if (patches_per_class == 0) throw ConfigError("synthetic data: patches_per_class must be positive");
    if (size < 8) throw ConfigError("synthetic data: size must be at least 8");
    if (speckle_looks == 0) throw ConfigError("synthetic data: speckle_looks must be at least 1");
  }
};

struct SyntheticPatch {
  Tensor reflectivity;  // noise-free template, [1, S, S]
  Tensor image;         // speckled and clipped, [1, S, S]
};

// Unit-mean gamma speckle with shape L (an L-look intensity).
inline double speckle_sample(Rng& rng, std::size_t looks) {
  const double l = static_cast<double>(looks);
  return rng.gamma(l, 1.0 / l);
}

// Class templates, randomized in position and orientation:
//   0 bright diagonal strip    1 regular grid of bright points
//   2 low uniform reflectivity 3 a few bright rectangular blocks
//   4 two parallel strips      5 concentric bright ring
inline Tensor synthetic_template(std::size_t cls, std::size_t size, Rng& rng) {
  const double s = static_cast<double>(size);
  const double background = 0.08 + 0.04 * rng.uniform();
  const double bright = 0.6 + 0.2 * rng.uniform();
  Tensor t({1, size, size}, static_cast<float>(background));
  auto paint = [&](auto&& inside) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          t[y * size + x] = static_cast<float>(bright);
        }
      }
    }
  };
  auto strip_distance = [](double cx, double cy, double theta) {
    const double nx = -std::sin(theta), ny = std::cos(theta);
    return [=](double x, double y) { return (x - cx) * nx + (y - cy) * ny; };
  };

  switch (cls) {
    case 0: {
      const double cx = s * rng.uniform(0.3, 0.7), cy = s * rng.uniform(0.3, 0.7);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double half = s * rng.uniform(0.04, 0.07);
      const auto dist = strip_distance(cx, cy, theta);
      paint([&](double x, double y) { return std::fabs(dist(x, y)) < half; });
      break;
    }
    case 1: {
      const double spacing = s * rng.uniform(0.14, 0.2);
      const double ox = rng.uniform(0.0, spacing), oy = rng.uniform(0.0, spacing);
      const double phi = rng.uniform(0.0, std::numbers::pi / 2);
      const double radius = std::max(1.5, s * 0.025);
      const double c = std::cos(phi), sn = std::sin(phi);
      paint([&](double x, double y) {
        const double u = c * x + sn * y - ox, v = -sn * x + c * y - oy;
        const double du = u - spacing * std::round(u / spacing);
        const double dv = v - spacing * std::round(v / spacing);
        return du * du + dv * dv < radius * radius;
      });
      break;
    }
    case 2: {
      t.fill(static_cast<float>(0.15 + 0.1 * rng.uniform()));
      break;
    }
    case 3: {
      const std::size_t count = 2 + static_cast<std::size_t>(rng.below(3));
      for (std::size_t b = 0; b < count; ++b) {
        const double w = s * rng.uniform(0.125, 0.25), h = s * rng.uniform(0.125, 0.25);
        const double x0 = rng.uniform(0.0, s - w), y0 = rng.uniform(0.0, s - h);
        paint([&](double x, double y) { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; });
      }
      break;
    }
    case 4: {
      const double cx = s * rng.uniform(0.35, 0.65), cy = s * rng.uniform(0.35, 0.65);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double gap = s * rng.uniform(0.12, 0.17);
      const double half = s * 0.03;
      const auto dist = strip_distance(cx, cy, theta);
      paint([&](double x, double y) {
        const double d = dist(x, y);
        return std::fabs(d - gap) < half || std::fabs(d + gap) < half;
      });
      break;
    }
    case 5: {
      const double cx = s * rng.uniform(0.35, 0.65), cy = s * rng.uniform(0.35, 0.65);
      const double radius = s * rng.uniform(1.0 / 6.0, 1.0 / 3.0);
      const double half = s * 0.03;
      paint([&](double x, double y) {
        return std::fabs(std::hypot(x - cx, y - cy) - radius) < half;
      });
      break;
    }
    default:
      throw ConfigError("synthetic data: no template for class " + std::to_string(cls));
  }
  return t;
}

inline SyntheticPatch synthesize_patch(std::size_t cls, std::size_t size, std::size_t looks,
                                       Rng& rng) {
  SyntheticPatch p;
  p.reflectivity = synthetic_template(cls, size, rng);
  p.image = p.reflectivity;
  for (float& v : p.image.data()) {
    v = static_cast<float>(std::clamp(v * speckle_sample(rng, looks), 0.0, 1.0));
  }
  return p;
}

// Record (class, index) draws from its own stream derived from
// (seed, class, index).
inline Rng patch_rng(std::uint64_t seed, std::size_t cls, std::size_t index) {
  return Rng(hash_combine(hash_combine(seed, cls), index));
}

inline Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) ds.class_names.emplace_back(kSyntheticClassNames[c]);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < cfg.patches_per_class; ++i) {
      Rng rng = patch_rng(cfg.seed, c, i);
      PatchRecord r;
      r.image = synthesize_patch(c, cfg.size, cfg.speckle_looks, rng).image;
      r.label = c;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04zu", kSyntheticClassNames[c], i);
      r.image_id = id;
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct SplitResult {
  Dataset train, val, test;
};

// Per-class counts by largest-remainder rounding of n * fraction (ties go to
// the earlier split: train, then val, then test).
inline std::array<std::size_t, 3> stratified_counts(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr = {f.train, f.val, f.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double q = static_cast<double>(n) * fr[k];
    counts[k] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[k] = q - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
    if (fr[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  return counts;
}

// Stratified by class, deterministic per seed; records keep their dataset
// order within each part and are tagged with their split.
inline SplitResult split(const Dataset& ds, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0.0 || f.val < 0.0 || f.test < 0.0 ||
      std::fabs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  }
  std::vector<Split> assignment(ds.size(), Split::Unassigned);
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.records[i].label].push_back(i);
  for (auto& [label, idx] : by_class) {
    Rng rng(hash_combine(seed, label));
    rng.shuffle(idx.begin(), idx.end());
    const auto counts = stratified_counts(idx.size(), f);
    std::size_t k = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) assignment[idx[k++]] = Split::Train;
    for (std::size_t i = 0; i < counts[1]; ++i) assignment[idx[k++]] = Split::Val;
    for (std::size_t i = 0; i < counts[2]; ++i) assignment[idx[k++]] = Split::Test;
  }
  SplitResult out{{ds.class_names, {}}, {ds.class_names, {}}, {ds.class_names, {}}};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    PatchRecord r = ds.records[i];
    r.split = assignment[i];
    if (r.split == Split::Train) out.train.records.push_back(std::move(r));
    else if (r.split == Split::Val) out.val.records.push_back(std::move(r));
    else out.test.records.push_back(std::move(r));
  }
  return out;
}

inline Tensor image_from_buffer(const ImageBuffer& img) {
  if (img.channels != 1) throw FormatError("expected an 8-bit grayscale image");
  Tensor t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    t[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  }
  return t;
}

inline ImageBuffer quantize_image(const Tensor& image) {
  require_rank(image, 3, "quantize_image");
  if (image.dim(0) != 1) throw ShapeError("quantize_image: expected a single-channel image");
  ImageBuffer img(image.dim(2), image.dim(1), 1);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return img;
}

struct LoadStats {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".pgm";
}

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir,
                                                         bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void warn(LoadStats* stats, const std::string& msg) {
  if (stats) stats->warnings.push_back(msg);
  else std::cerr << "warning: " << msg << '\n';
}

inline void check_uniform_size(const Dataset& ds) {
  for (const auto& r : ds.records) {
    if (r.image.shape() != ds.records.front().image.shape()) {
      throw FormatError("mixed image sizes: " + r.image_id + " is " +
                        shape_to_string(r.image.shape()) + " but " +
                        ds.records.front().image_id + " is " +
                        shape_to_string(ds.records.front().image.shape()));
    }
  }
}

inline Dataset load_manifest(const std::filesystem::path& root, LoadStats* stats) {
  nlohmann::json m;
  try {
    const auto bytes = read_file(root / "manifest.json");
    m = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  try {
    ds.class_names = m.at("classes").get<std::vector<std::string>>();
    for (const auto& rec : m.at("records")) {
      PatchRecord r;
      r.image_id = rec.at("id").get<std::string>();
      r.label = rec.at("label").get<std::size_t>();
      r.polarization = parse_polarization(rec.value("polarization", "unspecified"));
      r.split = parse_split(rec.value("split", "unassigned"));
      if (r.label >= ds.class_names.size()) {
        throw FormatError("manifest.json: label out of range for " + r.image_id);
      }
      const std::filesystem::path file = root / rec.at("file").get<std::string>();
      try {
        r.image = image_from_buffer(read_image(file));
      } catch (const Error& e) {
        if (stats) ++stats->skipped;
        warn(stats, "skipping unreadable " + file.string() + ": " + e.what());
        continue;
      }
      if (stats) ++stats->loaded;
      ds.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  return ds;
}

}  // namespace detail

// Layouts: root/{VH,VV}/<class>/<file> or root/<class>/<file>, files .png or
// .pgm (8-bit grayscale). Labels follow sorted class names; ids are relative
// paths. A manifest.json in root takes precedence over the directory scan.
inline Dataset load_directory(const std::filesystem::path& root, LoadStats* stats = nullptr) {
  if (!std::filesystem::is_directory(root)) {
    throw IoError("dataset directory '" + root.string() + "' does not exist");
  }
  Dataset ds;
  if (std::filesystem::exists(root / "manifest.json")) {
    ds = detail::load_manifest(root, stats);
  } else {
    std::vector<std::pair<Polarization, std::filesystem::path>> groups;
    for (const char* pol : {"VH", "VV"}) {
      if (std::filesystem::is_directory(root / pol)) {
        groups.emplace_back(parse_polarization(pol), root / pol);
      }
    }
    if (groups.empty()) groups.emplace_back(Polarization::Unspecified, root);

    std::set<std::string> names;
    for (const auto& [pol, dir] : groups) {
      for (const auto& c : detail::sorted_entries(dir, true)) names.insert(c.filename().string());
    }
    ds.class_names.assign(names.begin(), names.end());
    if (ds.class_names.empty()) throw FormatError("no class directories under " + root.string());

    for (const auto& [pol, dir] : groups) {
      for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
        const std::filesystem::path cdir = dir / ds.class_names[label];
        if (!std::filesystem::is_directory(cdir)) continue;
        std::size_t count = 0;
        for (const auto& file : detail::sorted_entries(cdir, false)) {
          if (!detail::is_image_file(file)) continue;
          PatchRecord r;
          try {
            r.image = image_from_buffer(read_image(file));
          } catch (const Error& e) {
            if (stats) ++stats->skipped;
            detail::warn(stats, "skipping unreadable " + file.string() + ": " + e.what());
            continue;
          }
          r.label = label;
          r.polarization = pol;
          r.image_id = std::filesystem::relative(file, root).generic_string();
          ds.records.push_back(std::move(r));
          ++count;
          if (stats) ++stats->loaded;
        }
        if (count == 0) {
          throw FormatError("class directory '" + cdir.string() + "' contains no readable images");
        }
      }
    }
  }
  if (ds.empty()) throw FormatError("no images found under " + root.string());
  detail::check_uniform_size(ds);
  return ds;
}

// Writes <dir>/<class>/<id>.pgm for every record plus manifest.json.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                         const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json m;
  m["format"] = "sarxai-dataset";
  m["version"] = 1;
  m["classes"] = ds.class_names;
  m["config"] = provenance;
  m["records"] = nlohmann::json::array();
  for (const auto& r : ds.records) {
    const std::string file = ds.class_names.at(r.label) + "/" + r.image_id + ".pgm";
    write_image(quantize_image(r.image), dir / file, ImageFormat::PGM);
    m["records"].push_back({{"id", r.image_id},
                            {"file", file},
                            {"label", r.label},
                            {"polarization", polarization_name(r.polarization)},
                            {"split", split_name(r.split)}});
  }
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace sarxai
