#pragma once

// Explanation quality metrics: Max-Sensitivity (largest explanation change
// under small input perturbations) and XAI entropy (deflate-compressed size
// of the rendered explanation), with per-method report aggregation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "sarxai/attribution.hpp"
#include "sarxai/dataset.hpp"
#include "sarxai/error.hpp"
#include "sarxai/heatmap.hpp"
#include "sarxai/model.hpp"
#include "sarxai/parallel.hpp"
#include "sarxai/random.hpp"

namespace sarxai {

struct SensitivityConfig {
  enum class Perturbation { UniformLinf, UniformL2Ball };
  enum class Norm { FrobeniusRelative, FrobeniusAbsolute };

  double radius = 0.02;  // input-intensity units on the [0, 1] scale
  std::size_t num_samples = 10;
  Perturbation perturbation = Perturbation::UniformLinf;
  Norm norm = Norm::FrobeniusRelative;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw ConfigError("max-sensitivity: radius must be positive");
    }
    if (num_samples == 0) throw ConfigError("max-sensitivity: num_samples must be at least 1");
  }
};

inline const char* perturbation_name(SensitivityConfig::Perturbation p) {
  return p == SensitivityConfig::Perturbation::UniformLinf ? "uniform_linf" : "uniform_l2_ball";
}

inline const char* norm_name(SensitivityConfig::Norm n) {
  return n == SensitivityConfig::Norm::FrobeniusRelative ? "frobenius_relative"
                                                         : "frobenius_absolute";
}

struct SensitivityResult {
  double score = 0.0;
  double base_norm = 0.0;
  std::vector<double> distances;  // ||phi(x'_i) - phi(x)||_F per sample
};

// Draws one perturbed copy of x inside the configured ball, clipped to [0, 1].
inline Tensor perturb(const Tensor& x, const SensitivityConfig& cfg, Rng& rng) {
  Tensor out = x;
  if (cfg.perturbation == SensitivityConfig::Perturbation::UniformLinf) {
    for (float& v : out.data()) v += static_cast<float>(rng.uniform(-cfg.radius, cfg.radius));
  } else {
    std::vector<double> dir(x.size());
    double norm = 0.0;
    for (double& d : dir) {
      d = rng.normal();
      norm += d * d;
    }
    norm = std::sqrt(norm);
    const double r = cfg.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += static_cast<float>(norm > 0.0 ? r * dir[i] / norm : 0.0);
    }
  }
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

// Sampled estimate of max_{||x' - x|| <= r} ||phi(x') - phi(x)||, optionally
// divided by ||phi(x)||. Finite sampling makes this a lower bound of the true
// maximum. Samples are drawn sequentially from one stream seeded by
// cfg.seed, so the first k samples never depend on num_samples. A
// precomputed explanation of x may be passed as `precomputed`.
template <typename ExplainFn>
SensitivityResult max_sensitivity_detail(const ExplainFn& explainer, const Network& net,
                                         const Tensor& x, std::size_t c,
                                         const SensitivityConfig& cfg,
                                         const AttributionMap* precomputed = nullptr) {
  cfg.validate();
  const AttributionMap base = precomputed ? *precomputed : explainer(net, x, c);
  SensitivityResult res;
  res.base_norm = frobenius_norm(base.scores);
  Rng rng(cfg.seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const Tensor xp = perturb(x, cfg, rng);
    const AttributionMap other = explainer(net, xp, c);
    const double d = frobenius_distance(other.scores, base.scores);
    res.distances.push_back(d);
    worst = std::max(worst, d);
  }
  if (cfg.norm == SensitivityConfig::Norm::FrobeniusAbsolute) {
    res.score = worst;
  } else if (res.base_norm > 0.0) {
    res.score = worst / res.base_norm;
  } else if (worst == 0.0) {
    res.score = 0.0;
  } else {
    throw DegenerateExplanationError(
        "max-sensitivity: base explanation has zero norm but perturbed explanations differ");
  }
  return res;
}

template <typename ExplainFn>
double max_sensitivity(const ExplainFn& explainer, const Network& net, const Tensor& x,
                       std::size_t c, const SensitivityConfig& cfg) {
  return max_sensitivity_detail(explainer, net, x, c, cfg).score;
}

struct EntropyConfig {
  RenderConfig render{RenderConfig::Mode::Grayscale, 1.0, 99.0, 0.5,
                      RenderConfig::SignedHandling::Symmetric};
  int deflate_level = 9;
};

inline std::size_t deflated_size(std::span<const std::uint8_t> raw, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error("deflate initialisation failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())));
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const std::size_t n = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error("deflate failed");
  return n;
}

// Canonical 8-bit grayscale rendering of the map, raw-deflated; returns the
// compressed byte count.
inline std::size_t xai_entropy(const AttributionMap& att, const EntropyConfig& cfg = {}) {
  if (!att.scores.all_finite()) throw ConfigError("xai_entropy: map contains non-finite values");
  RenderConfig rc = cfg.render;
  rc.mode = RenderConfig::Mode::Grayscale;
  const ImageBuffer img = render(att, rc);
  return deflated_size(img.pixels, cfg.deflate_level);
}

struct MetricRow {
  std::string image_id;
  std::size_t class_index = 0;
  Method method = Method::Saliency;
  double max_sensitivity = 0.0;  // NaN when flagged
  std::uint64_t entropy_bytes = 0;
  std::string flag;  // empty, or the reason the sensitivity is missing

  bool flagged() const { return !flag.empty(); }
};

struct MethodAggregate {
  Method method = Method::Saliency;
  std::size_t rows = 0;
  std::size_t flagged = 0;
  double mean_sensitivity = 0.0;  // over unflagged rows
  double median_sensitivity = 0.0;
  double mean_entropy_bytes = 0.0;
  double median_entropy_bytes = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<MethodAggregate> aggregates;  // evaluation-table row order
  nlohmann::json config;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::vector<MethodAggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
  std::vector<MethodAggregate> out;
  for (Method m : kAllMethods) {
    std::vector<double> sens, ent;
    MethodAggregate a;
    a.method = m;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      ++a.rows;
      ent.push_back(static_cast<double>(r.entropy_bytes));
      if (r.flagged()) ++a.flagged;
      else sens.push_back(r.max_sensitivity);
    }
    if (a.rows == 0) continue;
    a.mean_sensitivity = mean_of(sens);
    a.median_sensitivity = median_of(sens);
    a.mean_entropy_bytes = mean_of(ent);
    a.median_entropy_bytes = median_of(ent);
    out.push_back(a);
  }
  return out;
}

struct SuiteConfig {
  SensitivityConfig sensitivity;
  EntropyConfig entropy;
  std::size_t jobs = 1;
};

inline nlohmann::json params_to_json(const MethodParams& params) {
  nlohmann::json j = nlohmann::json::object();
  auto baseline = [](const Baseline& b) {
    switch (b.kind) {
      case Baseline::Kind::Zero: return nlohmann::json("zero");
      case Baseline::Kind::Mean: return nlohmann::json("mean");
      case Baseline::Kind::Constant: return nlohmann::json{{"constant", b.value}};
    }
    return nlohmann::json("zero");
  };
  if (const auto* ig = std::get_if<IntGradParams>(&params)) {
    j["steps"] = ig->steps;
    j["baseline"] = baseline(ig->baseline);
  } else if (const auto* oc = std::get_if<OcclusionParams>(&params)) {
    j["window"] = {oc->window_h, oc->window_w};
    j["stride"] = {oc->stride_h, oc->stride_w};
    j["baseline"] = baseline(oc->baseline);
  } else if (const auto* gc = std::get_if<GradCamParams>(&params)) {
    j["layer"] = gc->layer ? nlohmann::json(*gc->layer) : nlohmann::json("last_conv");
  }
  return j;
}

inline nlohmann::json suite_config_json(const SuiteConfig& cfg,
                                        const std::vector<Explainer>& methods) {
  nlohmann::json j;
  j["max_sensitivity"] = {
      {"radius", cfg.sensitivity.radius},
      {"num_samples", cfg.sensitivity.num_samples},
      {"perturbation", perturbation_name(cfg.sensitivity.perturbation)},
      {"norm", norm_name(cfg.sensitivity.norm)},
      {"seed", cfg.sensitivity.seed},
  };
  j["entropy"] = {
      {"deflate_level", cfg.entropy.deflate_level},
      {"clip_percentiles", {cfg.entropy.render.clip_low, cfg.entropy.render.clip_high}},
      {"signed_handling", cfg.entropy.render.signed_handling ==
                                  RenderConfig::SignedHandling::Symmetric
                              ? "symmetric"
                              : "absolute_value"},
  };
  nlohmann::json ms = nlohmann::json::object();
  for (const auto& e : methods) {
    ms[method_name(e.method)] = params_to_json(e.params);
  }
  j["methods"] = ms;
  j["objective"] = methods.empty() || methods.front().options.objective == Objective::Logit
                       ? "logit"
                       : "softmax";
  return j;
}

// Per-(image, method) RNG stream, independent of evaluation order.
inline std::uint64_t pair_seed(std::uint64_t seed, const std::string& image_id, Method m) {
  return hash_combine(hash_combine(seed, hash_string(image_id)), static_cast<std::uint64_t>(m));
}

// Explains each record's predicted class with every method and scores both
// metrics. Rows are sorted by (image_id, method); a degenerate explanation
// flags its row instead of aborting the run.
inline MetricReport evaluate_suite(const Network& net, const std::vector<PatchRecord>& slice,
                                   const std::vector<Explainer>& methods,
                                   const SuiteConfig& cfg) {
  if (slice.empty()) throw ConfigError("evaluate: empty dataset slice");
  if (methods.empty()) throw ConfigError("evaluate: empty method list");
  cfg.sensitivity.validate();

  std::vector<std::size_t> predicted(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    predicted[i] = predict(net, slice[i].image).class_index;
  }
  std::vector<MetricRow> rows(slice.size() * methods.size());
  parallel_for(rows.size(), cfg.jobs, [&](std::size_t k) {
    const PatchRecord& rec = slice[k / methods.size()];
    const std::size_t c = predicted[k / methods.size()];
    Explainer ex = methods[k % methods.size()];
    ex.options.jobs = 1;
    MetricRow& row = rows[k];
    row.image_id = rec.image_id;
    row.class_index = c;
    row.method = ex.method;
    SensitivityConfig sc = cfg.sensitivity;
    sc.seed = pair_seed(cfg.sensitivity.seed, rec.image_id, ex.method);
    const AttributionMap base = ex(net, rec.image, c);
    row.entropy_bytes = xai_entropy(base, cfg.entropy);
    try {
      row.max_sensitivity = max_sensitivity_detail(ex, net, rec.image, c, sc, &base).score;
    } catch (const DegenerateExplanationError&) {
      row.max_sensitivity = std::numeric_limits<double>::quiet_NaN();
      row.flag = "degenerate_explanation";
    }
  });
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return static_cast<int>(a.method) < static_cast<int>(b.method);
  });

  MetricReport report;
  report.rows = std::move(rows);
  report.aggregates = aggregate_rows(report.rows);
  report.config = suite_config_json(cfg, methods);
  return report;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string report_to_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "image_id,class,method,max_sensitivity,entropy_bytes\n";
  for (const auto& r : report.rows) {
    os << r.image_id << ',' << r.class_index << ',' << method_name(r.method) << ','
       << format_double(r.max_sensitivity) << ',' << r.entropy_bytes << '\n';
  }
  return os.str();
}

inline nlohmann::json report_to_json(const MetricReport& report) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j;
  j["config"] = report.config;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = {{"image_id", r.image_id},
                          {"class", r.class_index},
                          {"method", method_name(r.method)},
                          {"max_sensitivity", num(r.max_sensitivity)},
                          {"entropy_bytes", r.entropy_bytes}};
    if (r.flagged()) row["flag"] = r.flag;
    j["rows"].push_back(row);
  }
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : report.aggregates) {
    j["aggregates"].push_back({{"method", method_name(a.method)},
                               {"rows", a.rows},
                               {"flagged", a.flagged},
                               {"max_sensitivity_mean", num(a.mean_sensitivity)},
                               {"max_sensitivity_median", num(a.median_sensitivity)},
                               {"entropy_bytes_mean", num(a.mean_entropy_bytes)},
                               {"entropy_bytes_median", num(a.median_entropy_bytes)}});
  }
  j["notes"] = "max_sensitivity is a sampled lower bound of the maximum over the perturbation ball";
  return j;
}

// Aggregate table in evaluation-table row order; entropy in KB (bytes / 1024).
inline std::string format_aggregate_table(const MetricReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %12s %8s\n", "method", "MS mean",
                "MS median", "entropy KB", "entropy med", "flagged");
  os << line;
  for (const auto& a : report.aggregates) {
    std::snprintf(line, sizeof line, "%-24s %12.4f %12.4f %12.3f %12.3f %8zu\n",
                  method_display_name(a.method), a.mean_sensitivity, a.median_sensitivity,
                  a.mean_entropy_bytes / 1024.0, a.median_entropy_bytes / 1024.0, a.flagged);
    os << line;
  }
  return os.str();
}

}  // namespace sarxai
