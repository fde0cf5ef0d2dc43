#pragma once

// Command-line front end: synth, train, explain, evaluate. run_cli is the
// whole program minus process setup, so it can be driven in-process.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print
// one line "error: <kind>: <message>" to the error stream.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sarxai/sarxai.hpp"

namespace sarxai::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

namespace fs = std::filesystem;

// Options whose values do not influence results and are left out of the
// echoed configuration.
inline bool echoed(const std::string& name) {
  return name != "help" && name != "out" && name != "config" && name != "jobs";
}

inline nlohmann::json scalar_json(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

// Effective value of every option of `cmd`: given on the command line, read
// from the config file or the environment, or defaulted.
inline nlohmann::json effective_config(const CLI::App& cmd) {
  nlohmann::json j = nlohmann::json::object();
  j["command"] = cmd.get_name();
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || !echoed(name)) continue;
    if (opt->get_expected_max() == 0) {
      j[name] = opt->count() > 0;
      continue;
    }
    std::vector<std::string> values = opt->count() > 0 ? opt->reduced_results()
                                                       : std::vector<std::string>{};
    if (values.empty()) {
      const std::string def = opt->get_default_str();
      if (def.empty()) {
        j[name] = nullptr;
        continue;
      }
      values = CLI::detail::split(def.front() == '[' ? def.substr(1, def.size() - 2) : def, ',');
    }
    if (opt->get_expected_max() > 1 || values.size() > 1) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& v : values) arr.push_back(scalar_json(CLI::detail::trim_copy(v)));
      j[name] = arr;
    } else {
      j[name] = scalar_json(values.front());
    }
  }
  return j;
}

inline Baseline parse_baseline(const std::string& s, const char* flag) {
  if (s == "zero") return {Baseline::Kind::Zero, 0.0f};
  if (s == "mean") return {Baseline::Kind::Mean, 0.0f};
  try {
    std::size_t used = 0;
    const float v = std::stof(s, &used);
    if (used == s.size()) return {Baseline::Kind::Constant, v};
  } catch (const std::exception&) {
  }
  throw UsageError(std::string(flag) + ": expected zero, mean or a number, got '" + s + "'");
}

inline std::vector<Method> parse_method_list(const std::string& list) {
  if (list == "all") return {kAllMethods.begin(), kAllMethods.end()};
  std::vector<Method> out;
  for (const std::string& raw : CLI::detail::split(list, ',')) {
    const std::string name = CLI::detail::trim_copy(raw);
    const auto m = parse_method(name);
    if (!m) {
      throw UsageError("unknown method '" + name + "'; valid methods: " + valid_method_names() +
                       ", all");
    }
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  if (out.empty()) throw UsageError("empty method list");
  return out;
}

struct MethodFlags {
  std::size_t ig_steps = 50;
  std::string ig_baseline = "zero";
  std::size_t occlusion_window = 15;
  std::size_t occlusion_stride = 5;
  std::string occlusion_baseline = "zero";
  std::string gradcam_layer = "last_conv";
  std::string objective = "logit";
};

inline void add_method_flags(CLI::App& cmd, MethodFlags& f) {
  cmd.add_option("--ig-steps", f.ig_steps, "integrated gradients: path steps")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--ig-baseline", f.ig_baseline, "integrated gradients: zero, mean or a value");
  cmd.add_option("--occlusion-window", f.occlusion_window, "occlusion: square window side")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--occlusion-stride", f.occlusion_stride, "occlusion: window stride")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--occlusion-baseline", f.occlusion_baseline,
                 "occlusion: zero, mean or a value");
  cmd.add_option("--gradcam-layer", f.gradcam_layer,
                 "Grad-CAM: conv layer name or id, or last_conv");
  cmd.add_option("--objective", f.objective, "explained score")
      ->check(CLI::IsMember({"logit", "softmax"}));
}

inline std::optional<std::size_t> resolve_layer(const Network& net, const std::string& s) {
  if (s == "last_conv") return std::nullopt;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == s || std::to_string(i) == s) {
      if (!std::holds_alternative<layer::Conv<float>>(layers[i].op)) {
        throw UsageError("--gradcam-layer: layer '" + s + "' is not a convolution");
      }
      return i;
    }
  }
  throw UsageError("--gradcam-layer: no layer named '" + s + "'");
}

inline std::vector<Explainer> make_explainers(const Network& net, const std::vector<Method>& ms,
                                              const MethodFlags& f, std::size_t jobs) {
  ExplainOptions opt;
  opt.objective = f.objective == "softmax" ? Objective::Softmax : Objective::Logit;
  opt.jobs = jobs;
  std::vector<Explainer> out;
  for (Method m : ms) {
    MethodParams p = NoParams{};
    switch (m) {
      case Method::IntegratedGradients:
        p = IntGradParams{f.ig_steps, parse_baseline(f.ig_baseline, "--ig-baseline")};
        break;
      case Method::Occlusion:
        p = OcclusionParams{f.occlusion_window, f.occlusion_window, f.occlusion_stride,
                            f.occlusion_stride,
                            parse_baseline(f.occlusion_baseline, "--occlusion-baseline")};
        break;
      case Method::GradCam:
      case Method::GuidedGradCam:
        p = GradCamParams{resolve_layer(net, f.gradcam_layer)};
        break;
      default:
        break;
    }
    out.push_back({m, p, opt});
  }
  return out;
}

// Class names saved next to a weight file by `train`, if present.
inline std::vector<std::string> model_class_names(const fs::path& model) {
  const fs::path side = model.string() + ".json";
  if (!fs::exists(side)) return {};
  try {
    const auto bytes = read_file(side);
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    return j.value("class_names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception&) {
    return {};
  }
}

inline std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  std::vector<double> fractions = {0.7, 0.15, 0.15};
  std::uint64_t split_seed = 7;
};

inline void add_synth(CLI::App& app, SynthArgs& a) {
  CLI::App* cmd = app.add_subcommand("synth", "write a synthetic speckled dataset");
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--classes", a.cfg.num_classes, "number of classes (2 to 6)");
  cmd->add_option("--per-class", a.cfg.patches_per_class, "patches per class")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--size", a.cfg.size, "patch side in pixels (at least 8)");
  cmd->add_option("--looks", a.cfg.speckle_looks, "speckle looks")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.cfg.seed, "generator seed")->envname("SARXAI_SEED");
  cmd->add_option("--fractions", a.fractions, "train, val and test fractions")
      ->expected(3)
      ->delimiter(',');
  cmd->add_option("--split-seed", a.split_seed, "seed of the stratified split");
}

inline int run_synth(const CLI::App& cmd, const SynthArgs& a, std::ostream& out) {
  if (a.cfg.num_classes < 2 || a.cfg.num_classes > kSyntheticClassNames.size()) {
    throw UsageError("--classes must lie in [2, " + std::to_string(kSyntheticClassNames.size()) +
                     "], one reflectivity template per class");
  }
  Dataset ds = generate_synthetic(a.cfg);
  const SplitResult parts =
      split(ds, {a.fractions[0], a.fractions[1], a.fractions[2]}, a.split_seed);
  std::map<std::string, Split> tag;
  for (const Dataset* d : {&parts.train, &parts.val, &parts.test}) {
    for (const auto& r : d->records) tag[r.image_id] = r.split;
  }
  for (auto& r : ds.records) r.split = tag.at(r.image_id);
  save_dataset(ds, a.out, effective_config(cmd));

  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    std::size_t n[3] = {0, 0, 0};
    for (const auto& r : ds.records) {
      if (r.label != c) continue;
      if (r.split == Split::Train) ++n[0];
      if (r.split == Split::Val) ++n[1];
      if (r.split == Split::Test) ++n[2];
    }
    out << ds.class_names[c] << ": " << (n[0] + n[1] + n[2]) << " (train " << n[0] << ", val "
        << n[1] << ", test " << n[2] << ")\n";
  }
  out << "wrote " << ds.size() << " patches to " << a.out << "\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  TrainConfig train;
  std::vector<std::size_t> widths = {16, 32, 64};
  std::size_t blocks = 2;
  bool no_augment = false;
  std::string polarization = "all";
  std::uint64_t split_seed = 7;
};

inline void add_train(CLI::App& app, TrainArgs& a) {
  CLI::App* cmd = app.add_subcommand("train", "train the classifier");
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--out", a.out, "weight file to write")->required();
  cmd->add_option("--epochs", a.train.epochs, "training epochs");
  cmd->add_option("--lr", a.train.learning_rate, "base learning rate");
  cmd->add_option("--momentum", a.train.momentum, "SGD momentum");
  cmd->add_option("--batch-size", a.train.batch_size, "minibatch size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lr-step", a.train.lr_schedule.every_n_epochs,
                  "epochs between learning-rate decays (0 keeps it constant)");
  cmd->add_option("--lr-factor", a.train.lr_schedule.factor, "learning-rate decay factor");
  cmd->add_option("--seed", a.train.seed, "initialization and shuffling seed")
      ->envname("SARXAI_SEED");
  cmd->add_option("--widths", a.widths, "channels per stage")->delimiter(',');
  cmd->add_option("--blocks", a.blocks, "residual blocks per stage")->check(CLI::PositiveNumber);
  cmd->add_flag("--no-augment", a.no_augment, "disable flip augmentation");
  cmd->add_option("--polarization", a.polarization, "records to use")
      ->check(CLI::IsMember({"all", "VH", "VV"}));
  cmd->add_option("--split-seed", a.split_seed, "split seed for datasets without split tags");
}

inline Dataset select_polarization(const Dataset& ds, const std::string& pol) {
  if (pol == "all") return ds;
  Dataset out = ds.subset(parse_polarization(pol));
  if (out.empty()) throw Error("dataset has no " + pol + " records");
  return out;
}

inline bool has_split_tags(const Dataset& ds) {
  return std::any_of(ds.records.begin(), ds.records.end(),
                     [](const PatchRecord& r) { return r.split != Split::Unassigned; });
}

inline void print_warnings(const LoadStats& stats, std::ostream& err) {
  for (const auto& w : stats.warnings) err << "warning: " << w << "\n";
}

inline int run_train(const CLI::App& cmd, TrainArgs a, std::ostream& out, std::ostream& err) {
  LoadStats stats;
  const Dataset ds = select_polarization(load_directory(a.data, &stats), a.polarization);
  print_warnings(stats, err);
  Dataset train_set, val_set;
  if (has_split_tags(ds)) {
    train_set = ds.subset(Split::Train);
    val_set = ds.subset(Split::Val);
  } else {
    SplitResult parts = split(ds, {}, a.split_seed);
    train_set = std::move(parts.train);
    val_set = std::move(parts.val);
  }
  if (train_set.empty()) throw Error("dataset has no training records");
  if (val_set.empty()) throw Error("dataset has no validation records");

  a.train.augment_flips = !a.no_augment;
  if (a.train.lr_schedule.every_n_epochs == 0) a.train.lr_schedule.kind = LrSchedule::Kind::Constant;
  ClassifierConfig mc;
  mc.num_classes = ds.num_classes();
  mc.input_height = ds.records.front().image.dim(1);
  mc.input_width = ds.records.front().image.dim(2);
  mc.stage_widths = a.widths;
  mc.blocks_per_stage = a.blocks;
  mc.seed = a.train.seed;
  const Network init = build_classifier(mc);
  out << "training on " << train_set.size() << " records, validating on " << val_set.size()
      << "; " << init.parameter_count() << " parameters\n";

  nlohmann::json history = nlohmann::json::array();
  const TrainResult result = train(init, train_set, val_set, a.train, [&](const EpochStats& e) {
    char line[160];
    std::snprintf(line, sizeof line,
                  "epoch %3zu  lr %.6f  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n",
                  e.epoch, e.learning_rate, e.train_loss, e.train_accuracy, e.val_loss,
                  e.val_accuracy);
    out << line << std::flush;
    history.push_back({{"epoch", e.epoch},
                       {"learning_rate", e.learning_rate},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"val_loss", e.val_loss},
                       {"val_accuracy", e.val_accuracy}});
  });
  const double val_acc = result.best_epoch == 0
                             ? evaluate_accuracy(result.network, val_set).accuracy
                             : result.best_val_accuracy;
  save_weights(result.network, a.out);

  nlohmann::json side;
  side["run_config"] = effective_config(cmd);
  side["class_names"] = ds.class_names;
  side["input_shape"] = result.network.input_shape();
  side["parameters"] = result.network.parameter_count();
  side["history"] = history;
  side["best_epoch"] = result.best_epoch;
  side["validation_accuracy"] = val_acc;
  write_text_file(a.out + ".json", json_text(side));

  out << "validation accuracy: " << fixed(val_acc, 4);
  if (result.best_epoch > 0) out << " (best epoch " << result.best_epoch << ")";
  out << "\nwrote " << a.out << "\n";
  return kExitOk;
}

// ---- explain --------------------------------------------------------------

struct RenderFlags {
  std::string mode = "sequential";
  double alpha = 0.5;
  double clip_low = 1.0;
  double clip_high = 99.0;
  std::string signed_handling = "symmetric";

  RenderConfig config() const {
    RenderConfig rc;
    rc.mode = mode == "grayscale"   ? RenderConfig::Mode::Grayscale
              : mode == "diverging" ? RenderConfig::Mode::Diverging
                                    : RenderConfig::Mode::Sequential;
    rc.overlay_alpha = alpha;
    rc.clip_low = clip_low;
    rc.clip_high = clip_high;
    rc.signed_handling = signed_handling == "absolute" ? RenderConfig::SignedHandling::AbsoluteValue
                                                       : RenderConfig::SignedHandling::Symmetric;
    rc.validate();
    return rc;
  }
};

struct ExplainArgs {
  std::string model;
  std::string image;
  std::string method = "all";
  std::string target = "auto";
  std::string out;
  MethodFlags methods;
  RenderFlags render;
};

inline void add_explain(CLI::App& app, ExplainArgs& a) {
  CLI::App* cmd = app.add_subcommand("explain", "explain one image with one or all methods");
  cmd->add_option("--model", a.model, "weight file")->required();
  cmd->add_option("--image", a.image, "8-bit grayscale PNG or PGM")->required();
  cmd->add_option("--method", a.method, "method name, comma list, or all");
  cmd->add_option("--class", a.target, "class index to explain, or auto for the prediction");
  cmd->add_option("--out", a.out, "output directory")->required();
  add_method_flags(*cmd, a.methods);
  cmd->add_option("--render-mode", a.render.mode, "heatmap colouring")
      ->check(CLI::IsMember({"sequential", "diverging", "grayscale"}));
  cmd->add_option("--alpha", a.render.alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--clip-low", a.render.clip_low, "lower clipping percentile");
  cmd->add_option("--clip-high", a.render.clip_high, "upper clipping percentile");
  cmd->add_option("--signed", a.render.signed_handling, "signed map handling")
      ->check(CLI::IsMember({"symmetric", "absolute"}));
}

inline std::size_t parse_class(const std::string& s, std::size_t num_classes) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-') {
    throw UsageError("--class: expected auto or a class index, got '" + s + "'");
  }
  if (v >= num_classes) {
    throw UsageError("--class " + s + " out of range for " + std::to_string(num_classes) +
                     " classes");
  }
  return static_cast<std::size_t>(v);
}

inline int run_explain(const CLI::App& cmd, const ExplainArgs& a, std::size_t jobs,
                       std::ostream& out) {
  const std::vector<Method> methods = parse_method_list(a.method);
  const RenderConfig rc = a.render.config();
  const Network net = load_weights(a.model);
  const Tensor image = image_from_buffer(read_image(a.image));
  const std::vector<Explainer> explainers = make_explainers(net, methods, a.methods, jobs);
  const std::vector<std::string> names = model_class_names(a.model);

  const Prediction pred = predict(net, image);
  std::size_t c = pred.class_index;
  if (a.target == "auto") {
    out << "class: " << c;
    if (c < names.size()) out << " (" << names[c] << ")";
    out << "  p = " << fixed(pred.probabilities[c], 4) << "\n";
  } else {
    c = parse_class(a.target, pred.probabilities.size());
  }

  const fs::path dir = a.out;
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const Explainer& ex : explainers) {
    const AttributionMap att = ex(net, image, c);
    const std::string stem = method_name(ex.method);
    save_att(att, dir / (stem + ".att"));
    write_image(render(att, rc), dir / (stem + "_heatmap.png"), ImageFormat::PNG);
    write_image(overlay(image, att, rc), dir / (stem + "_overlay.png"), ImageFormat::PNG);
    files.push_back({{"method", stem},
                     {"params", params_to_json(ex.params)},
                     {"attribution", stem + ".att"},
                     {"heatmap", stem + "_heatmap.png"},
                     {"overlay", stem + "_overlay.png"}});
    out << "wrote " << stem << ".att, " << stem << "_heatmap.png, " << stem << "_overlay.png\n";
  }
  nlohmann::json j;
  j["run_config"] = effective_config(cmd);
  j["class"] = c;
  j["predicted_class"] = pred.class_index;
  j["probabilities"] = pred.probabilities;
  if (c < names.size()) j["class_name"] = names[c];
  j["outputs"] = files;
  write_text_file(dir / "explain.json", json_text(j));
  return kExitOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::size_t slice = 50;
  std::string split = "test";
  std::string methods = "all";
  SensitivityConfig sensitivity;
  std::string perturbation = "linf";
  std::string norm = "relative";
  int deflate_level = 9;
  std::string out;
  MethodFlags method_flags;
};

inline void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  CLI::App* cmd = app.add_subcommand("evaluate", "score methods with Max-Sensitivity and entropy");
  cmd->add_option("--model", a.model, "weight file")->required();
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--slice", a.slice, "number of images, alternating over classes")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--split", a.split, "records to draw from")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  cmd->add_option("--methods", a.methods, "comma list of methods, or all");
  cmd->add_option("--r", a.sensitivity.radius, "Max-Sensitivity radius on the [0, 1] scale");
  cmd->add_option("--samples", a.sensitivity.num_samples, "Max-Sensitivity samples per image");
  cmd->add_option("--seed", a.sensitivity.seed, "Max-Sensitivity seed")->envname("SARXAI_SEED");
  cmd->add_option("--perturbation", a.perturbation, "perturbation ball")
      ->check(CLI::IsMember({"linf", "l2"}));
  cmd->add_option("--norm", a.norm, "Max-Sensitivity normalization")
      ->check(CLI::IsMember({"relative", "absolute"}));
  cmd->add_option("--deflate-level", a.deflate_level, "entropy compression level")
      ->check(CLI::Range(1, 9));
  cmd->add_option("--out", a.out, "report path; .csv and .json are written side by side")
      ->required();
  add_method_flags(*cmd, a.method_flags);
}

// Up to n records taking one per class in turn, each class in dataset order.
inline std::vector<PatchRecord> balanced_slice(const Dataset& ds, std::size_t n) {
  std::vector<std::vector<const PatchRecord*>> by_class(ds.num_classes());
  for (const auto& r : ds.records) by_class[r.label].push_back(&r);
  std::vector<PatchRecord> out;
  for (std::size_t k = 0; out.size() < n; ++k) {
    bool any = false;
    for (const auto& cls : by_class) {
      if (k < cls.size() && out.size() < n) {
        out.push_back(*cls[k]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

inline int run_evaluate(const CLI::App& cmd, EvaluateArgs a, std::size_t jobs, std::ostream& out,
                        std::ostream& err) {
  const std::vector<Method> methods = parse_method_list(a.methods);
  a.sensitivity.perturbation = a.perturbation == "l2"
                                   ? SensitivityConfig::Perturbation::UniformL2Ball
                                   : SensitivityConfig::Perturbation::UniformLinf;
  a.sensitivity.norm = a.norm == "absolute" ? SensitivityConfig::Norm::FrobeniusAbsolute
                                            : SensitivityConfig::Norm::FrobeniusRelative;
  a.sensitivity.validate();

  const Network net = load_weights(a.model);
  LoadStats stats;
  Dataset ds = load_directory(a.data, &stats);
  print_warnings(stats, err);
  if (a.split != "all") {
    if (!has_split_tags(ds)) {
      throw UsageError("dataset has no split tags; pass --split all");
    }
    ds = ds.subset(parse_split(a.split));
  }
  const std::vector<PatchRecord> slice = balanced_slice(ds, a.slice);
  if (slice.empty()) throw Error("no records in the " + a.split + " split");

  SuiteConfig sc;
  sc.sensitivity = a.sensitivity;
  sc.entropy.deflate_level = a.deflate_level;
  sc.jobs = jobs;
  MetricReport report =
      evaluate_suite(net, slice, make_explainers(net, methods, a.method_flags, 1), sc);
  report.config["run_config"] = effective_config(cmd);

  fs::path stem = a.out;
  if (stem.extension() == ".csv" || stem.extension() == ".json") stem.replace_extension();
  write_text_file(stem.string() + ".csv", report_to_csv(report));
  write_text_file(stem.string() + ".json", json_text(report_to_json(report)));

  out << "evaluated " << slice.size() << " images x " << methods.size() << " methods\n"
      << format_aggregate_table(report) << "wrote " << stem.string() << ".csv, " << stem.string()
      << ".json\n";
  return kExitOk;
}

inline const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return "usage";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  return "runtime";
}

inline std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace detail

// `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Explainability toolkit for SAR patch classifiers", "sarxai");
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "read options from a TOML/INI file ([command] sections)");
  std::size_t jobs = default_jobs();
  app.add_option("--jobs", jobs, "worker thread cap")->check(CLI::PositiveNumber);
  app.require_subcommand(1);
  app.fallthrough();

  detail::SynthArgs synth;
  detail::TrainArgs train_args;
  detail::ExplainArgs explain_args;
  detail::EvaluateArgs evaluate_args;
  detail::add_synth(app, synth);
  detail::add_train(app, train_args);
  detail::add_explain(app, explain_args);
  detail::add_evaluate(app, evaluate_args);

  std::vector<std::string> argv_store{"sarxai"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << detail::one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    const CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "synth") return detail::run_synth(*cmd, synth, out);
    if (name == "train") return detail::run_train(*cmd, train_args, out, err);
    if (name == "explain") return detail::run_explain(*cmd, explain_args, jobs, out);
    return detail::run_evaluate(*cmd, evaluate_args, jobs, out, err);
  } catch (const std::exception& e) {
    const char* kind = detail::error_kind(e);
    err << "error: " << kind << ": " << detail::one_line(e.what()) << "\n";
    return std::string(kind) == "usage" ? kExitUsage : kExitFailure;
  }
}

}  // namespace sarxai::cli
