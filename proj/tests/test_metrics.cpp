#include "support.hpp"

using namespace sxt;

namespace {

Network tiny_classifier(std::uint64_t seed) {
  ClassifierConfig cfg;
  cfg.num_classes = 3;
  cfg.stage_widths = {4, 8};
  cfg.blocks_per_stage = 1;
  cfg.input_height = 16;
  cfg.input_width = 16;
  cfg.seed = seed;
  return build_classifier(cfg);
}

std::vector<PatchRecord> random_records(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PatchRecord r;
    r.image = random_tensor<float>({1, size, size}, rng, 0.0, 1.0);
    r.image_id = "img_" + std::to_string(i);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Explainer> all_explainers() {
  std::vector<Explainer> out;
  for (Method m : kAllMethods) {
    MethodParams p = default_params(m);
    if (auto* ig = std::get_if<IntGradParams>(&p)) ig->steps = 16;
    if (auto* oc = std::get_if<OcclusionParams>(&p)) {
      oc->window_h = oc->window_w = 4;
      oc->stride_h = oc->stride_w = 4;
    }
    out.push_back({m, p, {}});
  }
  return out;
}

AttributionMap map_of(Tensor scores) {
  return AttributionMap{std::move(scores), Method::Saliency, 0, NoParams{}};
}

}  // namespace

TEST(MaxSensitivity, LinearInputTimesGradientClosedForm) {
  // For logits W x + b, Input x Gradient is x * W[c], so every perturbed
  // explanation differs from the base by (x' - x) * W[c].
  Rng rng(11);
  const Tensor w = random_tensor<float>({2, 25}, rng);
  const Network net = linear_net<float>({1, 5, 5}, w, {0.1f, -0.2f});
  const Tensor x = random_tensor<float>({1, 5, 5}, rng, 0.1, 0.9);
  const Explainer ex{Method::InputXGradient, NoParams{}, {}};
  for (auto pert : {SensitivityConfig::Perturbation::UniformLinf,
                    SensitivityConfig::Perturbation::UniformL2Ball}) {
    SensitivityConfig cfg;
    cfg.perturbation = pert;
    cfg.radius = 0.05;
    cfg.num_samples = 12;
    cfg.seed = 99;
    const double got = max_sensitivity(ex, net, x, 1, cfg);

    double base = 0.0;
    for (std::size_t i = 0; i < 25; ++i) base += std::pow(double(x[i]) * w[25 + i], 2);
    Rng replay(cfg.seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < cfg.num_samples; ++s) {
      const Tensor xp = perturb(x, cfg, replay);
      double d = 0.0;
      for (std::size_t i = 0; i < 25; ++i) d += std::pow((double(xp[i]) - x[i]) * w[25 + i], 2);
      worst = std::max(worst, std::sqrt(d));
    }
    EXPECT_NEAR(got, worst / std::sqrt(base), 1e-6);
  }
}

TEST(MaxSensitivity, PerturbationStaysInBallAndRange) {
  Rng rng(12);
  const Tensor x = random_tensor<float>({1, 6, 6}, rng, 0.0, 1.0);
  SensitivityConfig cfg;
  cfg.radius = 0.1;
  for (int s = 0; s < 50; ++s) {
    cfg.perturbation = SensitivityConfig::Perturbation::UniformLinf;
    const Tensor a = perturb(x, cfg, rng);
    cfg.perturbation = SensitivityConfig::Perturbation::UniformL2Ball;
    const Tensor b = perturb(x, cfg, rng);
    double l2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::fabs(a[i] - x[i]), 0.1 + 1e-6);
      EXPECT_GE(a[i], 0.0f);
      EXPECT_LE(a[i], 1.0f);
      EXPECT_GE(b[i], 0.0f);
      EXPECT_LE(b[i], 1.0f);
      l2 += std::pow(double(b[i]) - x[i], 2);
    }
    EXPECT_LE(std::sqrt(l2), 0.1 + 1e-6);
  }
}

TEST(MaxSensitivity, TinyRadiusGivesZero) {
  const Network net = tiny_classifier(1);
  const auto recs = random_records(1, 16, 2);
  SensitivityConfig cfg;
  cfg.radius = 1e-12;
  const Explainer ex{Method::Saliency, NoParams{}, {}};
  EXPECT_EQ(max_sensitivity(ex, net, recs[0].image, 0, cfg), 0.0);
}

TEST(MaxSensitivity, ConstantNetworkAbsoluteNormIsZero) {
  Network net = tiny_classifier(3);
  zero_head(net);
  const auto recs = random_records(1, 16, 4);
  SensitivityConfig cfg;
  cfg.norm = SensitivityConfig::Norm::FrobeniusAbsolute;
  for (Method m : {Method::Saliency, Method::InputXGradient, Method::GradCam}) {
    const Explainer ex{m, default_params(m), {}};
    EXPECT_EQ(max_sensitivity(ex, net, recs[0].image, 1, cfg), 0.0) << method_name(m);
  }
}

TEST(MaxSensitivity, ZeroBaseWithChangeIsDegenerate) {
  const Network net = tiny_classifier(5);
  const auto recs = random_records(1, 16, 6);
  const Tensor& x0 = recs[0].image;
  // zero at x0, ones elsewhere
  auto explainer = [&](const Network&, const Tensor& x, std::size_t) {
    return map_of(x == x0 ? Tensor(x.shape()) : Tensor(x.shape(), 1.0f));
  };
  SensitivityConfig cfg;
  EXPECT_THROW(max_sensitivity(explainer, net, x0, 0, cfg), DegenerateExplanationError);
  cfg.norm = SensitivityConfig::Norm::FrobeniusAbsolute;
  EXPECT_DOUBLE_EQ(max_sensitivity(explainer, net, x0, 0, cfg), 16.0);
  auto zero = [](const Network&, const Tensor& x, std::size_t) { return map_of(Tensor(x.shape())); };
  cfg.norm = SensitivityConfig::Norm::FrobeniusRelative;
  EXPECT_EQ(max_sensitivity(zero, net, x0, 0, cfg), 0.0);
}

TEST(MaxSensitivity, MoreSamplesNeverLowerTheEstimate) {
  const Network net = tiny_classifier(7);
  const auto recs = random_records(10, 16, 8);
  const Explainer ex{Method::Saliency, NoParams{}, {}};
  for (const auto& r : recs) {
    SensitivityConfig small;
    small.seed = 5;
    small.num_samples = 3;
    SensitivityConfig big = small;
    big.num_samples = 9;
    const auto a = max_sensitivity_detail(ex, net, r.image, 2, small);
    const auto b = max_sensitivity_detail(ex, net, r.image, 2, big);
    ASSERT_EQ(b.distances.size(), 9u);
    EXPECT_TRUE(std::equal(a.distances.begin(), a.distances.end(), b.distances.begin()));
    EXPECT_LE(a.score, b.score);
  }
}

TEST(MaxSensitivity, PrecomputedBaseMatches) {
  const Network net = tiny_classifier(9);
  const auto recs = random_records(1, 16, 10);
  const Explainer ex{Method::GuidedBackprop, NoParams{}, {}};
  SensitivityConfig cfg;
  const AttributionMap base = ex(net, recs[0].image, 1);
  EXPECT_EQ(max_sensitivity_detail(ex, net, recs[0].image, 1, cfg).score,
            max_sensitivity_detail(ex, net, recs[0].image, 1, cfg, &base).score);
}

TEST(MaxSensitivity, RejectsBadConfig) {
  SensitivityConfig cfg;
  cfg.radius = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.radius = 0.1;
  cfg.num_samples = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Entropy, GoldenSizes) {
  // Raw-deflate reference sizes (level 9) from an independent zlib run.
  Tensor checker({1, 64, 64});
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) checker[y * 64 + x] = static_cast<float>((x + y) % 2);
  }
  EXPECT_EQ(xai_entropy(map_of(checker)), 38u);
  EXPECT_EQ(xai_entropy(map_of(Tensor({1, 64, 64}, 0.25f))), 20u);
}

TEST(Entropy, NoiseCostsMoreThanStructure) {
  Rng rng(13);
  const std::size_t random_size = xai_entropy(map_of(random_tensor<float>({1, 64, 64}, rng)));
  Tensor blob({1, 64, 64});
  for (std::size_t y = 20; y < 40; ++y) {
    for (std::size_t x = 20; x < 40; ++x) blob[y * 64 + x] = 1.0f;
  }
  const std::size_t blob_size = xai_entropy(map_of(blob));
  EXPECT_LT(blob_size, random_size);
  EXPECT_LT(xai_entropy(map_of(Tensor({1, 64, 64}))), blob_size);
  EXPECT_GT(random_size, 3000u);
}

TEST(Entropy, Deterministic) {
  Rng rng(14);
  const AttributionMap m = map_of(random_tensor<float>({1, 32, 32}, rng));
  EXPECT_EQ(xai_entropy(m), xai_entropy(m));
  AttributionMap bad = m;
  bad.scores[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(xai_entropy(bad), ConfigError);
}

TEST(Aggregates, MedianAndMean) {
  EXPECT_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_EQ(median_of({4, 1, 3, 2}), 2.5);
  EXPECT_TRUE(std::isnan(median_of({})));
  EXPECT_EQ(mean_of({1, 2, 6}), 3.0);
}

TEST(Aggregates, FlaggedRowsExcludedFromSensitivity) {
  std::vector<MetricRow> rows;
  rows.push_back({"a", 0, Method::Saliency, 1.0, 100, ""});
  rows.push_back({"b", 0, Method::Saliency, std::nan(""), 300, "degenerate_explanation"});
  rows.push_back({"c", 0, Method::Saliency, 3.0, 200, ""});
  rows.push_back({"a", 0, Method::Occlusion, 0.5, 50, ""});
  const auto agg = aggregate_rows(rows);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].method, Method::Saliency);
  EXPECT_EQ(agg[0].rows, 3u);
  EXPECT_EQ(agg[0].flagged, 1u);
  EXPECT_EQ(agg[0].median_sensitivity, 2.0);
  EXPECT_EQ(agg[0].median_entropy_bytes, 200.0);
  EXPECT_EQ(agg[1].method, Method::Occlusion);
}

TEST(Suite, OneImageAllMethods) {
  const Network net = tiny_classifier(15);
  const auto recs = random_records(1, 16, 16);
  SuiteConfig cfg;
  cfg.sensitivity.num_samples = 3;
  const auto methods = all_explainers();
  const MetricReport rep = evaluate_suite(net, recs, methods, cfg);
  ASSERT_EQ(rep.rows.size(), 8u);
  ASSERT_EQ(rep.aggregates.size(), 8u);
  const std::size_t predicted = predict(net, recs[0].image).class_index;
  for (std::size_t i = 0; i < 8; ++i) {
    const MetricRow& r = rep.rows[i];
    EXPECT_EQ(r.class_index, predicted);
    EXPECT_EQ(r.entropy_bytes, xai_entropy(methods[i](net, recs[0].image, predicted)));
    SensitivityConfig sc = cfg.sensitivity;
    sc.seed = pair_seed(cfg.sensitivity.seed, r.image_id, r.method);
    if (!r.flagged()) {
      EXPECT_EQ(r.max_sensitivity, max_sensitivity(methods[i], net, recs[0].image, predicted, sc));
    }
    const MethodAggregate& a = rep.aggregates[i];
    EXPECT_EQ(a.rows, 1u);
    EXPECT_EQ(a.median_entropy_bytes, static_cast<double>(r.entropy_bytes));
  }
}

TEST(Suite, RepeatRunsAreIdentical) {
  const Network net = tiny_classifier(17);
  const auto recs = random_records(3, 16, 18);
  SuiteConfig cfg;
  cfg.sensitivity.num_samples = 2;
  const auto methods = all_explainers();
  const auto a = evaluate_suite(net, recs, methods, cfg);
  cfg.jobs = 3;
  const auto b = evaluate_suite(net, recs, methods, cfg);
  EXPECT_EQ(report_to_csv(a), report_to_csv(b));
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
  EXPECT_EQ(a.rows.size(), 24u);
  for (std::size_t i = 1; i < a.rows.size(); ++i) {
    EXPECT_LE(a.rows[i - 1].image_id, a.rows[i].image_id);
  }
}

TEST(Suite, CsvAndJsonLayout) {
  const Network net = tiny_classifier(19);
  const auto recs = random_records(2, 16, 20);
  SuiteConfig cfg;
  cfg.sensitivity.num_samples = 1;
  const std::vector<Explainer> methods{{Method::Saliency, NoParams{}, {}},
                                       {Method::GradCam, default_params(Method::GradCam), {}}};
  const auto rep = evaluate_suite(net, recs, methods, cfg);
  const std::string csv = report_to_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,class,method,max_sensitivity,entropy_bytes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = report_to_json(rep);
  EXPECT_EQ(j["rows"].size(), 4u);
  EXPECT_EQ(j["aggregates"].size(), 2u);
  EXPECT_EQ(j["config"]["max_sensitivity"]["num_samples"], 1);
  EXPECT_EQ(j["config"]["methods"]["grad_cam"]["layer"], "last_conv");
  const std::string table = format_aggregate_table(rep);
  EXPECT_NE(table.find("Grad-CAM"), std::string::npos);
}

TEST(Suite, VanishingGradientsScoreZero) {
  Network net = tiny_classifier(21);
  zero_head(net);
  const auto recs = random_records(1, 16, 22);
  SuiteConfig cfg;
  cfg.sensitivity.num_samples = 2;
  // With a zero head every gradient vanishes: zero base, zero perturbed, no flag.
  const auto rep = evaluate_suite(net, recs, {{Method::Saliency, NoParams{}, {}}}, cfg);
  EXPECT_FALSE(rep.rows[0].flagged());
  EXPECT_EQ(rep.rows[0].max_sensitivity, 0.0);
}

TEST(Suite, RejectsEmptyInputs) {
  const Network net = tiny_classifier(23);
  const auto recs = random_records(1, 16, 24);
  EXPECT_THROW(evaluate_suite(net, recs, {}, SuiteConfig{}), ConfigError);
  EXPECT_THROW(evaluate_suite(net, {}, all_explainers(), SuiteConfig{}), ConfigError);
}
