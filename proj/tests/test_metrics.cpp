#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "guard/ablation.hpp"
#include "guard/common.hpp"
#include "guard/latency.hpp"
#include "guard/metrics.hpp"
#include "guard/synthetic.hpp"
#include "guard/vocab.hpp"

using namespace guard;

namespace {

// Independent metric formulas, computed with explicit counters.
struct RefCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

RefCounts count_confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
  RefCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == 1 && labels[i] == 1) ++c.tp;
    if (preds[i] == 1 && labels[i] == 0) ++c.fp;
    if (preds[i] == 0 && labels[i] == 0) ++c.tn;
    if (preds[i] == 0 && labels[i] == 1) ++c.fn;
  }
  return c;
}

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// From-scratch AUPRC: sweep every distinct score as a >= threshold.
double bf_auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  double positives = 0;
  for (const int l : labels) positives += l;
  double area = 0.0, prev_recall = 0.0;
  for (const double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1.0;
    }
    const double precision = safe_div(tp, tp + fp);
    const double recall = tp / positives;
    area += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return area;
}

std::string temp_path(const char* stem) {
  return std::string("/tmp/guard_met_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("binary metrics closed forms") {
  // One true positive, one false positive.
  const auto m = binary_metrics({1, 1}, {1, 0});
  CHECK(m.tp == 1);
  CHECK(m.fp == 1);
  CHECK(m.tn == 0);
  CHECK(m.fn == 0);
  CHECK(m.precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.recall == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.accuracy == doctest::Approx(0.5).epsilon(1e-15));

  // Unsafe recall 1.0, safe recall 0.5 -> balanced accuracy 0.75.
  const auto u = binary_metrics({1, 1, 1, 0}, {1, 1, 0, 0});
  CHECK(u.recall == doctest::Approx(1.0));
  CHECK(u.uap == doctest::Approx(0.75).epsilon(1e-15));

  // Zero-division convention: no predicted or actual positives -> zeros.
  const auto z = binary_metrics({0, 0}, {0, 0});
  CHECK(z.precision == 0.0);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(z.accuracy == 1.0);

  CHECK_THROWS_AS(binary_metrics({}, {}), InputError);
  CHECK_THROWS_AS(binary_metrics({1}, {1, 0}), InputError);
  CHECK_THROWS_AS(binary_metrics({2}, {1}), InputError);
  CHECK_THROWS_AS(binary_metrics({1}, {-1}), InputError);
}

TEST_CASE("binary metrics agree with direct formulas on every small input") {
  // Exhaustive over all prediction/label assignments up to length 8.
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::size_t pbits = 0; pbits < (1u << n); ++pbits) {
      for (std::size_t lbits = 0; lbits < (1u << n); ++lbits) {
        std::vector<int> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
          preds[i] = (pbits >> i) & 1;
          labels[i] = (lbits >> i) & 1;
        }
        const auto m = binary_metrics(preds, labels);
        const RefCounts c = count_confusion(preds, labels);
        REQUIRE(m.tp == c.tp);
        REQUIRE(m.fp == c.fp);
        REQUIRE(m.tn == c.tn);
        REQUIRE(m.fn == c.fn);
        const double precision = safe_div(c.tp, c.tp + c.fp);
        const double recall = safe_div(c.tp, c.tp + c.fn);
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        const double uap = (recall + safe_div(c.tn, c.tn + c.fp)) / 2.0;
        REQUIRE(m.accuracy == safe_div(c.tp + c.tn, n));
        REQUIRE(m.precision == precision);
        REQUIRE(m.recall == recall);
        REQUIRE(m.f1 == doctest::Approx(f1).epsilon(1e-15));
        REQUIRE(m.uap == doctest::Approx(uap).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("pr curve closed forms") {
  SUBCASE("perfect ranking reaches auprc 1") {
    const auto curve = pr_curve({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(curve.auprc == doctest::Approx(1.0).epsilon(1e-15));
    REQUIRE(curve.points.size() == 4);
    CHECK(curve.points.front().threshold == 0.9);
    CHECK(curve.points.front().precision == 1.0);
    CHECK(curve.points.front().recall == 0.5);
    CHECK(curve.points.back().recall == 1.0);
  }
  SUBCASE("all-equal scores collapse to prevalence") {
    const auto curve = pr_curve({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
    REQUIRE(curve.points.size() == 1);
    CHECK(curve.points[0].precision == doctest::Approx(0.5));
    CHECK(curve.points[0].recall == 1.0);
    CHECK(curve.auprc == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("worst ranking still ends at recall 1") {
    const auto curve = pr_curve({0.1, 0.9}, {1, 0});
    CHECK(curve.points.back().recall == 1.0);
    CHECK(curve.auprc == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(pr_curve({0.5, 0.5}, {0, 0}), InputError);  // no positives
    CHECK_THROWS_AS(pr_curve({0.5}, {1, 0}), InputError);
    CHECK_THROWS_AS(pr_curve({0.5}, {3}), InputError);
  }
}

TEST_CASE("pr curve matches the threshold-sweep oracle") {
  // Fixed ten-point case first.
  const std::vector<double> scores = {0.9, 0.8, 0.8, 0.7, 0.55, 0.55, 0.4, 0.3, 0.2, 0.1};
  const std::vector<int> labels = {1, 1, 0, 1, 0, 1, 0, 1, 0, 0};
  const auto curve = pr_curve(scores, labels);
  CHECK(std::abs(curve.auprc - bf_auprc(scores, labels)) < 1e-12);

  // Randomized sweeps with heavy ties from a quantized score set.
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> n_of(2, 40), level(0, 7), coin(0, 1);
  for (int trial = 0; trial < 80; ++trial) {
    const int n = n_of(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    bool has_positive = false;
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = 0.125 * level(rng);
      y[static_cast<std::size_t>(i)] = coin(rng);
      has_positive = has_positive || y[static_cast<std::size_t>(i)] == 1;
    }
    if (!has_positive) y[0] = 1;

    const auto got = pr_curve(s, y);
    CHECK(std::abs(got.auprc - bf_auprc(s, y)) < 1e-12);

    // Structural invariants: strictly descending thresholds, non-decreasing
    // recall, final recall 1.
    for (std::size_t i = 1; i < got.points.size(); ++i) {
      CHECK(got.points[i].threshold < got.points[i - 1].threshold);
      CHECK(got.points[i].recall >= got.points[i - 1].recall);
    }
    CHECK(got.points.back().recall == 1.0);

    // Score-monotone transforms cannot change the curve.
    std::vector<double> cubed(s.size()), shifted(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      cubed[i] = s[i] * s[i] * s[i];
      shifted[i] = 3.0 * s[i] + 11.0;
    }
    CHECK(std::abs(pr_curve(cubed, y).auprc - got.auprc) < 1e-12);
    CHECK(std::abs(pr_curve(shifted, y).auprc - got.auprc) < 1e-12);
    const auto shifted_curve = pr_curve(shifted, y);
    REQUIRE(shifted_curve.points.size() == got.points.size());
    for (std::size_t i = 0; i < got.points.size(); ++i) {
      CHECK(shifted_curve.points[i].recall == got.points[i].recall);
      CHECK(shifted_curve.points[i].precision == got.points[i].precision);
    }
  }
}

TEST_CASE("pr curve csv has the pinned layout") {
  const auto curve = pr_curve({0.9, 0.1}, {1, 0});
  const std::string path = temp_path("pr.csv");
  curve.save_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "threshold,precision,recall");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == curve.points.size());
  std::remove(path.c_str());
}

TEST_CASE("evaluate_predictions rolls up per-category breakdowns") {
  const std::vector<int> preds = {1, 0, 1, 0, 1};
  const std::vector<int> labels = {1, 0, 0, 1, 1};
  const std::vector<double> scores = {0.9, 0.2, 0.8, 0.3, 0.7};
  const std::vector<std::string> cats = {"violence", "safe", "safe", "violence", "sexual"};

  const auto report = evaluate_predictions(preds, scores, labels, cats);
  CHECK(report.binary.tp == 2);
  CHECK(report.binary.fp == 1);
  CHECK(report.binary.fn == 1);
  CHECK(report.binary.tn == 1);
  CHECK(report.auprc == doctest::Approx(pr_curve(scores, labels).auprc));
  REQUIRE(report.per_category.size() == 3);
  CHECK(report.per_category.at("violence").count == 2);
  CHECK(report.per_category.at("violence").correct == 1);
  CHECK(report.per_category.at("safe").count == 2);
  CHECK(report.per_category.at("safe").correct == 1);
  CHECK(report.per_category.at("sexual").correct == 1);

  const auto j = report.to_json();
  CHECK(j.at("auprc") == report.auprc);
  CHECK(j.at("per_category").at("violence").at("count") == 2);
  CHECK(j.at("confusion").at("tp") == 2);

  CHECK_THROWS_AS(evaluate_predictions({1}, {0.5, 0.6}, {1}, {"safe"}), InputError);
}

TEST_CASE("latency report math is recomputable from its samples") {
  LatencyReport report;
  report.samples = {0.004, 0.002, 0.003, 0.001, 0.005, 0.010};
  report.iterations = {{0.003, 0.001}, {0.0053, 0.0045}};  // placeholder rows

  CHECK(report.overall_mean_seconds() == doctest::Approx(0.025 / 6.0).epsilon(1e-15));
  CHECK(report.percentile_seconds(0.0) == 0.001);
  CHECK(report.percentile_seconds(50.0) == 0.003);  // 3rd of 6 sorted
  CHECK(report.percentile_seconds(99.0) == 0.010);
  CHECK(report.percentile_seconds(100.0) == 0.010);
  CHECK_THROWS_AS(report.percentile_seconds(101.0), ConfigError);
  CHECK_THROWS_AS(LatencyReport{}.percentile_seconds(50.0), InputError);

  const std::string csv = report.to_csv();
  CHECK(csv.rfind("iteration,mean_seconds,stdev_seconds\n", 0) == 0);
  CHECK(csv == report.to_csv());  // byte-stable
  char expect[128];
  std::snprintf(expect, sizeof(expect), "1,%.9f,%.9f\n", 0.003, 0.001);
  CHECK(csv.find(expect) != std::string::npos);
}

TEST_CASE("ablation axes and axis application") {
  const auto axes = ablation_axes();
  CHECK(axes.size() == 8);
  for (const char* name : {"finetune_ratio", "loss_function", "embedding_dim", "pooling", "epochs",
                           "normalization", "topology", "classifier_kind"}) {
    CHECK(std::find(axes.begin(), axes.end(), name) != axes.end());
  }

  ExperimentConfig base;
  CHECK(apply_axis(base, "finetune_ratio", 0.4).train.finetune_ratio == 0.4);
  CHECK(apply_axis(base, "loss_function", "contrastive").loss.kind == LossKind::kContrastive);
  CHECK(apply_axis(base, "embedding_dim", 256).encoder.output_dim == 256);
  CHECK(apply_axis(base, "pooling", "max").encoder.pooling == Pooling::kMax);
  CHECK(apply_axis(base, "epochs", 5).train.epochs == 5);
  CHECK(apply_axis(base, "normalization", false).encoder.add_normalization == false);
  CHECK(apply_axis(base, "topology", "memc").topology == TopologyKind::kMemc);
  CHECK(apply_axis(base, "classifier_kind", "nn").head == HeadKind::kNn);

  CHECK_THROWS_AS(apply_axis(base, "dropout", 0.1), ConfigError);
  CHECK_THROWS_AS(apply_axis(base, "epochs", "many"), ConfigError);
  CHECK_THROWS_AS(apply_axis(base, "pooling", "average"), ConfigError);
}

TEST_CASE("ablation table renders deterministic csv") {
  AblationTable table;
  table.axis = "epochs";
  table.rows = {{"1", 0.5, 0.25, 0.625, 0.75}, {"2", 0.875, 0.8, 0.9, 0.95}};
  const std::string csv = table.to_csv();
  CHECK(csv ==
        "axis,value,accuracy,f1,uap,auprc\n"
        "epochs,1,0.500000,0.250000,0.625000,0.750000\n"
        "epochs,2,0.875000,0.800000,0.900000,0.950000\n");
  CHECK(csv == table.to_csv());
}

TEST_CASE("ablation spec validation") {
  AblationSpec spec;
  spec.axis = "epochs";
  spec.values = {nlohmann::json(1)};
  CHECK_NOTHROW(spec.validate());
  spec.axis = "nonsense";
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.axis = "epochs";
  spec.values.clear();
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.values = {nlohmann::json(1)};
  spec.seeds.clear();
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  const auto parsed = AblationSpec::from_json(
      {{"axis", "pooling"}, {"values", {"cls", "mean"}}, {"seeds", {1, 2}}});
  CHECK(parsed.axis == "pooling");
  CHECK(parsed.values.size() == 2);
  CHECK((parsed.seeds == std::vector<std::uint64_t>{1, 2}));
}

TEST_CASE("synthetic corpus is balanced, split-stable and pool-disjoint") {
  SyntheticSpec spec;
  spec.instances = 160;
  spec.vocabulary = 80;
  spec.noise_tokens = 30;
  spec.train_fraction = 0.75;  // exactly representable, so the cadence is exact
  spec.seed = 9;

  const auto instances = generate_synthetic_corpus(spec);
  REQUIRE(instances.size() == 160);

  const Taxonomy& taxonomy = Taxonomy::aegis();
  std::map<std::size_t, std::size_t> per_label, per_label_test;
  for (const auto& instance : instances) {
    per_label[instance.label] += 1;
    if (instance.split == Split::kTest) per_label_test[instance.label] += 1;
  }
  REQUIRE(per_label.size() == 4);
  for (const auto& [label, count] : per_label) {
    CHECK(count == 40);              // exact balance
    CHECK(per_label_test[label] == 10);  // exact 25% test split per class
    CHECK((taxonomy.is_safe(label) || taxonomy.is_unsafe_category(label)));
  }

  // Class pools are disjoint: category k only emits its own pool or noise.
  std::map<std::size_t, std::size_t> label_to_k;
  for (std::size_t k = 0; k < spec.categories.size(); ++k) {
    label_to_k[taxonomy.resolve(spec.categories[k]).value()] = k;
  }
  for (const auto& instance : instances) {
    const std::string own = "c" + std::to_string(label_to_k.at(instance.label)) + "w";
    for (const auto& piece : split_pieces(instance.text)) {
      const bool is_noise = piece.rfind("nz", 0) == 0;
      const bool is_own = piece.rfind(own, 0) == 0;
      CHECK((is_noise || is_own));
    }
  }

  // Deterministic in the seed.
  const auto again = generate_synthetic_corpus(spec);
  REQUIRE(again.size() == instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    CHECK(again[i].text == instances[i].text);
    CHECK(again[i].label == instances[i].label);
    CHECK((again[i].split == instances[i].split));
  }
  auto reseeded = spec;
  reseeded.seed = 10;
  CHECK(generate_synthetic_corpus(reseeded)[0].text != instances[0].text);
}

TEST_CASE("synthetic spec validation and json round trip") {
  SyntheticSpec spec;
  CHECK_NOTHROW(spec.validate());

  auto bad = spec;
  bad.categories = {"violence", "sexual"};  // no safe
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.categories = {"safe", "safe"};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.noise_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.vocabulary = 50;  // cannot fit pools
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.min_tokens = 9;
  bad.max_tokens = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.categories = {"safe", "not_a_category"};
  CHECK_THROWS_AS(generate_synthetic_corpus(bad), ConfigError);

  spec.instances = 123;
  spec.noise_fraction = 0.3;
  const auto restored = SyntheticSpec::from_json(spec.to_json());
  CHECK(restored.instances == 123);
  CHECK(restored.noise_fraction == 0.3);
  CHECK(restored.categories == spec.categories);
}

TEST_CASE("run_ablation produces identical csv bytes across reruns") {
  AblationSpec spec;
  spec.axis = "epochs";
  spec.values = {nlohmann::json(0), nlohmann::json(1)};
  spec.seeds = {21};
  spec.synthetic.instances = 160;
  spec.synthetic.vocabulary = 80;
  spec.synthetic.noise_tokens = 30;
  spec.synthetic.seed = 9;
  spec.base.topology = TopologyKind::kMcemcc;
  spec.base.head = HeadKind::kSvm;
  spec.base.encoder.layers = 1;
  spec.base.encoder.heads = 2;
  spec.base.encoder.hidden_dim = 16;
  spec.base.encoder.output_dim = 16;
  spec.base.loss.kind = LossKind::kContrastive;
  spec.base.train.epochs = 1;
  spec.base.train.batch_size = 8;
  spec.base.vocab_target = 80;
  spec.base.svm.iterations = 300;

  const auto first = run_ablation(spec);
  const auto second = run_ablation(spec);
  CHECK(first.axis == "epochs");
  REQUIRE(first.rows.size() == 2);
  CHECK(first.rows[0].value == "0");
  CHECK(first.rows[1].value == "1");
  CHECK(first.to_csv() == second.to_csv());

  const std::string path = temp_path("ablation.csv");
  first.save_csv(path);
  std::ifstream in(path, std::ios::binary);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(contents == first.to_csv());
  std::remove(path.c_str());
}
