#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "guard/common.hpp"
#include "guard/losses.hpp"

using namespace guard;

namespace {

using Mat = LossMatrix<double>;

// --- Brute-force references, written with plain loops so they share no code
// --- with the implementation under test.

double bf_dist(const Mat& e, Eigen::Index i, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index c = 0; c < e.cols(); ++c) {
    const double d = e(i, c) - e(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

double bf_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

struct Ref {
  double value = 0;
  bool valid = false;
  std::size_t terms = 0;
};

Ref bf_contrastive(const Mat& e, const std::vector<int>& y, double m) {
  Ref ref;
  const auto b = e.rows();
  if (b < 2) return ref;
  double sum = 0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = i + 1; j < b; ++j) {
      const double d = bf_dist(e, i, j);
      if (y[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(j)]) {
        sum += d * d;
      } else {
        const double gap = m - d;
        if (gap > 0) sum += gap * gap;
      }
      ++n;
    }
  }
  return {sum / static_cast<double>(n), true, n};
}

template <typename Visit>
std::size_t bf_for_each_triplet(const Mat& e, const std::vector<int>& y, Visit&& visit) {
  const auto b = e.rows();
  std::size_t n = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == a || y[static_cast<std::size_t>(p)] != y[static_cast<std::size_t>(a)]) continue;
      for (Eigen::Index q = 0; q < b; ++q) {
        if (q == a || y[static_cast<std::size_t>(q)] == y[static_cast<std::size_t>(a)]) continue;
        visit(a, p, q);
        ++n;
      }
    }
  }
  return n;
}

Ref bf_batch_all(const Mat& e, const std::vector<int>& y, double m) {
  double sum = 0;
  const std::size_t n = bf_for_each_triplet(e, y, [&](auto a, auto p, auto q) {
    const double slack = bf_dist(e, a, p) - bf_dist(e, a, q) + m;
    if (slack > 0) sum += slack;
  });
  if (n == 0) return {};
  return {sum / static_cast<double>(n), true, n};
}

Ref bf_batch_hard(const Mat& e, const std::vector<int>& y, double m) {
  const auto b = e.rows();
  double sum = 0;
  std::size_t anchors = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    double worst_pos = -1, worst_neg = -1;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == a) continue;
      const double d = bf_dist(e, a, j);
      if (y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(a)]) {
        worst_pos = std::max(worst_pos, d);
      } else {
        worst_neg = worst_neg < 0 ? d : std::min(worst_neg, d);
      }
    }
    if (worst_pos < 0 || worst_neg < 0) continue;
    ++anchors;
    sum += std::max(0.0, worst_pos - worst_neg + m);
  }
  if (anchors == 0) return {};
  return {sum / static_cast<double>(anchors), true, anchors};
}

Ref bf_batch_hard_soft(const Mat& e, const std::vector<int>& y) {
  const auto b = e.rows();
  double sum = 0;
  std::size_t anchors = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    double worst_pos = -1, worst_neg = -1;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == a) continue;
      const double d = bf_dist(e, a, j);
      if (y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(a)]) {
        worst_pos = std::max(worst_pos, d);
      } else {
        worst_neg = worst_neg < 0 ? d : std::min(worst_neg, d);
      }
    }
    if (worst_pos < 0 || worst_neg < 0) continue;
    ++anchors;
    sum += bf_softplus(worst_pos - worst_neg);
  }
  if (anchors == 0) return {};
  return {sum / static_cast<double>(anchors), true, anchors};
}

Ref bf_global_max(const Mat& e, const std::vector<int>& y, double m) {
  bool found = false;
  double best = 0;
  bf_for_each_triplet(e, y, [&](auto a, auto p, auto q) {
    const double slack = bf_dist(e, a, p) - bf_dist(e, a, q) + m;
    if (!found || slack > best) best = slack, found = true;
  });
  if (!found) return {};
  return {std::max(0.0, best), true, 1};
}

Ref bf_all_soft(const Mat& e, const std::vector<int>& y) {
  double sum = 0;
  const std::size_t n = bf_for_each_triplet(e, y, [&](auto a, auto p, auto q) {
    sum += bf_softplus(bf_dist(e, a, p) - bf_dist(e, a, q));
  });
  if (n == 0) return {};
  return {sum / static_cast<double>(n), true, n};
}

Mat random_batch(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat e(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) e(i, c) = normal(rng);
  }
  return e;
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<int> labels(n);
  for (auto& label : labels) label = pick(rng);
  return labels;
}

void check_against(const LossResult<double>& got, const Ref& want, double tol = 1e-9) {
  REQUIRE(got.valid == want.valid);
  if (!want.valid) return;
  CHECK(std::abs(got.value - want.value) <= tol * (1.0 + std::abs(want.value)));
  CHECK(got.term_count == want.terms);
}

}  // namespace

TEST_CASE("loss name round trips") {
  for (const LossKind kind : {LossKind::kContrastive, LossKind::kTripletAll, LossKind::kTripletHard,
                              LossKind::kTripletSoft}) {
    CHECK(parse_loss_kind(loss_kind_name(kind)) == kind);
  }
  CHECK(parse_loss_kind("triplet_all") == LossKind::kTripletAll);
  CHECK(parse_loss_kind("Contrastive") == LossKind::kContrastive);
  CHECK_THROWS_AS(parse_loss_kind("hinge"), ConfigError);
  CHECK(parse_mining("paper_literal") == Mining::kPaperLiteral);
  CHECK(parse_mining(mining_name(Mining::kCanonical)) == Mining::kCanonical);
  CHECK_THROWS_AS(parse_mining("greedy"), ConfigError);
}

TEST_CASE("loss config validation") {
  LossConfig config;
  config.kind = LossKind::kContrastive;
  config.margin = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config.kind = LossKind::kTripletSoft;  // margin unused
  CHECK_NOTHROW(config.validate());
  config.kind = LossKind::kTripletHard;
  config.margin = 1.0;
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("pairwise distances are symmetric with zero diagonal") {
  std::mt19937_64 rng(11);
  const Mat e = random_batch(rng, 6, 4);
  const Mat dist = pairwise_distances(e);
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK(dist(i, i) == 0.0);
    for (Eigen::Index j = 0; j < 6; ++j) {
      CHECK(dist(i, j) == dist(j, i));
      CHECK(dist(i, j) == doctest::Approx(bf_dist(e, i, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("contrastive closed forms") {
  // One dissimilar pair at distance 0.5 under margin 1.
  CHECK(contrastive_loss<double>({0.5}, {0}, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
  // One similar pair contributes its squared distance.
  CHECK(contrastive_loss<double>({0.7}, {1}, 1.0) == doctest::Approx(0.49).epsilon(1e-15));
  // Dissimilar pair beyond the margin contributes nothing.
  CHECK(contrastive_loss<double>({1.4}, {0}, 1.0) == 0.0);
  // Mean over mixed pairs.
  CHECK(contrastive_loss<double>({0.5, 0.7, 1.4}, {0, 1, 0}, 1.0) ==
        doctest::Approx((0.25 + 0.49 + 0.0) / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(contrastive_loss<double>({}, {}, 1.0), InputError);
  CHECK_THROWS_AS(contrastive_loss<double>({0.5}, {0, 1}, 1.0), InputError);
  CHECK_THROWS_AS(contrastive_loss<double>({0.5}, {2}, 1.0), InputError);
  CHECK_THROWS_AS(contrastive_loss<double>({0.5}, {0}, -1.0), ConfigError);
}

TEST_CASE("coincident points give the margin under hard mining") {
  Mat e = Mat::Zero(4, 3);
  const std::vector<int> labels = {0, 0, 1, 1};

  const auto hard = batch_hard_triplet_loss(e, labels, 1.3);
  CHECK(hard.valid);
  CHECK(hard.value == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(hard.term_count == 4);
  CHECK(hard.grad.norm() == 0.0);  // zero subgradient at coincident points

  const auto soft = batch_hard_soft_margin_loss(e, labels);
  CHECK(soft.valid);
  CHECK(soft.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("hand-traced four point batch") {
  // 1-D points 0, 0.4, 1.0, 1.1 with classes {0,0,1,1}; margin 1. All eight
  // triplet slacks are 0.4, 0.3, 0.8, 0.7, 0.1, 0.5, 0.0, 0.4.
  Mat e(4, 1);
  e << 0.0, 0.4, 1.0, 1.1;
  const std::vector<int> labels = {0, 0, 1, 1};

  const auto all = batch_all_triplet_loss(e, labels, 1.0);
  CHECK(all.valid);
  CHECK(all.term_count == 8);
  CHECK(all.value == doctest::Approx(3.2 / 8.0).epsilon(1e-12));

  const auto hard = batch_hard_triplet_loss(e, labels, 1.0);
  CHECK(hard.term_count == 4);
  CHECK(hard.value == doctest::Approx((0.4 + 0.8 + 0.5 + 0.4) / 4.0).epsilon(1e-12));

  LossConfig literal;
  literal.kind = LossKind::kTripletHard;
  literal.mining = Mining::kPaperLiteral;
  const auto global = batch_loss(e, labels, literal);
  CHECK(global.term_count == 1);
  CHECK(global.value == doctest::Approx(0.8).epsilon(1e-12));

  literal.kind = LossKind::kTripletSoft;
  const auto soft_all = batch_loss(e, labels, literal);
  CHECK(soft_all.term_count == 8);
  double expected = 0;
  for (const double slack : {0.4, 0.3, 0.8, 0.7, 0.1, 0.5, 0.0, 0.4}) {
    expected += bf_softplus(slack - 1.0);
  }
  CHECK(soft_all.value == doctest::Approx(expected / 8.0).epsilon(1e-12));
}

TEST_CASE("random batches agree with brute force") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Eigen::Index> rows(2, 12), cols(1, 8);
  std::uniform_int_distribution<int> classes(1, 3);

  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index b = rows(rng), d = cols(rng);
    const Mat e = random_batch(rng, b, d);
    const auto labels = random_labels(rng, static_cast<std::size_t>(b), classes(rng));
    const double margin = 0.5 + 0.1 * (trial % 10);

    check_against(contrastive_batch_loss(e, labels, margin), bf_contrastive(e, labels, margin));
    check_against(batch_all_triplet_loss(e, labels, margin), bf_batch_all(e, labels, margin));
    check_against(batch_hard_triplet_loss(e, labels, margin), bf_batch_hard(e, labels, margin));
    check_against(batch_hard_soft_margin_loss(e, labels), bf_batch_hard_soft(e, labels));

    LossConfig literal;
    literal.margin = margin;
    literal.mining = Mining::kPaperLiteral;
    literal.kind = LossKind::kTripletHard;
    check_against(batch_loss(e, labels, literal), bf_global_max(e, labels, margin));
    literal.kind = LossKind::kTripletSoft;
    check_against(batch_loss(e, labels, literal), bf_all_soft(e, labels));
  }
}

TEST_CASE("gradients match central finite differences") {
  std::mt19937_64 rng(77);
  const double h = 1e-6;

  auto fd_check = [&](auto&& loss_fn, const Mat& e0, const std::vector<int>& labels) {
    const LossResult<double> at = loss_fn(e0, labels);
    if (!at.valid) return;
    REQUIRE(at.grad.rows() == e0.rows());
    REQUIRE(at.grad.cols() == e0.cols());
    Mat e = e0;
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      for (Eigen::Index c = 0; c < e.cols(); ++c) {
        const double keep = e(i, c);
        e(i, c) = keep + h;
        const double up = loss_fn(e, labels).value;
        e(i, c) = keep - h;
        const double dn = loss_fn(e, labels).value;
        e(i, c) = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(at.grad(i, c) == doctest::Approx(fd).epsilon(0).scale(1.0).epsilon(5e-6));
      }
    }
  };

  for (int trial = 0; trial < 8; ++trial) {
    const Mat e = random_batch(rng, 6, 3);
    const auto labels = random_labels(rng, 6, 2);
    fd_check([](const Mat& m, const std::vector<int>& y) {
      return contrastive_batch_loss(m, y, 0.9);
    }, e, labels);
    fd_check([](const Mat& m, const std::vector<int>& y) {
      return batch_all_triplet_loss(m, y, 0.9);
    }, e, labels);
    fd_check([](const Mat& m, const std::vector<int>& y) {
      return batch_hard_triplet_loss(m, y, 0.9);
    }, e, labels);
    fd_check([](const Mat& m, const std::vector<int>& y) {
      return batch_hard_soft_margin_loss(m, y);
    }, e, labels);
    fd_check([](const Mat& m, const std::vector<int>& y) {
      LossConfig c;
      c.kind = LossKind::kTripletSoft;
      c.mining = Mining::kPaperLiteral;
      return batch_loss(m, y, c);
    }, e, labels);
  }
}

TEST_CASE("scaling a well-separated batch down-weights triplet losses") {
  // Two separated clusters: every gap d_ap - d_an is negative, so growing the
  // scale can only shrink the batch-all loss.
  Mat e(4, 2);
  e << 0.0, 0.0, 0.4, 0.0, 1.2, 0.0, 1.6, 0.0;
  const std::vector<int> labels = {0, 0, 1, 1};

  const double at1 = batch_all_triplet_loss(e, labels, 1.0).value;
  const double at2 = batch_all_triplet_loss<double>(2.0 * e, labels, 1.0).value;
  const double at4 = batch_all_triplet_loss<double>(4.0 * e, labels, 1.0).value;
  CHECK(at1 > 0.0);
  CHECK(at2 < at1);
  CHECK(at4 <= at2);
  CHECK(at4 == 0.0);  // margin fully satisfied

  const double soft1 = batch_hard_soft_margin_loss(e, labels).value;
  const double soft2 = batch_hard_soft_margin_loss<double>(2.0 * e, labels).value;
  CHECK(soft2 < soft1);
}

TEST_CASE("degenerate batches are flagged invalid") {
  std::mt19937_64 rng(5);
  const Mat e = random_batch(rng, 4, 3);

  // Single-class batch: no negatives anywhere.
  const std::vector<int> same = {2, 2, 2, 2};
  CHECK_FALSE(batch_all_triplet_loss(e, same, 1.0).valid);
  CHECK_FALSE(batch_hard_triplet_loss(e, same, 1.0).valid);
  CHECK_FALSE(batch_hard_soft_margin_loss(e, same).valid);
  // Contrastive still has same-label pairs.
  CHECK(contrastive_batch_loss(e, same, 1.0).valid);

  // All-distinct labels: no positives anywhere.
  const std::vector<int> distinct = {0, 1, 2, 3};
  CHECK_FALSE(batch_all_triplet_loss(e, distinct, 1.0).valid);
  CHECK_FALSE(batch_hard_triplet_loss(e, distinct, 1.0).valid);

  const Mat one = random_batch(rng, 1, 3);
  CHECK_FALSE(contrastive_batch_loss(one, {0}, 1.0).valid);

  CHECK_THROWS_AS(contrastive_batch_loss(e, {0, 1}, 1.0), InputError);
  CHECK_THROWS_AS(batch_all_triplet_loss(e, {0, 1, 0, 1, 0}, 1.0), InputError);
}

TEST_CASE("paper-literal global max clamps negative best slack to zero") {
  Mat e(4, 1);
  e << 0.0, 0.05, 9.0, 9.05;
  const std::vector<int> labels = {0, 0, 1, 1};
  LossConfig config;
  config.kind = LossKind::kTripletHard;
  config.mining = Mining::kPaperLiteral;
  const auto result = batch_loss(e, labels, config);
  CHECK(result.valid);
  CHECK(result.value == 0.0);
  CHECK(result.grad.norm() == 0.0);
  CHECK(result.term_count == 1);
}

TEST_CASE("hard mining breaks ties toward the first index") {
  // Anchor 0: positives 1 and 2 both at distance 1, negatives 3 and 4 both at
  // distance 2. Gradient must touch rows 1 and 3, not 2 or 4.
  Mat e(5, 2);
  e << 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0;
  const std::vector<int> labels = {0, 0, 0, 1, 1};
  const auto result = batch_hard_triplet_loss(e, labels, 5.0);
  CHECK(result.valid);
  // Every anchor's contribution is deterministic; re-running must be stable.
  const auto again = batch_hard_triplet_loss(e, labels, 5.0);
  CHECK(result.value == again.value);
  CHECK(result.grad == again.grad);
}

TEST_CASE("float instantiation matches double to float precision") {
  std::mt19937_64 rng(9);
  const Mat e = random_batch(rng, 5, 4);
  const auto labels = random_labels(rng, 5, 2);
  LossMatrix<float> ef = e.cast<float>();
  LossConfig config;
  config.kind = LossKind::kTripletAll;
  const auto fd = batch_loss(e, labels, config);
  const auto ff = batch_loss(ef, labels, config);
  REQUIRE(fd.valid == ff.valid);
  if (fd.valid) CHECK(static_cast<double>(ff.value) == doctest::Approx(fd.value).epsilon(1e-4));
}
