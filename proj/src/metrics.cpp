#include "guard/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "guard/common.hpp"

namespace guard {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_binary(const std::vector<int>& values, const char* what) {
  for (int v : values) {
    if (v != 0 && v != 1) throw InputError(std::string(what) + " must be 0 or 1");
  }
}

}  // namespace

nlohmann::json BinaryMetrics::to_json() const {
  return {{"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"uap", uap},
          {"macro_precision", macro_precision},
          {"confusion", {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}}}};
}

BinaryMetrics binary_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw InputError("binary_metrics: empty input");
  if (predictions.size() != labels.size()) {
    throw InputError("binary_metrics: predictions/labels length mismatch");
  }
  check_binary(predictions, "predictions");
  check_binary(labels, "labels");

  BinaryMetrics m;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] == 1) {
      (predictions[i] == 1 ? m.tp : m.fn) += 1;
    } else {
      (predictions[i] == 1 ? m.fp : m.tn) += 1;
    }
  }
  m.accuracy = ratio(m.tp + m.tn, predictions.size());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = (m.precision + m.recall) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  const double recall_safe = ratio(m.tn, m.tn + m.fp);
  const double precision_safe = ratio(m.tn, m.tn + m.fn);
  m.uap = (m.recall + recall_safe) / 2.0;
  m.macro_precision = (m.precision + precision_safe) / 2.0;
  return m;
}

void PRCurve::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("pr curve: cannot open " + path + " for writing");
  out << "threshold,precision,recall\n";
  out.precision(17);
  for (const auto& p : points) {
    out << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
  }
  if (!out) throw InputError("pr curve: write failed for " + path);
}

PRCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InputError("pr_curve: scores/labels length mismatch");
  check_binary(labels, "labels");
  const std::size_t positives =
      static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw InputError("pr_curve: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  PRCurve curve;
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    // Consume the whole tie group so each point reflects predict >= threshold.
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    PRPoint point;
    point.threshold = threshold;
    point.precision = ratio(tp, tp + fp);
    point.recall = ratio(tp, positives);
    curve.auprc += point.precision * (point.recall - prev_recall);
    prev_recall = point.recall;
    curve.points.push_back(point);
  }
  return curve;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = binary.to_json();
  j["auprc"] = auprc;
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, breakdown] : per_category) {
    cats[name] = {{"count", breakdown.count},
                  {"correct", breakdown.correct},
                  {"recall", ratio(breakdown.correct, breakdown.count)}};
  }
  j["per_category"] = std::move(cats);
  return j;
}

EvalReport evaluate_predictions(const std::vector<int>& predictions,
                                const std::vector<double>& unsafe_scores,
                                const std::vector<int>& labels,
                                const std::vector<std::string>& categories) {
  if (predictions.size() != unsafe_scores.size() || predictions.size() != categories.size()) {
    throw InputError("evaluate_predictions: length mismatch");
  }
  EvalReport report;
  report.binary = binary_metrics(predictions, labels);
  report.auprc = pr_curve(unsafe_scores, labels).auprc;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    auto& breakdown = report.per_category[categories[i]];
    breakdown.count += 1;
    if (predictions[i] == labels[i]) breakdown.correct += 1;
  }
  return report;
}

}  // namespace guard
