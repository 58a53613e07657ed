#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace guard {

// Unsafe is the positive class everywhere (prediction/label value 1).
struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // of the unsafe class
  double recall = 0.0;     // of the unsafe class
  double f1 = 0.0;
  double uap = 0.0;  // unweighted mean of per-class recall (balanced accuracy)
  double macro_precision = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  nlohmann::json to_json() const;
};

// Zero-division convention: any precision/recall with a zero denominator is 0.
BinaryMetrics binary_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // thresholds descending, recall non-decreasing
  double auprc = 0.0;

  void save_csv(const std::string& path) const;  // threshold,precision,recall
};

// Sweeps every distinct score as a >=-threshold, descending; AUPRC is the
// right-continuous step integral sum(precision * delta-recall).
PRCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);

struct CategoryBreakdown {
  std::size_t count = 0;
  std::size_t correct = 0;  // binary verdict matched the instance's truth
};

struct EvalReport {
  BinaryMetrics binary;
  double auprc = 0.0;
  std::map<std::string, CategoryBreakdown> per_category;

  nlohmann::json to_json() const;
};

// categories[i] is the instance's true category name, used only for the
// per-category breakdown.
EvalReport evaluate_predictions(const std::vector<int>& predictions,
                                const std::vector<double>& unsafe_scores,
                                const std::vector<int>& labels,
                                const std::vector<std::string>& categories);

}  // namespace guard
