#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "guard/pipeline.hpp"

namespace guard {

struct LatencyRow {
  double mean_seconds = 0.0;
  double stdev_seconds = 0.0;  // sample stdev over per-prompt times
};

struct LatencyReport {
  std::vector<LatencyRow> iterations;

  double overall_mean_seconds() const;
  double percentile_seconds(double p) const;  // over all per-prompt samples

  std::string to_csv() const;
  void save_csv(const std::string& path) const;

  // Kept so percentiles can be recomputed without rerunning.
  std::vector<double> samples;
};

// Classifies every prompt `iterations` times, one untimed warmup pass first.
LatencyReport latency_bench(const GuardrailPipeline& pipeline,
                            const std::vector<std::string>& prompts, std::size_t iterations);

}  // namespace guard
