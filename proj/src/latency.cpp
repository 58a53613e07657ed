#include "guard/latency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "guard/common.hpp"

namespace guard {

double LatencyReport::overall_mean_seconds() const {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const double s : samples) sum += s;
  return sum / static_cast<double>(samples.size());
}

double LatencyReport::percentile_seconds(double p) const {
  if (samples.empty()) throw InputError("latency report has no samples");
  if (p < 0.0 || p > 100.0) throw ConfigError("percentile must be in [0, 100]");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  // Nearest-rank: smallest sample with at least p percent of mass at or below.
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[rank == 0 ? 0 : rank - 1];
}

std::string LatencyReport::to_csv() const {
  std::string out = "iteration,mean_seconds,stdev_seconds\n";
  char buf[128];
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f\n", i + 1, iterations[i].mean_seconds,
                  iterations[i].stdev_seconds);
    out += buf;
  }
  return out;
}

void LatencyReport::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << to_csv();
}

LatencyReport latency_bench(const GuardrailPipeline& pipeline,
                            const std::vector<std::string>& prompts, std::size_t iterations) {
  if (prompts.empty()) throw InputError("latency_bench: no prompts");
  if (iterations == 0) throw ConfigError("latency_bench: iterations must be >= 1");

  for (const auto& prompt : prompts) pipeline.classify(prompt);  // warmup, untimed

  LatencyReport report;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> times;
    times.reserve(prompts.size());
    for (const auto& prompt : prompts) {
      times.push_back(pipeline.classify(prompt).latency_seconds);
    }
    double mean = 0.0;
    for (const double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (const double t : times) var += (t - mean) * (t - mean);
    const double stdev =
        times.size() > 1 ? std::sqrt(var / static_cast<double>(times.size() - 1)) : 0.0;
    report.iterations.push_back({mean, stdev});
    report.samples.insert(report.samples.end(), times.begin(), times.end());
  }
  return report;
}

}  // namespace guard
