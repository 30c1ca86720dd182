#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/generator.hpp"

namespace turbo {

struct LatencyReport {
  int size = 0;
  std::vector<double> timings_ms;
  double median_ms = 0, p95_ms = 0;
  nlohmann::json to_json() const;
};

/// Median and nearest-rank 95th percentile of the samples.
LatencyReport summarize_latency(int size, std::vector<double> timings_ms);

/// Wall clock of single-image `translate` calls at size x size, after one warm-up.
LatencyReport bench_translate(const GeneratorState& state, int size, int reps, double gamma = 1.0);

}  // namespace turbo
