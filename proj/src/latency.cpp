#include "turbo/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "turbo/errors.hpp"

namespace turbo {

nlohmann::json LatencyReport::to_json() const {
  return {{"size", size}, {"reps", timings_ms.size()}, {"timings_ms", timings_ms}, {"median_ms", median_ms},
          {"p95_ms", p95_ms}};
}

LatencyReport summarize_latency(int size, std::vector<double> timings_ms) {
  if (timings_ms.empty()) throw ValidationError("no timings to summarize");
  LatencyReport r{size, timings_ms, 0, 0};
  std::sort(timings_ms.begin(), timings_ms.end());
  const std::size_t n = timings_ms.size();
  r.median_ms = n % 2 ? timings_ms[n / 2] : 0.5 * (timings_ms[n / 2 - 1] + timings_ms[n / 2]);
  r.p95_ms = timings_ms[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
  return r;
}

LatencyReport bench_translate(const GeneratorState& state, int size, int reps, double gamma) {
  if (reps < 3) throw ValidationError("reps must be >= 3");
  if (size < 8 || size % 8 != 0) throw ShapeError("bench size must be a positive multiple of 8");
  Rng rng(12345);
  const TensorImage x(rng.uniform_tensor({3, size, size}, -1.0, 1.0));
  const LatentMap z = sample_noise(size, size, 1);
  const std::string& target = state.config.domains.back();
  translate(x, z, gamma, target, state);
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto start = std::chrono::steady_clock::now();
    translate(x, z, gamma, target, state);
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  return summarize_latency(size, std::move(t));
}

}  // namespace turbo
