// Times the OpenMP kernels against the serial reference on generator-sized
// layers and checks that both paths agree.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "turbo/kernels.hpp"
#include "turbo/rng.hpp"

namespace {

using turbo::kernels::ConvGeometry;

double median_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  turbo::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Case {
  std::string name;
  ConvGeometry g;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OpenMP vs serial reference kernel timings"};
  int reps = 7;
  std::string json_out;
  app.add_option("--reps", reps, "Timed repetitions per kernel")->check(CLI::PositiveNumber);
  app.add_option("--json", json_out, "Also write results as JSON");
  CLI11_PARSE(app, argc, argv);

  // Encoder input layer, a core block conv and the decoder's last upsampling stage at 64x64.
  const std::vector<Case> cases{
      {"enc.conv_in 3->8 @64", {4, 3, 64, 64, 8, 3, 1, 1}},
      {"enc.down1 8->8 s2 @64", {4, 8, 64, 64, 8, 3, 2, 1}},
      {"core 32->32 @8", {4, 32, 8, 8, 32, 3, 1, 1}},
      {"dec.up0 16->8 @64", {4, 16, 64, 64, 8, 3, 1, 1}},
      {"skip 1x1 8->8 @64", {4, 8, 64, 64, 8, 1, 1, 0}},
  };

  nlohmann::json results = nlohmann::json::array();
  std::printf("threads: %d\n", turbo::kernels::max_threads());
  std::printf("%-26s %-9s %10s %10s %8s %10s\n", "layer", "pass", "omp ms", "ref ms", "speedup", "max|diff|");
  for (const auto& c : cases) {
    const ConvGeometry& g = c.g;
    const std::size_t nx = static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w;
    const std::size_t ny = static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h() * g.out_w();
    const std::size_t nw = static_cast<std::size_t>(g.out_channels) * g.patch();
    const auto x = random_vector(nx, 1), w = random_vector(nw, 2), b = random_vector(g.out_channels, 3),
               dy = random_vector(ny, 4);
    std::vector<double> y1(ny), y2(ny), dx1(nx), dx2(nx), dw1(nw), dw2(nw), db1(g.out_channels), db2(g.out_channels);

    struct Pass {
      const char* name;
      std::function<void()> omp, ref;
      const std::vector<double>* a;
      const std::vector<double>* b;
    };
    const std::vector<Pass> passes{
        {"forward", [&] { turbo::kernels::conv2d_forward(g, x.data(), w.data(), b.data(), y1.data()); },
         [&] { turbo::kernels::reference::conv2d_forward(g, x.data(), w.data(), b.data(), y2.data()); }, &y1, &y2},
        {"grad_in", [&] { turbo::kernels::conv2d_backward_input(g, dy.data(), w.data(), dx1.data()); },
         [&] { turbo::kernels::reference::conv2d_backward_input(g, dy.data(), w.data(), dx2.data()); }, &dx1, &dx2},
        {"grad_w",
         [&] { turbo::kernels::conv2d_backward_weight(g, dy.data(), x.data(), dw1.data(), db1.data()); },
         [&] { turbo::kernels::reference::conv2d_backward_weight(g, dy.data(), x.data(), dw2.data(), db2.data()); },
         &dw1, &dw2},
    };
    for (const auto& p : passes) {
      const double omp = median_ms(p.omp, reps), ref = median_ms(p.ref, reps);
      const double diff = max_abs_diff(*p.a, *p.b);
      std::printf("%-26s %-9s %10.3f %10.3f %7.2fx %10.2e\n", c.name.c_str(), p.name, omp, ref, ref / omp, diff);
      results.push_back({{"layer", c.name}, {"pass", p.name}, {"omp_ms", omp}, {"reference_ms", ref},
                         {"max_abs_diff", diff}});
    }
  }

  {
    const int m = 256, n = 256, k = 288;
    const auto a = random_vector(static_cast<std::size_t>(m) * k, 5), bm = random_vector(static_cast<std::size_t>(k) * n, 6);
    std::vector<double> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
    const double omp = median_ms([&] { turbo::kernels::gemm(m, n, k, a.data(), false, bm.data(), false, c1.data()); }, reps);
    const double ref =
        median_ms([&] { turbo::kernels::reference::gemm(m, n, k, a.data(), false, bm.data(), false, c2.data()); }, reps);
    const double diff = max_abs_diff(c1, c2);
    std::printf("%-26s %-9s %10.3f %10.3f %7.2fx %10.2e\n", "gemm 256x288x256", "forward", omp, ref, ref / omp, diff);
    results.push_back({{"layer", "gemm 256x288x256"}, {"pass", "forward"}, {"omp_ms", omp}, {"reference_ms", ref},
                       {"max_abs_diff", diff}});
  }

  if (!json_out.empty()) {
    std::FILE* f = std::fopen(json_out.c_str(), "w");
    if (!f) return 1;
    std::fputs(results.dump(2).c_str(), f);
    std::fclose(f);
  }
  return 0;
}
