#include "gdmsr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gdmsr/rng.hpp"

namespace gdmsr::bench {

namespace {

// One K-hop social propagation of an n x d table, no tape.
double propagate(const Csr& adj, std::vector<double>& x, std::vector<double>& scratch, int64_t d,
                 int hops) {
  const int64_t n = adj.n_rows;
  for (int h = 0; h < hops; ++h) {
#pragma omp parallel for schedule(static)
    for (int64_t u = 0; u < n; ++u) {
      double* out = scratch.data() + u * d;
      const double* self = x.data() + u * d;
      std::copy_n(self, d, out);
      for (int32_t v : adj.row(u)) {
        const double* nb = x.data() + static_cast<int64_t>(v) * d;
        for (int64_t c = 0; c < d; ++c) out[c] += nb[c];
      }
      const double inv = 1.0 / static_cast<double>(1 + adj.degree(u));
      for (int64_t c = 0; c < d; ++c) out[c] *= inv;
    }
    std::swap(x, scratch);
  }
  double sink = 0.0;
  for (int64_t i = 0; i < std::min<int64_t>(64, n * d); ++i) sink += x[static_cast<size_t>(i)];
  return sink;
}

}  // namespace

std::vector<BenchReport> bench_inference(const data::SocialGraph& g, int dim, int hops,
                                         int64_t records, const std::vector<double>& ratios,
                                         int repetitions, uint64_t seed) {
  check(repetitions >= 3, "bench_inference: need at least 3 repetitions");
  check(dim >= 1 && hops >= 1, "bench_inference: dim and hops must be >= 1");
  const int64_t n = g.n_users();
  const int64_t passes = std::max<int64_t>(1, (records + n - 1) / std::max<int64_t>(n, 1));

  Rng init_rng(derive_seed(seed, 0xB0));
  std::vector<double> base(static_cast<size_t>(n * dim));
  for (double& v : base) v = init_rng.normal(0.0, 1.0);

  std::vector<BenchReport> reports;
  for (double ratio : ratios) {
    check(ratio >= 0.0 && ratio < 1.0, "bench_inference: ratio ", ratio, " outside [0,1)");
    data::SocialGraph cut = g;
    cut.set_all_active();
    const int64_t n_remove =
        static_cast<int64_t>(std::floor(ratio * static_cast<double>(g.n_edges())));
    if (n_remove > 0) {
      std::vector<int64_t> ids(static_cast<size_t>(g.n_edges()));
      for (int64_t e = 0; e < g.n_edges(); ++e) ids[static_cast<size_t>(e)] = e;
      Rng rng(derive_seed(seed, 0xB1));
      rng.shuffle(ids);
      for (int64_t r = 0; r < n_remove; ++r) cut.active[static_cast<size_t>(ids[static_cast<size_t>(r)])] = 0;
    }
    const Csr active = cut.active_csr();

    BenchReport rep;
    rep.ratio = ratio;
    rep.active_edges = active.n_edges();
    rep.repetitions = repetitions;

    std::vector<double> x(base), scratch(base.size());
    rep.checksum += propagate(active, x, scratch, dim, hops);  // warm-up
    for (int r = 0; r < repetitions; ++r) {
      x = base;
      const auto t0 = std::chrono::steady_clock::now();
      for (int64_t p = 0; p < passes; ++p) rep.checksum += propagate(active, x, scratch, dim, hops);
      const auto t1 = std::chrono::steady_clock::now();
      rep.times_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::vector<double> sorted = rep.times_s;
    std::sort(sorted.begin(), sorted.end());
    rep.median_s = sorted[sorted.size() / 2];
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace gdmsr::bench
