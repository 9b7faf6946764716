#pragma once

#include <cstdint>
#include <vector>

#include "gdmsr/dataset.hpp"

namespace gdmsr::bench {

struct BenchReport {
  double ratio = 0.0;
  int64_t active_edges = 0;
  int repetitions = 0;
  std::vector<double> times_s;  // one per repetition
  double median_s = 0.0;
  double checksum = 0.0;  // keeps the timed loop from being optimized away
};

// Times the social-side propagation (K hops of neighbor-mean over the user
// table) at each removal ratio. Edges are deactivated uniformly at random
// (seeded); the workload is `records` user-representation computations, i.e.
// ceil(records / n_users) full-table propagations per timed run.
std::vector<BenchReport> bench_inference(const data::SocialGraph& g, int dim, int hops,
                                         int64_t records, const std::vector<double>& ratios,
                                         int repetitions, uint64_t seed);

}  // namespace gdmsr::bench
