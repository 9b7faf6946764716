#pragma once

#include <cstdint>
#include <vector>

#include "gdmsr/common.hpp"
#include "gdmsr/dataset.hpp"
#include "gdmsr/gcn.hpp"

namespace gdmsr::eval {

enum class SplitSel { kValid, kTest };

struct UserRecord {
  int32_t user = -1;
  int32_t n_positives = 0;
  int32_t n_candidates = 0;
  double recall1 = 0.0;
  double recall3 = 0.0;
  double ndcg3 = 0.0;
  bool short_pool = false;  // fewer non-interacted items than requested negatives
};

struct RankingReport {
  double recall1 = 0.0;
  double recall3 = 0.0;
  double ndcg3 = 0.0;
  int64_t n_users = 0;
  int n_negatives = 0;
  uint64_t negative_seed = 0;
  std::vector<UserRecord> users;
};

// Real-plus-N protocol: for each user with positives in the selected split,
// rank those positives among `n_negatives` sampled items the user never
// interacted with (any split). Ranking ties break by ascending item index.
RankingReport evaluate_ranking(const gcn::DenseStack& stack, const data::Dataset& d,
                               SplitSel split, int n_negatives, uint64_t seed);

}  // namespace gdmsr::eval
