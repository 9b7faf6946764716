#include "gdmsr/ranking.hpp"

#include <algorithm>
#include <cmath>

#include "gdmsr/rng.hpp"

namespace gdmsr::eval {

RankingReport evaluate_ranking(const gcn::DenseStack& stack, const data::Dataset& d,
                               SplitSel split, int n_negatives, uint64_t seed) {
  check(n_negatives >= 1, "evaluate_ranking: need at least one negative");
  const auto& positives_split = split == SplitSel::kTest ? d.test : d.valid;
  check(!positives_split.empty(), "evaluate_ranking: selected split is empty");

  // Per-user positive lists and the full interacted set across all splits.
  std::vector<std::vector<int32_t>> pos_of(static_cast<size_t>(d.n_users));
  for (const auto& p : positives_split) pos_of[static_cast<size_t>(p.user)].push_back(p.item);
  std::vector<std::vector<int32_t>> seen_of(static_cast<size_t>(d.n_users));
  for (const auto* s : {&d.train, &d.valid, &d.test})
    for (const auto& p : *s) seen_of[static_cast<size_t>(p.user)].push_back(p.item);
  for (auto& v : seen_of) std::sort(v.begin(), v.end());

  RankingReport rep;
  rep.n_negatives = n_negatives;
  rep.negative_seed = seed;
  Rng rng(derive_seed(seed, 0xE7));

  const double inv_log2_2 = 1.0;                   // 1/log2(2)
  const double inv_log2_3 = 1.0 / std::log2(3.0);  // rank 2
  const double inv_log2_4 = 0.5;                   // rank 3
  const double discounts[3] = {inv_log2_2, inv_log2_3, inv_log2_4};

  for (int32_t u = 0; u < d.n_users; ++u) {
    auto& pos = pos_of[static_cast<size_t>(u)];
    if (pos.empty()) continue;
    std::sort(pos.begin(), pos.end());
    const auto& seen = seen_of[static_cast<size_t>(u)];

    const int64_t pool = d.n_items - static_cast<int64_t>(seen.size());
    UserRecord rec;
    rec.user = u;
    rec.n_positives = static_cast<int32_t>(pos.size());

    std::vector<int32_t> candidates(pos.begin(), pos.end());
    if (pool <= n_negatives) {
      // Pool exhausted: take every non-interacted item; flag if short.
      rec.short_pool = pool < n_negatives;
      for (int32_t i = 0; i < d.n_items; ++i)
        if (!std::binary_search(seen.begin(), seen.end(), i)) candidates.push_back(i);
    } else {
      std::vector<int32_t> negs;
      negs.reserve(static_cast<size_t>(n_negatives));
      std::vector<int32_t> sorted_negs;  // for duplicate checks
      while (static_cast<int>(negs.size()) < n_negatives) {
        const int32_t cand = static_cast<int32_t>(rng.index(d.n_items));
        if (std::binary_search(seen.begin(), seen.end(), cand)) continue;
        const auto it = std::lower_bound(sorted_negs.begin(), sorted_negs.end(), cand);
        if (it != sorted_negs.end() && *it == cand) continue;
        sorted_negs.insert(it, cand);
        negs.push_back(cand);
      }
      candidates.insert(candidates.end(), negs.begin(), negs.end());
    }
    rec.n_candidates = static_cast<int32_t>(candidates.size());

    // Rank by score descending, ties by ascending item index.
    std::vector<std::pair<double, int32_t>> scored;
    scored.reserve(candidates.size());
    for (int32_t i : candidates)
      scored.emplace_back(-gcn::predict_score(stack, u, i), i);
    std::sort(scored.begin(), scored.end());

    double hits1 = 0.0, hits3 = 0.0, dcg = 0.0;
    const size_t topk = std::min<size_t>(3, scored.size());
    for (size_t r = 0; r < topk; ++r) {
      if (!std::binary_search(pos.begin(), pos.end(), scored[r].second)) continue;
      if (r == 0) hits1 += 1.0;
      hits3 += 1.0;
      dcg += discounts[r];
    }
    double idcg = 0.0;
    for (size_t r = 0; r < std::min<size_t>(3, pos.size()); ++r) idcg += discounts[r];

    rec.recall1 = hits1 / static_cast<double>(pos.size());
    rec.recall3 = hits3 / static_cast<double>(pos.size());
    rec.ndcg3 = idcg > 0.0 ? dcg / idcg : 0.0;
    rep.recall1 += rec.recall1;
    rep.recall3 += rec.recall3;
    rep.ndcg3 += rec.ndcg3;
    ++rep.n_users;
    rep.users.push_back(rec);
  }
  check(rep.n_users > 0, "evaluate_ranking: no user has positives in the selected split");
  rep.recall1 /= static_cast<double>(rep.n_users);
  rep.recall3 /= static_cast<double>(rep.n_users);
  rep.ndcg3 /= static_cast<double>(rep.n_users);
  return rep;
}

}  // namespace gdmsr::eval
