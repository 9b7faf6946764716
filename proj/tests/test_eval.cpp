#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gdmsr/ranking.hpp"
#include "gdmsr/rng.hpp"
#include "support/oracles.hpp"

using namespace gdmsr;
using namespace gdmsr::eval;
using data::Dataset;

namespace {

// One user, item 0 in train, item `pos` (plus optionally pos2) in test, and a
// stack whose item scores are handed in directly.
Dataset worked_ds(int64_t n_items, std::vector<int32_t> test_items) {
  Dataset d;
  d.n_users = 1;
  d.n_items = n_items;
  d.train = {{0, 0}};
  for (int32_t i : test_items) d.test.push_back({0, i});
  d.user_ids = {"u"};
  for (int64_t i = 0; i < n_items; ++i) d.item_ids.push_back("i" + std::to_string(i));
  d.rebuild_adjacency();
  return d;
}

gcn::DenseStack stack_with_scores(const std::vector<double>& item_scores) {
  gcn::DenseStack s;
  s.user_avg = DenseMatrix(1, 1, {1.0});
  s.item_avg = DenseMatrix(static_cast<int64_t>(item_scores.size()), 1, item_scores);
  return s;
}

}  // namespace

TEST_CASE("worked ranking examples") {
  SUBCASE("single positive ranked first") {
    // 102 items: train=0, test=101; pool of exactly 100 negatives
    std::vector<double> scores(102, 0.0);
    for (int i = 0; i < 102; ++i) scores[static_cast<size_t>(i)] = -static_cast<double>(i);
    scores[101] = 1.0;  // positive on top
    Dataset d = worked_ds(102, {101});
    auto rep = evaluate_ranking(stack_with_scores(scores), d, SplitSel::kTest, 100, 7);
    CHECK(rep.n_users == 1);
    CHECK(rep.users[0].n_candidates == 101);
    CHECK_FALSE(rep.users[0].short_pool);
    CHECK(rep.recall1 == doctest::Approx(1.0));
    CHECK(rep.recall3 == doctest::Approx(1.0));
    CHECK(rep.ndcg3 == doctest::Approx(1.0));
  }
  SUBCASE("single positive ranked third") {
    std::vector<double> scores(102, 0.0);
    for (int i = 0; i < 102; ++i) scores[static_cast<size_t>(i)] = -static_cast<double>(i) - 10.0;
    scores[1] = 3.0;
    scores[2] = 2.0;
    scores[101] = 1.0;  // two negatives outrank the positive
    Dataset d = worked_ds(102, {101});
    auto rep = evaluate_ranking(stack_with_scores(scores), d, SplitSel::kTest, 100, 7);
    CHECK(rep.recall1 == doctest::Approx(0.0));
    CHECK(rep.recall3 == doctest::Approx(1.0));
    CHECK(rep.ndcg3 == doctest::Approx(0.5));
  }
  SUBCASE("two positives ranked first and fourth") {
    std::vector<double> scores(103, 0.0);
    for (int i = 0; i < 103; ++i) scores[static_cast<size_t>(i)] = -static_cast<double>(i) - 10.0;
    scores[101] = 4.0;  // positive, rank 1
    scores[1] = 3.0;
    scores[2] = 2.0;
    scores[102] = 1.0;  // positive, rank 4
    Dataset d = worked_ds(103, {101, 102});
    auto rep = evaluate_ranking(stack_with_scores(scores), d, SplitSel::kTest, 100, 7);
    CHECK(rep.recall3 == doctest::Approx(0.5));
    CHECK(rep.ndcg3 == doctest::Approx(0.6131).epsilon(1e-3));
  }
}

TEST_CASE("short negative pools are flagged and exhausted") {
  std::vector<double> scores(10);
  for (int i = 0; i < 10; ++i) scores[static_cast<size_t>(i)] = static_cast<double>(i);
  Dataset d = worked_ds(10, {9});
  auto rep = evaluate_ranking(stack_with_scores(scores), d, SplitSel::kTest, 100, 7);
  CHECK(rep.users[0].short_pool);
  CHECK(rep.users[0].n_candidates == 9);  // 1 positive + 8 remaining items
}

TEST_CASE("identical seeds give identical reports") {
  Rng rng(31);
  Dataset d;
  d.n_users = 12;
  d.n_items = 200;
  std::set<std::pair<int32_t, int32_t>> seen;
  for (int32_t u = 0; u < 12; ++u) {
    for (int k = 0; k < 6; ++k) {
      const int32_t i = static_cast<int32_t>(rng.below(200));
      if (seen.insert({u, i}).second) d.train.push_back({u, i});
    }
    for (int k = 0; k < 2; ++k) {
      const int32_t i = static_cast<int32_t>(rng.below(200));
      if (seen.insert({u, i}).second) d.test.push_back({u, i});
    }
  }
  for (int64_t u = 0; u < 12; ++u) d.user_ids.push_back("u");
  for (int64_t i = 0; i < 200; ++i) d.item_ids.push_back("i");
  d.rebuild_adjacency();

  gcn::DenseStack s;
  s.user_avg = DenseMatrix(12, 3);
  s.item_avg = DenseMatrix(200, 3);
  for (double& v : s.user_avg.v) v = rng.normal(0, 1);
  for (double& v : s.item_avg.v) v = rng.normal(0, 1);

  auto a = evaluate_ranking(s, d, SplitSel::kTest, 20, 99);
  auto b = evaluate_ranking(s, d, SplitSel::kTest, 20, 99);
  CHECK(a.recall1 == b.recall1);
  CHECK(a.ndcg3 == b.ndcg3);
  auto c = evaluate_ranking(s, d, SplitSel::kTest, 20, 100);
  CHECK((a.recall1 != c.recall1 || a.recall3 != c.recall3 || a.ndcg3 != c.ndcg3));
}

TEST_CASE("random fixtures match the exhaustive oracle exactly") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t n_items = 30 + static_cast<int64_t>(rng.below(80));
    const int64_t n_users = 2 + static_cast<int64_t>(rng.below(6));
    Dataset d;
    d.n_users = n_users;
    d.n_items = n_items;
    std::set<std::pair<int32_t, int32_t>> seen;
    for (int32_t u = 0; u < n_users; ++u) {
      while (d.user_to_items.n_rows == 0 || true) {
        const int32_t i = static_cast<int32_t>(rng.below(n_items));
        if (seen.insert({u, i}).second) {
          d.train.push_back({u, i});
          break;
        }
      }
      for (int k = 0; k < 1 + static_cast<int>(rng.below(3)); ++k) {
        const int32_t i = static_cast<int32_t>(rng.below(n_items));
        if (seen.insert({u, i}).second) d.test.push_back({u, i});
      }
    }
    for (int64_t u = 0; u < n_users; ++u) d.user_ids.push_back("u");
    for (int64_t i = 0; i < n_items; ++i) d.item_ids.push_back("i");
    d.rebuild_adjacency();

    gcn::DenseStack s;
    s.user_avg = DenseMatrix(n_users, 2);
    s.item_avg = DenseMatrix(n_items, 2);
    for (double& v : s.user_avg.v) v = rng.normal(0, 1);
    for (double& v : s.item_avg.v) v = rng.normal(0, 1);

    // negatives >= item count forces the full-complement candidate set, which
    // the oracle can reconstruct independently
    auto rep = evaluate_ranking(s, d, SplitSel::kTest, static_cast<int>(n_items), 5);
    for (const auto& u_rec : rep.users) {
      std::vector<int32_t> positives, candidates;
      std::set<int32_t> interacted;
      for (const auto& p : d.train)
        if (p.user == u_rec.user) interacted.insert(p.item);
      for (const auto& p : d.test)
        if (p.user == u_rec.user) {
          positives.push_back(p.item);
          interacted.insert(p.item);
        }
      candidates = positives;
      for (int32_t i = 0; i < n_items; ++i)
        if (!interacted.count(i)) candidates.push_back(i);
      std::vector<double> scores;
      for (int32_t i : candidates) scores.push_back(gcn::predict_score(s, u_rec.user, i));
      const auto oracle = testing::exhaustive_rank_metrics(candidates, scores, positives);
      CHECK(u_rec.recall1 == oracle.recall1);
      CHECK(u_rec.recall3 == oracle.recall3);
      CHECK(u_rec.ndcg3 == oracle.ndcg3);
    }
  }
}
