#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>

#include "doctest.h"
#include "gdmsr/dataset.hpp"
#include "gdmsr/rng.hpp"
#include "support/testutil.hpp"

using namespace gdmsr;
using namespace gdmsr::data;
using gdmsr::testing::TempDir;
using gdmsr::testing::write_file;

namespace {

FilterConfig no_filter() {
  FilterConfig f;
  f.min_user_interactions = 1;
  f.min_item_interactions = 1;
  f.min_friends = 0;
  return f;
}

std::vector<RawInteraction> rows(std::initializer_list<std::tuple<const char*, const char*, double>> rs) {
  std::vector<RawInteraction> out;
  for (const auto& [u, i, r] : rs) out.push_back({u, i, r});
  return out;
}

}  // namespace

TEST_CASE("ratings below the positive threshold are excluded") {
  auto [d, g] = build_dataset(rows({{"a", "x", 5}, {"a", "y", 3}, {"a", "z", 4}}), {},
                              no_filter(), SplitConfig{1.0, 0.0, 0.0}, 1);
  CHECK(d.n_items == 2);  // y dropped
  for (const auto& id : d.item_ids) CHECK(id != "y");
}

TEST_CASE("rows without a rating column are all positives") {
  std::vector<RawInteraction> rs = {{"a", "x", std::nullopt}, {"a", "y", std::nullopt}};
  auto [d, g] = build_dataset(rs, {}, no_filter(), {1.0, 0.0, 0.0}, 1);
  CHECK(d.n_items == 2);
}

TEST_CASE("two users with zero social edges make a valid empty graph") {
  auto [d, g] = build_dataset(rows({{"a", "x", 5}, {"b", "x", 5}}), {}, no_filter(),
                              {1.0, 0.0, 0.0}, 1);
  CHECK(d.n_users == 2);
  CHECK(g.n_edges() == 0);
}

TEST_CASE("undirected input becomes two directed edges, no self-loops or dupes") {
  auto [d, g] = build_dataset(
      rows({{"a", "x", 5}, {"b", "x", 5}, {"c", "x", 5}}),
      {{"a", "b"}, {"b", "a"}, {"a", "a"}, {"a", "b"}}, no_filter(), {1.0, 0.0, 0.0}, 1);
  CHECK(g.n_edges() == 2);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 0));
  CHECK_FALSE(g.has_edge(0, 0));
}

TEST_CASE("activity filter reaches a fixpoint and errors on empty output") {
  FilterConfig f = no_filter();
  f.min_user_interactions = 2;
  f.min_item_interactions = 2;
  // b only interacts with y; y only has b: both fall, then x loses b's row but keeps a,c.
  auto [d, g] = build_dataset(
      rows({{"a", "x", 5}, {"c", "x", 5}, {"b", "y", 5}, {"a", "z", 5}, {"c", "z", 5}}), {}, f,
      {1.0, 0.0, 0.0}, 1);
  CHECK(d.n_users == 2);
  CHECK(d.n_items == 2);

  f.min_user_interactions = 10;
  CHECK_THROWS_WITH_AS(
      build_dataset(rows({{"a", "x", 5}}), {}, f, {1.0, 0.0, 0.0}, 1),
      doctest::Contains("empty"), std::runtime_error);
}

TEST_CASE("re-running the filter on its own output changes nothing") {
  // Build once with real thresholds, rebuild from the surviving data: counts equal.
  std::vector<RawInteraction> rs;
  Rng rng(7);
  for (int u = 0; u < 40; ++u) {
    const int n = 1 + static_cast<int>(rng.below(8));
    for (int k = 0; k < n; ++k)
      rs.push_back({"u" + std::to_string(u), "i" + std::to_string(rng.below(30)), 5.0});
  }
  std::vector<std::pair<std::string, std::string>> soc;
  for (int e = 0; e < 60; ++e)
    soc.emplace_back("u" + std::to_string(rng.below(40)), "u" + std::to_string(rng.below(40)));
  FilterConfig f;
  f.min_user_interactions = 3;
  f.min_item_interactions = 2;
  f.min_friends = 1;
  auto [d1, g1] = build_dataset(rs, soc, f, {1.0, 0.0, 0.0}, 1);

  std::vector<RawInteraction> rs2;
  for (const auto& p : d1.train)
    rs2.push_back({d1.user_ids[static_cast<size_t>(p.user)],
                   d1.item_ids[static_cast<size_t>(p.item)], 5.0});
  std::vector<std::pair<std::string, std::string>> soc2;
  for (const auto& [u, v] : g1.adj.to_pairs())
    if (u < v)
      soc2.emplace_back(d1.user_ids[static_cast<size_t>(u)], d1.user_ids[static_cast<size_t>(v)]);
  auto [d2, g2] = build_dataset(rs2, soc2, f, {1.0, 0.0, 0.0}, 1);
  CHECK(d2.n_users == d1.n_users);
  CHECK(d2.n_items == d1.n_items);
  CHECK(d2.train.size() == d1.train.size());
  CHECK(g2.n_edges() == g1.n_edges());
}

TEST_CASE("splits partition the filtered interactions") {
  std::vector<RawInteraction> rs;
  Rng rng(3);
  for (int u = 0; u < 25; ++u)
    for (int k = 0; k < 12; ++k)
      rs.push_back({"u" + std::to_string(u), "i" + std::to_string(rng.below(60)), 5.0});
  auto [d, g] = build_dataset(rs, {}, no_filter(), {0.8, 0.1, 0.1}, 9);

  std::set<std::pair<int32_t, int32_t>> all;
  for (const auto* s : {&d.train, &d.valid, &d.test})
    for (const auto& p : *s) CHECK(all.insert({p.user, p.item}).second);

  // every surviving raw pair is in exactly one split
  std::set<std::pair<std::string, std::string>> raw;
  for (const auto& r : rs) raw.insert({r.user, r.item});
  CHECK(all.size() == raw.size());

  for (int32_t u = 0; u < d.n_users; ++u) CHECK(d.user_to_items.degree(u) >= 1);
}

TEST_CASE("csr round-trips its edge list") {
  Rng rng(11);
  std::vector<std::pair<int32_t, int32_t>> pairs;
  std::set<std::pair<int32_t, int32_t>> uniq;
  while (uniq.size() < 40) {
    auto p = std::make_pair(static_cast<int32_t>(rng.below(15)), static_cast<int32_t>(rng.below(20)));
    if (uniq.insert(p).second) pairs.push_back(p);
  }
  const Csr csr = Csr::from_pairs(15, 20, pairs);
  auto back = csr.to_pairs();
  std::sort(pairs.begin(), pairs.end());
  std::sort(back.begin(), back.end());
  CHECK(back == pairs);
  for (int64_t r = 0; r < csr.n_rows; ++r) CHECK(csr.offsets[r] <= csr.offsets[r + 1]);
}

TEST_CASE("parse errors carry the line number") {
  TempDir tmp;
  write_file(tmp.path() / "bad.tsv", "u1\ti1\t5\nu2\n");
  write_file(tmp.path() / "social.tsv", "");
  CHECK_THROWS_WITH_AS(
      load_dataset(tmp.path() / "bad.tsv", tmp.path() / "social.tsv", no_filter(), {1, 0, 0}, 1),
      doctest::Contains(":2"), std::runtime_error);

  write_file(tmp.path() / "badrating.tsv", "u1\ti1\tfive\n");
  CHECK_THROWS_WITH_AS(load_dataset(tmp.path() / "badrating.tsv", tmp.path() / "social.tsv",
                                    no_filter(), {1, 0, 0}, 1),
                       doctest::Contains("rating"), std::runtime_error);
}

TEST_CASE("comment lines and crlf are tolerated") {
  TempDir tmp;
  write_file(tmp.path() / "inter.tsv", "# header\nu1\ti1\t5\r\nu2\ti1\t4\n");
  write_file(tmp.path() / "social.tsv", "# none\nu1\tu2\n");
  auto [d, g] = load_dataset(tmp.path() / "inter.tsv", tmp.path() / "social.tsv", no_filter(),
                             {1, 0, 0}, 1);
  CHECK(d.n_users == 2);
  CHECK(g.n_edges() == 2);
}

TEST_CASE("fake relation injection") {
  // path graph over 6 users
  SocialGraph g = SocialGraph::from_undirected_pairs(
      6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});

  SUBCASE("doubles the edge count with disjoint fake pairs") {
    SocialGraph noisy = inject_fake_relations(g, 5);
    CHECK(noisy.n_edges() == 2 * g.n_edges());
    int64_t fakes = 0;
    for (size_t e = 0; e < noisy.provenance.size(); ++e) {
      if (noisy.provenance[e] != SocialGraph::kFake) continue;
      ++fakes;
      // locate endpoints of this edge
      int32_t u = -1;
      for (int64_t r = 0; r < noisy.n_users(); ++r)
        if (noisy.adj.offsets[r] <= static_cast<int64_t>(e) &&
            static_cast<int64_t>(e) < noisy.adj.offsets[r + 1])
          u = static_cast<int32_t>(r);
      const int32_t v = noisy.adj.indices[e];
      CHECK(u != v);
      CHECK_FALSE(g.has_edge(u, v));
    }
    CHECK(fakes == g.n_edges());
  }

  SUBCASE("is deterministic under the seed") {
    SocialGraph a = inject_fake_relations(g, 5);
    SocialGraph b = inject_fake_relations(g, 5);
    CHECK(a.adj.indices == b.adj.indices);
    CHECK(a.provenance == b.provenance);
    SocialGraph c = inject_fake_relations(g, 6);
    CHECK(a.adj.indices != c.adj.indices);
  }

  SUBCASE("complete graph has no room for fakes") {
    std::vector<std::pair<int32_t, int32_t>> all;
    for (int32_t a = 0; a < 4; ++a)
      for (int32_t b = a + 1; b < 4; ++b) all.emplace_back(a, b);
    SocialGraph full = SocialGraph::from_undirected_pairs(4, all);
    CHECK_THROWS_WITH_AS(inject_fake_relations(full, 1), doctest::Contains("dense"),
                         std::runtime_error);
  }
}

TEST_CASE("co-interaction ratios") {
  // u0 shares an item with u1 but not with u2
  Dataset d;
  d.n_users = 3;
  d.n_items = 3;
  d.train = {{0, 0}, {1, 0}, {2, 1}, {0, 2}};
  d.user_ids = {"a", "b", "c"};
  d.item_ids = {"x", "y", "z"};
  d.rebuild_adjacency();
  SocialGraph g = SocialGraph::from_undirected_pairs(3, {{0, 1}, {0, 2}});

  auto stats = co_interaction_stats(d, g);
  REQUIRE(stats.size() == 3);
  CHECK(stats[0].first == 0);
  CHECK(stats[0].second == doctest::Approx(0.5));
  CHECK(stats[1].second == doctest::Approx(1.0));  // u1's only friend u0 shares item 0
  CHECK(stats[2].second == doctest::Approx(0.0));

  SUBCASE("users with zero friends are omitted") {
    SocialGraph lonely = SocialGraph::from_undirected_pairs(3, {{0, 1}});
    auto st = co_interaction_stats(d, lonely);
    CHECK(st.size() == 2);
  }
}

TEST_CASE("train subsample keeps at least one interaction per user") {
  std::vector<RawInteraction> rs;
  Rng rng(21);
  for (int u = 0; u < 10; ++u)
    for (int k = 0; k < 2 + static_cast<int>(rng.below(10)); ++k)
      rs.push_back({"u" + std::to_string(u), "i" + std::to_string(rng.below(40)), 5.0});
  auto [d, g] = build_dataset(rs, {}, no_filter(), {0.8, 0.1, 0.1}, 2);
  Dataset sub = subsample_train(d, 0.3, 7);
  CHECK(sub.train.size() < d.train.size());
  for (int32_t u = 0; u < sub.n_users; ++u) {
    CHECK(sub.user_to_items.degree(u) >= 1);
    // subsampled rows are a subset of the original train rows
    for (int32_t i : sub.user_to_items.row(u)) CHECK(d.user_has_train_item(u, i));
  }
  CHECK(sub.valid.size() == d.valid.size());

  Dataset same = subsample_train(d, 0.3, 7);
  CHECK(same.train.size() == sub.train.size());
}
