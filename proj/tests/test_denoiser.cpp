#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gdmsr/denoiser.hpp"
#include "gdmsr/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace gdmsr;
using namespace gdmsr::denoise;
using data::Dataset;
using data::SocialGraph;

namespace {

Dataset make_ds(int64_t n_users, int64_t n_items, std::vector<data::Interaction> train) {
  Dataset d;
  d.n_users = n_users;
  d.n_items = n_items;
  d.train = std::move(train);
  for (int64_t u = 0; u < n_users; ++u) d.user_ids.push_back("u" + std::to_string(u));
  for (int64_t i = 0; i < n_items; ++i) d.item_ids.push_back("i" + std::to_string(i));
  d.rebuild_adjacency();
  return d;
}

DenoiseConfig small_cfg() {
  DenoiseConfig c;
  c.dim = 4;
  c.heads = 2;
  c.ff_dim = 8;
  c.mlp_hidden = 6;
  c.history_len = 4;
  c.hops = 1;
  c.epochs = 2;
  c.batch_size = 16;
  c.curriculum_period = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("history building") {
  SUBCASE("short histories are padded") {
    Dataset d = make_ds(1, 6, {{0, 2}, {0, 4}});
    HistorySequence h = build_history(d, 0, 4);
    CHECK(h.real_len == 2);
    CHECK(h.items.size() == 4);
    CHECK(h.items[2] == -1);
    CHECK(h.items[3] == -1);
  }
  SUBCASE("long histories keep the most popular items, descending") {
    // popularity: item k interacted by k+1 users
    std::vector<data::Interaction> train;
    for (int32_t i = 0; i < 6; ++i)
      for (int32_t u = 0; u <= i; ++u) train.push_back({u, i});
    Dataset d = make_ds(6, 6, std::move(train));
    HistorySequence h = build_history(d, 5, 4);  // user 5 interacted with all of 5..5? no: items 5 only
    // user 5 interacted with item 5 only; use user 0 which has all items
    h = build_history(d, 0, 4);
    CHECK(h.real_len == 4);
    CHECK(h.items == std::vector<int32_t>{5, 4, 3, 2});
  }
  SUBCASE("popularity ties break toward the lower item index") {
    Dataset d = make_ds(1, 5, {{0, 4}, {0, 1}, {0, 3}});
    HistorySequence h = build_history(d, 0, 2);
    CHECK(h.items == std::vector<int32_t>{1, 3});
  }
  SUBCASE("empty history is an error") {
    Dataset d = make_ds(2, 2, {{0, 0}, {0, 1}});
    d.train = {{0, 0}};
    d.rebuild_adjacency();
    CHECK_THROWS_AS(build_history(d, 1, 4), std::runtime_error);
  }
}

TEST_CASE("adaptive removal ratio") {
  CHECK(denoise_ratio(4, 5, 1.0, 0.02) == doctest::Approx(0.0));
  CHECK(denoise_ratio(50, 5, 1.0, 0.02) == doctest::Approx(0.02));
  CHECK(denoise_ratio(500, 5, 2.0, 0.02) == doctest::Approx(0.08));
  CHECK(denoise_ratio(7, 5, 1.0, 0.02) == doctest::Approx(0.0));  // log bucket 0
  CHECK(denoise_ratio(100000000, 5, 2.0, 0.5) == doctest::Approx(0.99));  // clamped

  SUBCASE("non-decreasing in the friend count") {
    double prev = 0.0;
    for (int64_t n = 0; n < 2000; ++n) {
      const double e = denoise_ratio(n, 5, 1.5, 0.03);
      CHECK(e >= prev);
      CHECK(e < 1.0);
      prev = e;
    }
  }
}

TEST_CASE("score smoothing") {
  ConfidenceStore s;
  SUBCASE("first period is a pass-through regardless of beta") {
    smooth_scores(s, {0.4, -1.0}, 0.9, 1);
    CHECK(s.smoothed[0] == doctest::Approx(0.4));
    CHECK(s.smoothed[1] == doctest::Approx(-1.0));
  }
  SUBCASE("convex combination afterwards") {
    smooth_scores(s, {0.8}, 0.5, 1);
    smooth_scores(s, {0.4}, 0.5, 2);
    CHECK(s.smoothed[0] == doctest::Approx(0.6));
  }
  SUBCASE("beta zero keeps only the newest raw score") {
    smooth_scores(s, {0.8}, 0.0, 1);
    smooth_scores(s, {0.4}, 0.0, 2);
    CHECK(s.smoothed[0] == doctest::Approx(0.4));
  }
  SUBCASE("three periods match the unrolled closed form") {
    const double beta = 0.3;
    const double r1 = 0.9, r2 = -0.2, r3 = 0.5;
    smooth_scores(s, {r1}, beta, 1);
    smooth_scores(s, {r2}, beta, 2);
    smooth_scores(s, {r3}, beta, 3);
    const double closed = beta * beta * r1 + beta * (1 - beta) * r2 + (1 - beta) * r3;
    CHECK(std::fabs(s.smoothed[0] - closed) <= 1e-12);
  }
}

TEST_CASE("curriculum update") {
  // one user with 10 friends
  std::vector<std::pair<int32_t, int32_t>> edges;
  for (int32_t v = 1; v <= 10; ++v) edges.emplace_back(0, v);
  SocialGraph g = SocialGraph::from_directed_pairs(11, edges);
  DenoiseConfig cfg = small_cfg();
  cfg.epsilon = 5;
  cfg.gamma = 1.0;
  cfg.base_ratio = 0.2;  // deg 10 -> eta 0.2 -> remove 2

  ConfidenceStore s;
  std::vector<double> raw(10);
  for (int i = 0; i < 10; ++i) raw[static_cast<size_t>(i)] = static_cast<double>(i);  // edge to v=i+1 scores i
  smooth_scores(s, raw, 0.5, 1);

  SUBCASE("exactly the bottom floor(eta*deg) edges deactivate") {
    curriculum_update(g, s, cfg);
    CHECK(g.active_out_degree(0) == 8);
    CHECK(g.active[0] == 0);  // v=1, score 0
    CHECK(g.active[1] == 0);  // v=2, score 1
    for (int e = 2; e < 10; ++e) CHECK(g.active[static_cast<size_t>(e)] == 1);
  }

  SUBCASE("eta zero leaves everything active") {
    cfg.base_ratio = 1e-9;
    curriculum_update(g, s, cfg);
    CHECK(g.active_out_degree(0) == 10);
  }

  SUBCASE("ties deactivate the larger target index first") {
    std::fill(s.smoothed.begin(), s.smoothed.end(), 1.0);
    curriculum_update(g, s, cfg);
    CHECK(g.active[8] == 0);
    CHECK(g.active[9] == 0);
    CHECK(g.active[0] == 1);
  }

  SUBCASE("a removed edge whose rank recovers is readmitted") {
    curriculum_update(g, s, cfg);
    CHECK(g.active[0] == 0);
    // next period: edge 0 scores far above everything else
    std::vector<double> raw2(10, 0.0);
    raw2[0] = 100.0;
    smooth_scores(s, raw2, 0.1, 2);
    curriculum_update(g, s, cfg);
    CHECK(g.active[0] == 1);
    CHECK(g.active_out_degree(0) == 8);
  }

  SUBCASE("random fixtures keep cardinality and rank correctness") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
      const int64_t n = 20;
      std::vector<std::pair<int32_t, int32_t>> es;
      for (int32_t u = 0; u < n; ++u)
        for (int32_t v = 0; v < n; ++v)
          if (u != v && rng.uniform01() < 0.4) es.emplace_back(u, v);
      SocialGraph rg = SocialGraph::from_directed_pairs(n, es);
      ConfidenceStore st;
      std::vector<double> r(static_cast<size_t>(rg.n_edges()));
      for (double& x : r) x = rng.normal(0, 1);
      smooth_scores(st, r, 0.5, 1);
      DenoiseConfig c2 = small_cfg();
      c2.epsilon = 2;
      c2.gamma = 1.0;
      c2.base_ratio = 0.35;
      curriculum_update(rg, st, c2);
      for (int32_t u = 0; u < n; ++u) {
        const int64_t deg = rg.adj.degree(u);
        if (deg == 0) continue;
        const int64_t expect_rm =
            static_cast<int64_t>(std::floor(eta_for(c2, deg) * static_cast<double>(deg)));
        CHECK(deg - rg.active_out_degree(u) == expect_rm);
        double min_active = 1e300, max_inactive = -1e300;
        for (int64_t e = rg.adj.offsets[u]; e < rg.adj.offsets[u + 1]; ++e) {
          const double sc = st.smoothed[static_cast<size_t>(e)];
          if (rg.active[static_cast<size_t>(e)])
            min_active = std::min(min_active, sc);
          else
            max_inactive = std::max(max_inactive, sc);
        }
        if (expect_rm > 0) CHECK(max_inactive <= min_active);
      }
    }
  }
}

TEST_CASE("link loss and joint loss") {
  num::Tape t;
  SUBCASE("one positive logit at zero gives ln 2") {
    num::Tensor pos = t.constant({1}, {0.0});
    CHECK(bce_link_loss(t, pos, std::nullopt).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("positive 2 and negative -2 give twice softplus(-2)") {
    num::Tensor pos = t.constant({1}, {2.0});
    num::Tensor neg = t.constant({1}, {-2.0});
    CHECK(bce_link_loss(t, pos, neg).scalar() == doctest::Approx(0.253856).epsilon(1e-4));
  }
  SUBCASE("empty inputs give zero") {
    CHECK(bce_link_loss(t, std::nullopt, std::nullopt).scalar() == doctest::Approx(0.0));
  }
  SUBCASE("alpha blends the two terms") {
    num::Tensor bce = t.constant_scalar(0.4);
    num::Tensor bpr = t.constant_scalar(0.8);
    CHECK(joint_loss(bce, bpr, 1.0).scalar() == doctest::Approx(0.4));
    CHECK(joint_loss(bce, bpr, 0.0).scalar() == doctest::Approx(0.8));
    CHECK(joint_loss(bce, bpr, 0.5).scalar() == doctest::Approx(0.6));
  }
}

TEST_CASE("transformer confidence head") {
  Dataset d = make_ds(3, 8, {{0, 1}, {0, 2}, {1, 3}, {2, 4}, {2, 5}});
  DenoiseConfig cfg = small_cfg();
  DenoiserModel m = init_denoiser(d.n_users, d.n_items, cfg);
  auto hist = build_all_histories(d, cfg.history_len);

  SUBCASE("sequence layout: 2L+1 positions, padding masked") {
    // |P_u0| = 2, |P_u1| = 1 -> 9 positions, 2+1+1(CLS) valid, 5 masked
    const int64_t valid = hist[0].real_len + hist[1].real_len + 1;
    CHECK(2 * cfg.history_len + 1 - valid == 5);
    const double score = relation_confidence(m, hist, 0, 1);
    CHECK(std::isfinite(score));
  }

  SUBCASE("items outside both histories cannot influence the logit") {
    const double before = relation_confidence(m, hist, 0, 1);
    // item 7 appears in no history
    auto& table = m.params.at("item_emb");
    for (int64_t c = 0; c < cfg.dim; ++c) table.value[static_cast<size_t>(7 * cfg.dim + c)] += 123.0;
    CHECK(relation_confidence(m, hist, 0, 1) == doctest::Approx(before).epsilon(1e-12));
  }

  SUBCASE("directed pairs may score differently in each direction") {
    const double uv = relation_confidence(m, hist, 0, 1);
    const double vu = relation_confidence(m, hist, 1, 0);
    CHECK(uv != vu);  // segment embeddings carry the order
  }
}

TEST_CASE("pooled and user-layer scorer variants") {
  Dataset d = make_ds(2, 3, {{0, 0}, {0, 1}, {1, 0}});
  DenoiseConfig cfg = small_cfg();
  cfg.dim = 2;
  cfg.scorer = Scorer::kItemMeanPool;
  DenoiserModel m = init_denoiser(2, 3, cfg);
  auto& e2 = m.params.at("item_emb");
  e2.value = {1, 0, 0, 1, 0, 0};  // i0=[1,0], i1=[0,1], i2=[0,0]
  auto hist = build_all_histories(d, cfg.history_len);

  SUBCASE("pooled dot of masked means") {
    // mean(u0) = [0.5, 0.5]; mean(u1) = [1, 0] -> dot 0.5
    CHECK(relation_confidence(m, hist, 0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("pooling is symmetric") {
    CHECK(relation_confidence(m, hist, 0, 1) == doctest::Approx(relation_confidence(m, hist, 1, 0)));
  }
  SUBCASE("user-layer-0 is the dot of raw user embeddings") {
    cfg.scorer = Scorer::kUserLayer0;
    DenoiserModel m0 = init_denoiser(2, 3, cfg);
    auto& e1 = m0.params.at("user_emb");
    e1.value = {1, 2, 3, 4};
    CHECK(relation_confidence(m0, hist, 0, 1) == doctest::Approx(11.0));
  }
}

TEST_CASE("joint loss gradients pass finite differences on a small fixture") {
  Dataset d = make_ds(4, 6, {{0, 0}, {0, 1}, {1, 2}, {2, 3}, {2, 0}, {3, 4}, {3, 5}});
  SocialGraph g = SocialGraph::from_undirected_pairs(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
  DenoiseConfig cfg = small_cfg();
  cfg.dropout = 0.0;
  DenoiserModel m = init_denoiser(d.n_users, d.n_items, cfg);
  const auto hist = build_all_histories(d, cfg.history_len);
  const Csr active = g.active_csr();

  const std::vector<gcn::Triple> triples{{0, 0, 3}, {1, 2, 4}, {2, 3, 1}};
  const std::vector<std::pair<int32_t, int32_t>> pos{{0, 1}, {2, 3}};
  const std::vector<std::pair<int32_t, int32_t>> neg{{0, 2}, {2, 0}};

  auto build = [&](num::Tape& t) {
    ModelLeaves leaves = ModelLeaves::trainable(t, m.params);
    gcn::LayerStack stack = gcn::gcn_forward(t, leaves.user_emb, leaves.item_emb, active,
                                             d.user_to_items, d.item_to_users, cfg.hops);
    Rng rng(1);
    num::Tensor lp = relation_confidence_batch(t, leaves, pos, hist, cfg, false, rng, &stack);
    num::Tensor ln = relation_confidence_batch(t, leaves, neg, hist, cfg, false, rng, &stack);
    num::Tensor bce = bce_link_loss(t, lp, ln);
    num::Tensor bpr = gcn::bpr_loss(t, stack, triples);
    return joint_loss(bce, bpr, 0.6);
  };
  auto params = m.params.all();
  const auto res = num::grad_check(params, build, 1e-4);
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-4);
  CHECK(res.coords_checked > 100);
}

TEST_CASE("denoiser training loop") {
  // 30 users, 40 items, ring-ish social graph
  std::vector<data::Interaction> train;
  Rng rng(9);
  for (int32_t u = 0; u < 30; ++u)
    for (int k = 0; k < 4; ++k) train.push_back({u, static_cast<int32_t>(rng.below(40))});
  std::sort(train.begin(), train.end(), [](auto a, auto b) {
    return std::pair(a.user, a.item) < std::pair(b.user, b.item);
  });
  train.erase(std::unique(train.begin(), train.end()), train.end());
  Dataset d = make_ds(30, 40, std::move(train));
  std::vector<std::pair<int32_t, int32_t>> es;
  for (int32_t u = 0; u < 30; ++u) {
    es.emplace_back(u, (u + 1) % 30);
    es.emplace_back(u, (u + 7) % 30);
    es.emplace_back(u, (u + 13) % 30);
  }
  SocialGraph g = SocialGraph::from_undirected_pairs(30, es);

  DenoiseConfig cfg = small_cfg();
  cfg.epochs = 6;
  cfg.curriculum_period = 2;
  cfg.epsilon = 2;
  cfg.base_ratio = 0.1;

  SUBCASE("curriculum fires epochs/period times") {
    auto tr = train_denoiser(d, g, cfg);
    CHECK(tr.curriculum_log.size() == 3);
    CHECK(tr.store.last_period() == 3);
    CHECK(tr.epoch_loss.size() == 6);
  }

  SUBCASE("same seed gives a bitwise-identical store") {
    auto a = train_denoiser(d, g, cfg);
    auto b = train_denoiser(d, g, cfg);
    CHECK(a.store.smoothed == b.store.smoothed);
    CHECK(a.model.params.at("user_emb").value == b.model.params.at("user_emb").value);
    cfg.seed += 1;
    auto c = train_denoiser(d, g, cfg);
    CHECK(a.store.smoothed != c.store.smoothed);
  }

  SUBCASE("users without friends are handled by skipping relation terms") {
    SocialGraph lonely = SocialGraph::from_undirected_pairs(30, {{0, 1}});
    auto tr = train_denoiser(d, lonely, cfg);
    CHECK(tr.epoch_loss.size() == 6);
  }

  SUBCASE("alpha 0 disables the link loss path") {
    cfg.alpha = 0.0;
    auto tr = train_denoiser(d, g, cfg);
    CHECK(std::isfinite(tr.epoch_loss.back()));
  }

  SUBCASE("rescore_store is a no-op on full data but adds a period on partial") {
    auto tr = train_denoiser(d, g, cfg);
    auto same = rescore_store(tr.model, d, g, tr.store);
    CHECK(same.smoothed == tr.store.smoothed);

    cfg.interaction_fraction = 0.5;
    auto tr2 = train_denoiser(d, g, cfg);
    const int32_t before = tr2.store.last_period();
    auto bumped = rescore_store(tr2.model, d, g, tr2.store);
    CHECK(bumped.last_period() == before + 1);
  }
}

TEST_CASE("final denoising and export") {
  std::vector<std::pair<int32_t, int32_t>> es;
  for (int32_t v = 1; v <= 10; ++v) es.emplace_back(0, v);
  SocialGraph g = SocialGraph::from_directed_pairs(11, es);
  ConfidenceStore s;
  std::vector<double> raw(10);
  for (int i = 0; i < 10; ++i) raw[static_cast<size_t>(i)] = i;
  smooth_scores(s, raw, 0.5, 1);
  DenoiseConfig cfg = small_cfg();
  cfg.epsilon = 5;
  cfg.base_ratio = 0.2;

  SUBCASE("summary reports removal and retention") {
    DenoiseSummary sum;
    SocialGraph out = denoise_graph(g, s, cfg, &sum);
    CHECK(sum.edges_total == 10);
    CHECK(sum.edges_retained == 8);
    CHECK(sum.overall_removal_ratio == doctest::Approx(0.2));
    CHECK_FALSE(sum.has_fakes);
  }

  SUBCASE("eta zero everywhere keeps the graph identical") {
    cfg.base_ratio = 1e-12;
    DenoiseSummary sum;
    SocialGraph out = denoise_graph(g, s, cfg, &sum);
    CHECK(out.n_active() == g.n_edges());
  }

  SUBCASE("export and reload round-trip the retained edges") {
    testing::TempDir tmp;
    SocialGraph out = denoise_graph(g, s, cfg, nullptr);
    export_denoised_tsv(tmp.path() / "d.tsv", out, s);
    SocialGraph back = load_denoised_tsv(tmp.path() / "d.tsv", 11);
    CHECK(back.n_edges() == out.n_active());
    for (int32_t v = 3; v <= 10; ++v) CHECK(back.has_edge(0, v));
  }
}

TEST_CASE("rule-based baseline") {
  Dataset d = make_ds(3, 5, {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}, {2, 4}});
  SocialGraph g = SocialGraph::from_undirected_pairs(3, {{0, 1}, {0, 2}});

  SUBCASE("ratio zero is the identity") {
    SocialGraph out = rule_based_denoise(d, g, 0.0);
    CHECK(out.n_active() == g.n_edges());
  }
  SUBCASE("the friend with no shared items is dropped first") {
    SocialGraph out = rule_based_denoise(d, g, 0.5);
    // u0 has friends {1: 3 shared, 2: 0 shared}; floor(0.5*2) = 1 removal
    CHECK(out.active_out_degree(0) == 1);
    CHECK(out.active[*out.edge_id(0, 1)] == 1);
    CHECK(out.active[*out.edge_id(0, 2)] == 0);
  }
  SUBCASE("deterministic output") {
    SocialGraph a = rule_based_denoise(d, g, 0.5);
    SocialGraph b = rule_based_denoise(d, g, 0.5);
    CHECK(a.active == b.active);
  }
}

TEST_CASE("base ratio calibration hits the target overall removal") {
  Rng rng(23);
  std::vector<std::pair<int32_t, int32_t>> es;
  for (int32_t u = 0; u < 200; ++u) {
    const int deg = 5 + static_cast<int>(rng.below(40));
    for (int k = 0; k < deg; ++k) {
      const int32_t v = static_cast<int32_t>(rng.below(200));
      if (v != u) es.emplace_back(u, v);
    }
  }
  std::sort(es.begin(), es.end());
  es.erase(std::unique(es.begin(), es.end()), es.end());
  SocialGraph g = SocialGraph::from_directed_pairs(200, es);
  DenoiseConfig cfg = small_cfg();
  cfg.epsilon = 5;
  cfg.gamma = 1.0;
  const double r = calibrate_base_ratio(g, cfg, 0.2);
  DenoiseConfig at = cfg;
  at.base_ratio = r;
  const double achieved = overall_removal_at(g, at);
  CHECK(achieved >= 0.2);
  CHECK(achieved <= 0.25);
}
