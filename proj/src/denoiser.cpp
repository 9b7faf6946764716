#include "gdmsr/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gdmsr/adam.hpp"

namespace gdmsr::denoise {

using data::Dataset;
using data::SocialGraph;
using num::Tape;
using num::Tensor;

std::string scorer_name(Scorer s) {
  switch (s) {
    case Scorer::kTransformerHistory: return "transformer-history";
    case Scorer::kUserLayer0: return "user-layer-0";
    case Scorer::kUserLayer1: return "user-layer-1";
    case Scorer::kItemMeanPool: return "item-mean-pool";
  }
  fail("scorer_name: bad enum value");
}

Scorer scorer_from_name(const std::string& name) {
  if (name == "transformer-history") return Scorer::kTransformerHistory;
  if (name == "user-layer-0") return Scorer::kUserLayer0;
  if (name == "user-layer-1") return Scorer::kUserLayer1;
  if (name == "item-mean-pool") return Scorer::kItemMeanPool;
  fail("unknown scorer '", name,
       "'; expected one of transformer-history, user-layer-0, user-layer-1, item-mean-pool");
}

void DenoiseConfig::validate() const {
  check(alpha >= 0.0 && alpha <= 1.0, "config: alpha ", alpha, " outside [0,1]");
  check(beta >= 0.0 && beta <= 1.0, "config: beta ", beta, " outside [0,1]");
  check(epsilon >= 1, "config: epsilon must be >= 1");
  check(base_ratio > 0.0, "config: base_ratio must be positive");
  check(history_len >= 1, "config: history_len must be >= 1");
  check(hops >= 0, "config: hops must be >= 0");
  check(epochs >= 0 && batch_size >= 1 && dim >= 1, "config: bad training sizes");
  check(curriculum_period >= 1, "config: curriculum_period must be >= 1");
  check(interaction_fraction > 0.0 && interaction_fraction <= 1.0,
        "config: interaction_fraction ", interaction_fraction, " outside (0,1]");
  check(uniform_ratio >= 0.0 && uniform_ratio < 1.0, "config: uniform_ratio outside [0,1)");
  check(dropout >= 0.0 && dropout < 1.0, "config: dropout outside [0,1)");
  check(dim % heads == 0, "config: dim ", dim, " not divisible by heads ", heads);
  check(eta_clamp > 0.0 && eta_clamp < 1.0, "config: eta_clamp outside (0,1)");
}

// ---- histories ---------------------------------------------------------------

HistorySequence build_history(const Dataset& d, int32_t u, int length) {
  check(u >= 0 && u < d.n_users, "build_history: user ", u, " out of range");
  check(length >= 1, "build_history: length must be >= 1");
  const auto row = d.user_to_items.row(u);
  check(!row.empty(), "build_history: user ", u, " has an empty interaction history");
  std::vector<int32_t> items(row.begin(), row.end());
  std::sort(items.begin(), items.end(), [&](int32_t a, int32_t b) {
    const int64_t pa = d.popularity[static_cast<size_t>(a)], pb = d.popularity[static_cast<size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });
  HistorySequence h;
  h.user = u;
  h.real_len = static_cast<int32_t>(std::min<size_t>(items.size(), static_cast<size_t>(length)));
  items.resize(static_cast<size_t>(h.real_len));
  items.resize(static_cast<size_t>(length), -1);
  h.items = std::move(items);
  return h;
}

std::vector<HistorySequence> build_all_histories(const Dataset& d, int length) {
  std::vector<HistorySequence> out;
  out.reserve(static_cast<size_t>(d.n_users));
  for (int32_t u = 0; u < d.n_users; ++u) out.push_back(build_history(d, u, length));
  return out;
}

// ---- store / ratios ------------------------------------------------------------

int32_t ConfidenceStore::last_period() const {
  int32_t k = 0;
  for (int32_t p : period) k = std::max(k, p);
  return k;
}

void smooth_scores(ConfidenceStore& store, const std::vector<double>& raw, double beta, int k) {
  check(k >= 1, "smooth_scores: period index must be >= 1");
  if (store.empty()) {
    store.smoothed.assign(raw.size(), 0.0);
    store.period.assign(raw.size(), 0);
  }
  check(store.smoothed.size() == raw.size(), "smooth_scores: raw covers ", raw.size(),
        " edges, store has ", store.smoothed.size());
  for (size_t e = 0; e < raw.size(); ++e) {
    if (k == 1 || store.period[e] == 0)
      store.smoothed[e] = raw[e];
    else
      store.smoothed[e] = beta * store.smoothed[e] + (1.0 - beta) * raw[e];
    store.period[e] = k;
  }
}

namespace {
int64_t int_log10(int64_t n) {
  int64_t d = 0;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}
}  // namespace

double denoise_ratio(int64_t friend_count, int epsilon, double gamma, double base_ratio,
                     double clamp) {
  check(friend_count >= 0, "denoise_ratio: negative friend count");
  if (friend_count < epsilon) return 0.0;
  const double bucket = static_cast<double>(int_log10(friend_count));
  return std::min(std::pow(bucket, gamma) * base_ratio, clamp);
}

double eta_for(const DenoiseConfig& cfg, int64_t friend_count) {
  if (cfg.adaptive)
    return denoise_ratio(friend_count, cfg.epsilon, cfg.gamma, cfg.base_ratio, cfg.eta_clamp);
  return std::min(cfg.uniform_ratio, cfg.eta_clamp);
}

void curriculum_update(SocialGraph& g, const ConfidenceStore& store, const DenoiseConfig& cfg) {
  check(static_cast<int64_t>(store.smoothed.size()) == g.n_edges(),
        "curriculum_update: store covers ", store.smoothed.size(), " edges, graph has ",
        g.n_edges());
  for (int32_t u = 0; u < g.n_users(); ++u) {
    const int64_t begin = g.adj.offsets[u], end = g.adj.offsets[u + 1];
    const int64_t deg = end - begin;
    if (deg == 0) continue;
    const double eta = eta_for(cfg, deg);
    const int64_t n_remove = static_cast<int64_t>(std::floor(eta * static_cast<double>(deg)));
    std::vector<int64_t> ids(static_cast<size_t>(deg));
    for (int64_t e = begin; e < end; ++e) ids[static_cast<size_t>(e - begin)] = e;
    // score descending; on ties the smaller target index (== smaller edge id
    // within the row) survives longer
    std::sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
      if (store.smoothed[static_cast<size_t>(a)] != store.smoothed[static_cast<size_t>(b)])
        return store.smoothed[static_cast<size_t>(a)] > store.smoothed[static_cast<size_t>(b)];
      return a < b;
    });
    for (int64_t r = 0; r < deg; ++r)
      g.active[static_cast<size_t>(ids[static_cast<size_t>(r)])] = r < deg - n_remove ? 1 : 0;
  }
}

// ---- model ---------------------------------------------------------------------

namespace {

void fill_normal(num::Parameter& p, Rng& rng, double stddev) {
  for (double& v : p.value) v = rng.normal(0.0, stddev);
}

void fill_xavier(num::Parameter& p, Rng& rng) {
  check(p.shape.size() == 2, "fill_xavier: expected a matrix");
  const double stddev = std::sqrt(2.0 / static_cast<double>(p.shape[0] + p.shape[1]));
  fill_normal(p, rng, stddev);
}

}  // namespace

DenoiserModel init_denoiser(int64_t n_users, int64_t n_items, const DenoiseConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x11));
  DenoiserModel m;
  m.cfg = cfg;
  const int64_t d = cfg.dim;
  fill_normal(m.params.add("user_emb", {n_users, d}), rng, 0.1);
  fill_normal(m.params.add("item_emb", {n_items, d}), rng, 0.1);
  if (cfg.scorer == Scorer::kTransformerHistory) {
    for (const char* w : {"head.wq", "head.wk", "head.wv", "head.wo"})
      fill_xavier(m.params.add(w, {d, d}), rng);
    for (const char* b : {"head.bq", "head.bk", "head.bv", "head.bo"}) m.params.add(b, {d});
    auto& ln1g = m.params.add("head.ln1_gain", {d});
    std::fill(ln1g.value.begin(), ln1g.value.end(), 1.0);
    m.params.add("head.ln1_bias", {d});
    auto& ln2g = m.params.add("head.ln2_gain", {d});
    std::fill(ln2g.value.begin(), ln2g.value.end(), 1.0);
    m.params.add("head.ln2_bias", {d});
    fill_xavier(m.params.add("head.ff1", {d, cfg.ff_dim}), rng);
    m.params.add("head.ff1_bias", {cfg.ff_dim});
    fill_xavier(m.params.add("head.ff2", {cfg.ff_dim, d}), rng);
    m.params.add("head.ff2_bias", {d});
    fill_normal(m.params.add("head.segcls", {3, d}), rng, 0.1);
    fill_xavier(m.params.add("head.mlp1", {d, cfg.mlp_hidden}), rng);
    m.params.add("head.mlp1_bias", {cfg.mlp_hidden});
    fill_xavier(m.params.add("head.mlp2", {cfg.mlp_hidden, 1}), rng);
    m.params.add("head.mlp2_bias", {1});
  }
  return m;
}

namespace {
template <typename PS>
ModelLeaves make_leaves(Tape& t, PS& ps) {
  auto get = [&](const char* name) -> Tensor {
    if constexpr (std::is_const_v<PS>)
      return ps.has(name) ? t.constant(ps.at(name).shape, ps.at(name).value) : Tensor();
    else
      return ps.has(name) ? t.leaf(ps.at(name)) : Tensor();
  };
  ModelLeaves l;
  l.user_emb = get("user_emb");
  l.item_emb = get("item_emb");
  l.wq = get("head.wq");
  l.bq = get("head.bq");
  l.wk = get("head.wk");
  l.bk = get("head.bk");
  l.wv = get("head.wv");
  l.bv = get("head.bv");
  l.wo = get("head.wo");
  l.bo = get("head.bo");
  l.ln1_g = get("head.ln1_gain");
  l.ln1_b = get("head.ln1_bias");
  l.ln2_g = get("head.ln2_gain");
  l.ln2_b = get("head.ln2_bias");
  l.ff1 = get("head.ff1");
  l.ff1_b = get("head.ff1_bias");
  l.ff2 = get("head.ff2");
  l.ff2_b = get("head.ff2_bias");
  l.segcls = get("head.segcls");
  l.mlp1 = get("head.mlp1");
  l.mlp1_b = get("head.mlp1_bias");
  l.mlp2 = get("head.mlp2");
  l.mlp2_b = get("head.mlp2_bias");
  return l;
}
}  // namespace

ModelLeaves ModelLeaves::trainable(Tape& t, num::ParamSet& ps) { return make_leaves(t, ps); }
ModelLeaves ModelLeaves::frozen(Tape& t, const num::ParamSet& ps) { return make_leaves(t, ps); }

namespace {

// Token sequence [hist(u) | hist(v) | CLS] with segment embeddings and no
// positional encoding; padding is excluded from attention keys.
Tensor transformer_logits(Tape& t, const ModelLeaves& l,
                          std::span<const std::pair<int32_t, int32_t>> pairs,
                          const std::vector<HistorySequence>& hist, const DenoiseConfig& cfg,
                          bool training, Rng& rng) {
  check(l.wq.valid(), "transformer scorer: model has no encoder parameters");
  const int64_t B = static_cast<int64_t>(pairs.size());
  const int64_t L = cfg.history_len;
  const int64_t S = 2 * L + 1;
  const int64_t H = cfg.heads;

  std::vector<int64_t> item_idx(static_cast<size_t>(B * S), -1);
  std::vector<int64_t> seg_idx(static_cast<size_t>(B * S), 2);
  auto key_valid = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B * S), 0);
  for (int64_t b = 0; b < B; ++b) {
    const auto& hu = hist[static_cast<size_t>(pairs[static_cast<size_t>(b)].first)];
    const auto& hv = hist[static_cast<size_t>(pairs[static_cast<size_t>(b)].second)];
    for (int64_t p = 0; p < L; ++p) {
      const size_t at_u = static_cast<size_t>(b * S + p);
      item_idx[at_u] = hu.items[static_cast<size_t>(p)];
      seg_idx[at_u] = 0;
      (*key_valid)[at_u] = hu.items[static_cast<size_t>(p)] >= 0;
      const size_t at_v = static_cast<size_t>(b * S + L + p);
      item_idx[at_v] = hv.items[static_cast<size_t>(p)];
      seg_idx[at_v] = 1;
      (*key_valid)[at_v] = hv.items[static_cast<size_t>(p)] >= 0;
    }
    (*key_valid)[static_cast<size_t>(b * S + 2 * L)] = 1;  // CLS
  }

  Tensor tokens =
      num::add(num::gather_rows(l.item_emb, item_idx), num::gather_rows(l.segcls, seg_idx));

  auto expanded = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B * H * S * S));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t hq = 0; hq < H * S; ++hq)
      std::copy_n(key_valid->data() + b * S, S, expanded->data() + (b * H * S + hq) * S);

  Tensor q = num::add_bias(num::matmul(tokens, l.wq), l.bq);
  Tensor k = num::add_bias(num::matmul(tokens, l.wk), l.bk);
  Tensor v = num::add_bias(num::matmul(tokens, l.wv), l.bv);
  Tensor probs = num::softmax_rows(
      num::masked_fill(num::attn_scores(q, k, B, S, H), expanded, -1e30));
  probs = num::dropout(probs, 1.0 - cfg.dropout, training, rng);
  Tensor attn_out = num::add_bias(num::matmul(num::attn_context(probs, v, B, S, H), l.wo), l.bo);
  Tensor x = num::layer_norm(num::add(tokens, attn_out), l.ln1_g, l.ln1_b);
  Tensor ff = num::add_bias(
      num::matmul(num::relu(num::add_bias(num::matmul(x, l.ff1), l.ff1_b)), l.ff2), l.ff2_b);
  ff = num::dropout(ff, 1.0 - cfg.dropout, training, rng);
  x = num::layer_norm(num::add(x, ff), l.ln2_g, l.ln2_b);

  std::vector<int64_t> cls_idx(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) cls_idx[static_cast<size_t>(b)] = b * S + 2 * L;
  Tensor cls = num::gather_rows(x, cls_idx);
  Tensor hdn = num::relu(num::add_bias(num::matmul(cls, l.mlp1), l.mlp1_b));
  Tensor logits = num::add_bias(num::matmul(hdn, l.mlp2), l.mlp2_b);
  return num::reshape(logits, {B});
}

Tensor pooled_history_logits(Tape& t, const ModelLeaves& l,
                             std::span<const std::pair<int32_t, int32_t>> pairs,
                             const std::vector<HistorySequence>& hist, const DenoiseConfig& cfg) {
  const int64_t B = static_cast<int64_t>(pairs.size());
  const int64_t L = cfg.history_len;
  auto one_side = [&](bool second) {
    std::vector<int64_t> idx(static_cast<size_t>(B * L), -1);
    auto valid = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B * L), 0);
    for (int64_t b = 0; b < B; ++b) {
      const auto& pr = pairs[static_cast<size_t>(b)];
      const auto& h = hist[static_cast<size_t>(second ? pr.second : pr.first)];
      for (int64_t p = 0; p < L; ++p) {
        idx[static_cast<size_t>(b * L + p)] = h.items[static_cast<size_t>(p)];
        (*valid)[static_cast<size_t>(b * L + p)] = h.items[static_cast<size_t>(p)] >= 0;
      }
    }
    return num::segment_masked_mean(num::gather_rows(l.item_emb, idx), valid, B, L);
  };
  return num::rowwise_dot(one_side(false), one_side(true));
}

Tensor user_layer_logits(const Tensor& layer,
                         std::span<const std::pair<int32_t, int32_t>> pairs) {
  std::vector<int64_t> us, vs;
  us.reserve(pairs.size());
  vs.reserve(pairs.size());
  for (const auto& [u, v] : pairs) {
    us.push_back(u);
    vs.push_back(v);
  }
  return num::rowwise_dot(num::gather_rows(layer, us), num::gather_rows(layer, vs));
}

}  // namespace

Tensor relation_confidence_batch(Tape& tape, const ModelLeaves& leaves,
                                 std::span<const std::pair<int32_t, int32_t>> pairs,
                                 const std::vector<HistorySequence>& histories,
                                 const DenoiseConfig& cfg, bool training, Rng& rng,
                                 const gcn::LayerStack* stack) {
  check(!pairs.empty(), "relation_confidence_batch: empty pair list");
  switch (cfg.scorer) {
    case Scorer::kTransformerHistory:
      return transformer_logits(tape, leaves, pairs, histories, cfg, training, rng);
    case Scorer::kItemMeanPool:
      return pooled_history_logits(tape, leaves, pairs, histories, cfg);
    case Scorer::kUserLayer0:
      return user_layer_logits(leaves.user_emb, pairs);
    case Scorer::kUserLayer1:
      check(stack != nullptr && stack->user_layers.size() >= 2,
            "user-layer-1 scorer needs a propagated layer stack");
      return user_layer_logits(stack->user_layers[1], pairs);
  }
  fail("relation_confidence_batch: bad scorer");
}

double relation_confidence(const DenoiserModel& model, const std::vector<HistorySequence>& hist,
                           int32_t u, int32_t v, const gcn::LayerStack* stack) {
  Tape tape;
  ModelLeaves leaves = ModelLeaves::frozen(tape, model.params);
  Rng rng(0);
  const std::pair<int32_t, int32_t> pair{u, v};
  Tensor logits =
      relation_confidence_batch(tape, leaves, {&pair, 1}, hist, model.cfg, false, rng, stack);
  return logits.values()[0];
}

Tensor bce_link_loss(Tape& tape, const std::optional<Tensor>& logits_pos,
                     const std::optional<Tensor>& logits_neg) {
  Tensor total = tape.constant_scalar(0.0);
  if (logits_pos.has_value())
    total = num::add(total, num::sum_all(num::softplus(num::scale(*logits_pos, -1.0))));
  if (logits_neg.has_value())
    total = num::add(total, num::sum_all(num::softplus(*logits_neg)));
  return total;
}

Tensor joint_loss(const Tensor& bce, const Tensor& bpr, double alpha) {
  check(alpha >= 0.0 && alpha <= 1.0, "joint_loss: alpha outside [0,1]");
  return num::add(num::scale(bce, alpha), num::scale(bpr, 1.0 - alpha));
}

// ---- scoring and training --------------------------------------------------------

std::vector<double> score_all_edges(const DenoiserModel& model, const Dataset& hist_data,
                                    const SocialGraph& g) {
  check(hist_data.n_users == g.n_users(), "score_all_edges: user count mismatch");
  const auto histories = build_all_histories(hist_data, model.cfg.history_len);
  const auto edges = g.adj.to_pairs();
  std::vector<double> out(edges.size(), 0.0);
  const bool needs_stack = model.cfg.scorer == Scorer::kUserLayer1;
  const Csr active = g.active_csr();
  Rng rng(0);  // unused: scoring runs without dropout
  const int64_t chunk = 2048;
  for (int64_t begin = 0; begin < static_cast<int64_t>(edges.size()); begin += chunk) {
    const int64_t n = std::min<int64_t>(chunk, static_cast<int64_t>(edges.size()) - begin);
    Tape tape;
    ModelLeaves leaves = ModelLeaves::frozen(tape, model.params);
    gcn::LayerStack stack;
    if (needs_stack)
      stack = gcn::gcn_forward(tape, leaves.user_emb, leaves.item_emb, active,
                               hist_data.user_to_items, hist_data.item_to_users, model.cfg.hops);
    Tensor logits = relation_confidence_batch(
        tape, leaves, {edges.data() + begin, static_cast<size_t>(n)}, histories, model.cfg,
        false, rng, needs_stack ? &stack : nullptr);
    std::copy_n(logits.values().begin(), n, out.begin() + begin);
  }
  return out;
}

namespace {

PeriodStat retention_stat(const SocialGraph& g, int period, int64_t epoch) {
  int64_t obs = 0, obs_active = 0, fake = 0, fake_active = 0;
  for (size_t e = 0; e < g.active.size(); ++e) {
    if (g.provenance[e] == SocialGraph::kFake) {
      ++fake;
      fake_active += g.active[e];
    } else {
      ++obs;
      obs_active += g.active[e];
    }
  }
  PeriodStat st;
  st.period = period;
  st.epoch = epoch;
  st.observed_retention = obs > 0 ? static_cast<double>(obs_active) / static_cast<double>(obs) : 1.0;
  st.fake_retention = fake > 0 ? static_cast<double>(fake_active) / static_cast<double>(fake) : 1.0;
  const int64_t total = obs + fake;
  st.overall_removal =
      total > 0 ? 1.0 - static_cast<double>(obs_active + fake_active) / static_cast<double>(total)
                : 0.0;
  return st;
}

}  // namespace

TrainResult train_denoiser(const Dataset& d, const SocialGraph& g_in, const DenoiseConfig& cfg,
                           std::ostream* log) {
  cfg.validate();
  check(d.n_users == g_in.n_users(), "train_denoiser: dataset has ", d.n_users,
        " users, graph has ", g_in.n_users());

  // Training-time view of the interaction data (histories, adjacency, batches).
  Dataset view_storage;
  const Dataset* view = &d;
  if (cfg.interaction_fraction < 1.0) {
    view_storage = data::subsample_train(d, cfg.interaction_fraction, derive_seed(cfg.seed, 0x7e));
    view = &view_storage;
  }
  const auto histories = build_all_histories(*view, cfg.history_len);

  TrainResult res;
  res.model = init_denoiser(d.n_users, d.n_items, cfg);
  SocialGraph g = g_in;
  g.set_all_active();
  Csr active = g.active_csr();

  num::Adam opt({.lr = cfg.lr});
  auto params = res.model.params.all();
  Rng rng(derive_seed(cfg.seed, 0x22));
  std::vector<data::Interaction> pairs = view->train;
  const int64_t n_items = d.n_items, n_users = d.n_users;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(pairs);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t begin = 0; begin < pairs.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(pairs.size(), begin + static_cast<size_t>(cfg.batch_size));
      const int64_t bn = static_cast<int64_t>(end - begin);

      res.model.params.zero_grad();
      Tape tape;
      ModelLeaves leaves = ModelLeaves::trainable(tape, res.model.params);
      gcn::LayerStack stack =
          gcn::gcn_forward(tape, leaves.user_emb, leaves.item_emb, active, view->user_to_items,
                           view->item_to_users, cfg.hops);

      std::vector<gcn::Triple> triples;
      std::vector<std::pair<int32_t, int32_t>> pos_pairs, neg_pairs;
      triples.reserve(static_cast<size_t>(bn));
      for (size_t p = begin; p < end; ++p) {
        const int32_t u = pairs[p].user;
        int32_t j;
        do {
          j = static_cast<int32_t>(rng.index(n_items));
        } while (view->user_has_train_item(u, j));
        triples.push_back({u, pairs[p].item, j});

        const int64_t act_deg = active.degree(u);
        if (act_deg == 0) continue;  // no active friends: skip the relation terms
        const int32_t v = active.row(u)[static_cast<size_t>(rng.index(act_deg))];
        int32_t w = -1;
        for (int tries = 0; tries < 200; ++tries) {
          const int32_t cand = static_cast<int32_t>(rng.index(n_users));
          if (cand != u && !g.has_edge(u, cand)) {
            w = cand;
            break;
          }
        }
        if (w < 0) continue;
        pos_pairs.emplace_back(u, v);
        neg_pairs.emplace_back(u, w);
      }

      Tensor bpr = cfg.alpha < 1.0 ? gcn::bpr_loss(tape, stack, triples)
                                   : tape.constant_scalar(0.0);
      Tensor bce = tape.constant_scalar(0.0);
      if (cfg.alpha > 0.0 && !pos_pairs.empty()) {
        // one encoder pass over positives and negatives together
        std::vector<std::pair<int32_t, int32_t>> all_pairs = pos_pairs;
        all_pairs.insert(all_pairs.end(), neg_pairs.begin(), neg_pairs.end());
        Tensor logits = relation_confidence_batch(tape, leaves, all_pairs, histories, cfg, true,
                                                  rng, &stack);
        const int64_t n_pos = static_cast<int64_t>(pos_pairs.size());
        const int64_t n_all = static_cast<int64_t>(all_pairs.size());
        Tensor cols = num::reshape(logits, {n_all, 1});
        std::vector<int64_t> pidx(static_cast<size_t>(n_pos)), nidx(static_cast<size_t>(n_all - n_pos));
        for (int64_t i = 0; i < n_pos; ++i) pidx[static_cast<size_t>(i)] = i;
        for (int64_t i = n_pos; i < n_all; ++i) nidx[static_cast<size_t>(i - n_pos)] = i;
        Tensor lp = num::reshape(num::gather_rows(cols, pidx), {n_pos});
        Tensor ln = num::reshape(num::gather_rows(cols, nidx), {n_all - n_pos});
        bce = bce_link_loss(tape, lp, ln);
      }
      Tensor loss = num::scale(joint_loss(bce, bpr, cfg.alpha), 1.0 / static_cast<double>(bn));
      const double lv = loss.scalar();
      check(std::isfinite(lv), "train_denoiser: non-finite loss at epoch ", epoch);
      tape.backward(loss);
      opt.step(params);
      loss_sum += lv;
      ++n_batches;
    }
    res.epoch_loss.push_back(n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0);

    if (cfg.self_correcting && epoch % cfg.curriculum_period == 0) {
      const int k = static_cast<int>(epoch / cfg.curriculum_period);
      const std::vector<double> raw = score_all_edges(res.model, *view, g);
      smooth_scores(res.store, raw, cfg.beta, k);
      curriculum_update(g, res.store, cfg);
      active = g.active_csr();
      res.curriculum_log.push_back(retention_stat(g, k, epoch));
      if (log) {
        const auto& st = res.curriculum_log.back();
        *log << "epoch " << epoch << " loss " << res.epoch_loss.back() << " removal "
             << st.overall_removal << " retention obs " << st.observed_retention << " fake "
             << st.fake_retention << "\n";
      }
    } else if (log && (epoch % 10 == 0 || epoch == cfg.epochs)) {
      *log << "epoch " << epoch << " loss " << res.epoch_loss.back() << "\n";
    }
  }
  return res;
}

ConfidenceStore rescore_store(const DenoiserModel& model, const Dataset& full_data,
                              const SocialGraph& g, ConfidenceStore store) {
  if (model.cfg.interaction_fraction >= 1.0 && !store.empty()) return store;
  const std::vector<double> raw = score_all_edges(model, full_data, g);
  smooth_scores(store, raw, model.cfg.beta, store.empty() ? 1 : store.last_period() + 1);
  return store;
}

SocialGraph denoise_graph(const SocialGraph& g, const ConfidenceStore& store,
                          const DenoiseConfig& cfg, DenoiseSummary* summary) {
  check(!store.empty(), "denoise_graph: confidence store is empty; score the graph first");
  SocialGraph out = g;
  out.set_all_active();
  curriculum_update(out, store, cfg);
  if (summary != nullptr) {
    const PeriodStat st = retention_stat(out, 0, 0);
    summary->edges_total = out.n_edges();
    summary->edges_retained = out.n_active();
    summary->overall_removal_ratio = st.overall_removal;
    summary->observed_retention = st.observed_retention;
    summary->fake_retention = st.fake_retention;
    summary->has_fakes =
        std::any_of(out.provenance.begin(), out.provenance.end(),
                    [](uint8_t p) { return p == SocialGraph::kFake; });
  }
  return out;
}

void export_denoised_tsv(const std::filesystem::path& path, const SocialGraph& denoised,
                         const ConfidenceStore& store) {
  check(static_cast<int64_t>(store.smoothed.size()) == denoised.n_edges(),
        "export_denoised_tsv: store does not cover the graph");
  std::ofstream out(path);
  check(out.good(), "cannot open ", path.string());
  char buf[96];
  for (int64_t u = 0; u < denoised.n_users(); ++u) {
    for (int64_t e = denoised.adj.offsets[u]; e < denoised.adj.offsets[u + 1]; ++e) {
      if (!denoised.active[static_cast<size_t>(e)]) continue;
      std::snprintf(buf, sizeof(buf), "%lld\t%d\t%.6f\n", static_cast<long long>(u),
                    denoised.adj.indices[static_cast<size_t>(e)],
                    store.smoothed[static_cast<size_t>(e)]);
      out << buf;
    }
  }
}

SocialGraph load_denoised_tsv(const std::filesystem::path& path, int64_t n_users) {
  std::ifstream in(path);
  check(in.good(), "cannot open ", path.string());
  std::vector<std::pair<int32_t, int32_t>> edges;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    int32_t u, v;
    double score;
    check(std::sscanf(line.c_str(), "%d\t%d\t%lf", &u, &v, &score) == 3, path.string(), ":",
          lineno, ": expected 'u<TAB>v<TAB>score'");
    edges.emplace_back(u, v);
  }
  return SocialGraph::from_directed_pairs(n_users, std::move(edges));
}

data::SocialGraph rule_based_denoise(const Dataset& d, const SocialGraph& g, double ratio) {
  check(ratio >= 0.0 && ratio < 1.0, "rule_based_denoise: ratio ", ratio, " outside [0,1)");
  SocialGraph out = g;
  out.set_all_active();
  if (ratio == 0.0) return out;
  for (int32_t u = 0; u < g.n_users(); ++u) {
    const int64_t begin = g.adj.offsets[u], end = g.adj.offsets[u + 1];
    const int64_t deg = end - begin;
    if (deg == 0) continue;
    const int64_t n_remove = static_cast<int64_t>(std::floor(ratio * static_cast<double>(deg)));
    if (n_remove == 0) continue;
    std::vector<std::pair<int64_t, int64_t>> ranked;  // (co-count, edge id)
    ranked.reserve(static_cast<size_t>(deg));
    const auto u_items = d.user_to_items.row(u);
    for (int64_t e = begin; e < end; ++e) {
      const int32_t v = g.adj.indices[static_cast<size_t>(e)];
      const auto v_items = d.user_to_items.row(v);
      int64_t common = 0;
      size_t i = 0, j = 0;
      while (i < u_items.size() && j < v_items.size()) {
        if (u_items[i] == v_items[j]) {
          ++common;
          ++i;
          ++j;
        } else if (u_items[i] < v_items[j])
          ++i;
        else
          ++j;
      }
      ranked.emplace_back(common, e);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int64_t r = deg - n_remove; r < deg; ++r)
      out.active[static_cast<size_t>(ranked[static_cast<size_t>(r)].second)] = 0;
  }
  return out;
}

double overall_removal_at(const SocialGraph& g, const DenoiseConfig& cfg) {
  int64_t removed = 0;
  for (int32_t u = 0; u < g.n_users(); ++u) {
    const int64_t deg = g.adj.degree(u);
    if (deg == 0) continue;
    removed += static_cast<int64_t>(std::floor(eta_for(cfg, deg) * static_cast<double>(deg)));
  }
  return g.n_edges() > 0 ? static_cast<double>(removed) / static_cast<double>(g.n_edges()) : 0.0;
}

double calibrate_base_ratio(const SocialGraph& g, const DenoiseConfig& cfg, double target) {
  check(target >= 0.0 && target < 1.0, "calibrate_base_ratio: target outside [0,1)");
  if (target == 0.0) return 0.0;
  DenoiseConfig probe = cfg;
  probe.adaptive = true;
  probe.base_ratio = 1e-6;
  double lo = 0.0, hi = 1e-6;
  while (overall_removal_at(g, probe) < target && hi < 1e3) {
    lo = hi;
    hi *= 2.0;
    probe.base_ratio = hi;
  }
  check(overall_removal_at(g, probe) >= target, "calibrate_base_ratio: target removal ", target,
        " unreachable (max achievable ", overall_removal_at(g, probe), ")");
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    probe.base_ratio = mid;
    if (overall_removal_at(g, probe) >= target)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

}  // namespace gdmsr::denoise
