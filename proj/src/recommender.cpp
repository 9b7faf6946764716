#include "gdmsr/recommender.hpp"

#include <algorithm>
#include <cmath>

#include "gdmsr/adam.hpp"
#include "gdmsr/ranking.hpp"
#include "gdmsr/rng.hpp"

namespace gdmsr::rec {

using data::Dataset;
using data::SocialGraph;
using num::Tape;
using num::Tensor;

void RecConfig::validate() const {
  check(dim >= 1 && hops >= 0 && epochs >= 0 && batch_size >= 1, "rec config: bad sizes");
  check(lr > 0.0 && init_std > 0.0, "rec config: lr and init_std must be positive");
  check(eval_every >= 1 && patience >= 1 && eval_negatives >= 1, "rec config: bad eval settings");
}

TrainedRecommender train_recommender(const Dataset& d, const SocialGraph& g, const RecConfig& cfg,
                                     std::ostream* log) {
  cfg.validate();
  check(d.n_users == g.n_users(), "train_recommender: dataset/graph user mismatch");

  TrainedRecommender m;
  m.cfg = cfg;
  m.social_active = g.active_csr();

  Rng init_rng(derive_seed(cfg.seed, 0x31));
  auto& e1 = m.params.add("user_emb", {d.n_users, cfg.dim});
  auto& e2 = m.params.add("item_emb", {d.n_items, cfg.dim});
  for (double& v : e1.value) v = init_rng.normal(0.0, cfg.init_std);
  for (double& v : e2.value) v = init_rng.normal(0.0, cfg.init_std);

  num::Adam opt({.lr = cfg.lr});
  auto params = m.params.all();
  Rng rng(derive_seed(cfg.seed, 0x32));
  const uint64_t eval_seed = derive_seed(cfg.seed, 0x33);
  std::vector<data::Interaction> pairs = d.train;

  std::vector<double> best_e1 = e1.value, best_e2 = e2.value;
  double best_metric = -1.0;
  int evals_since_best = 0;
  const bool can_eval = !d.valid.empty();
  int64_t last_epoch = 0;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    last_epoch = epoch;
    rng.shuffle(pairs);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t begin = 0; begin < pairs.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(pairs.size(), begin + static_cast<size_t>(cfg.batch_size));
      m.params.zero_grad();
      Tape tape;
      Tensor e1t = tape.leaf(e1);
      Tensor e2t = tape.leaf(e2);
      gcn::LayerStack stack = gcn::gcn_forward(tape, e1t, e2t, m.social_active, d.user_to_items,
                                               d.item_to_users, cfg.hops);
      std::vector<gcn::Triple> triples;
      triples.reserve(end - begin);
      for (size_t p = begin; p < end; ++p) {
        const int32_t u = pairs[p].user;
        int32_t j;
        do {
          j = static_cast<int32_t>(rng.index(d.n_items));
        } while (d.user_has_train_item(u, j));
        triples.push_back({u, pairs[p].item, j});
      }
      Tensor loss = num::scale(gcn::bpr_loss(tape, stack, triples),
                               1.0 / static_cast<double>(end - begin));
      const double lv = loss.scalar();
      check(std::isfinite(lv), "train_recommender: non-finite loss at epoch ", epoch);
      tape.backward(loss);
      opt.step(params);
      loss_sum += lv;
      ++n_batches;
    }

    if (can_eval && epoch % cfg.eval_every == 0) {
      gcn::DenseStack stack = gcn::gcn_forward_dense(
          {e1.shape[0], e1.shape[1], e1.value}, {e2.shape[0], e2.shape[1], e2.value},
          m.social_active, d.user_to_items, d.item_to_users, cfg.hops);
      const auto rep =
          eval::evaluate_ranking(stack, d, eval::SplitSel::kValid, cfg.eval_negatives, eval_seed);
      if (rep.recall1 > best_metric) {
        best_metric = rep.recall1;
        best_e1 = e1.value;
        best_e2 = e2.value;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
      if (log)
        *log << "epoch " << epoch << " loss " << loss_sum / static_cast<double>(n_batches)
             << " valid recall@1 " << rep.recall1 << "\n";
      if (evals_since_best >= cfg.patience) break;
    }
  }

  if (best_metric >= 0.0) {
    e1.value = best_e1;
    e2.value = best_e2;
    m.best_valid_recall1 = best_metric;
  }
  m.stopped_after_epoch = last_epoch;
  m.stack = gcn::gcn_forward_dense({e1.shape[0], e1.shape[1], e1.value},
                                   {e2.shape[0], e2.shape[1], e2.value}, m.social_active,
                                   d.user_to_items, d.item_to_users, cfg.hops);
  return m;
}

std::vector<double> score_all(const TrainedRecommender& m, int32_t u,
                              std::span<const int32_t> candidates) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (int32_t i : candidates) out.push_back(gcn::predict_score(m.stack, u, i));
  return out;
}

}  // namespace gdmsr::rec
