#pragma once

#include <ostream>

#include "gdmsr/dataset.hpp"
#include "gdmsr/gcn.hpp"
#include "gdmsr/tensor.hpp"

namespace gdmsr::rec {

struct RecConfig {
  int dim = 8;
  int hops = 2;
  int epochs = 200;
  int batch_size = 1024;
  double lr = 0.001;
  double init_std = 0.01;
  uint64_t seed = 0;
  int eval_every = 5;       // epochs between validation evaluations
  int patience = 20;        // evaluations without improvement before stopping
  int eval_negatives = 100;

  void validate() const;
};

struct TrainedRecommender {
  num::ParamSet params;        // user_emb, item_emb
  gcn::DenseStack stack;       // cached averaged layers of the final parameters
  Csr social_active;           // snapshot of the graph it was trained on
  RecConfig cfg;
  double best_valid_recall1 = 0.0;
  int64_t stopped_after_epoch = 0;
};

// Mini-batch pairwise ranking training over the active social graph; the
// graph is never mutated. Early stopping tracks validation recall@1 when a
// validation split exists.
TrainedRecommender train_recommender(const data::Dataset& d, const data::SocialGraph& g,
                                     const RecConfig& cfg, std::ostream* log = nullptr);

std::vector<double> score_all(const TrainedRecommender& m, int32_t u,
                              std::span<const int32_t> candidates);

}  // namespace gdmsr::rec
