#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gdmsr/dataset.hpp"
#include "gdmsr/gcn.hpp"
#include "gdmsr/tensor.hpp"

namespace gdmsr::denoise {

enum class Scorer { kTransformerHistory, kUserLayer0, kUserLayer1, kItemMeanPool };

std::string scorer_name(Scorer s);
Scorer scorer_from_name(const std::string& name);

struct DenoiseConfig {
  double alpha = 0.5;           // link-loss weight in the joint objective
  double beta = 0.5;            // score smoothing across curriculum periods
  int curriculum_period = 10;   // epochs between curriculum updates
  int epsilon = 5;              // friend-count threshold below which nothing is removed
  double gamma = 1.0;           // exponent on the log-degree bucket
  double base_ratio = 0.02;     // R
  int history_len = 30;         // L
  int hops = 2;                 // K
  double lr = 0.001;
  double dropout = 0.0;         // drop probability in attention weights and FFN output
  int epochs = 200;
  int batch_size = 1024;
  int dim = 8;
  uint64_t seed = 0;
  Scorer scorer = Scorer::kTransformerHistory;
  double interaction_fraction = 1.0;  // train-time view of the interaction data
  bool adaptive = true;               // false: uniform per-user removal ratio
  double uniform_ratio = 0.1;
  bool self_correcting = true;        // periodic rescoring + curriculum updates
  int heads = 2;
  int ff_dim = 32;
  int mlp_hidden = 16;
  double eta_clamp = 0.99;

  void validate() const;
};

// Fixed-length interaction history; items sorted by descending popularity
// (ties by ascending item index), -1 marks padding.
struct HistorySequence {
  int32_t user = -1;
  std::vector<int32_t> items;
  int32_t real_len = 0;
};

HistorySequence build_history(const data::Dataset& d, int32_t u, int length);
std::vector<HistorySequence> build_all_histories(const data::Dataset& d, int length);

// Smoothed per-edge confidence, aligned with SocialGraph edge ids.
struct ConfidenceStore {
  std::vector<double> smoothed;
  std::vector<int32_t> period;  // last update; 0 = never written

  bool empty() const { return smoothed.empty(); }
  int32_t last_period() const;
};

// period k == 1 (or a never-written edge) stores raw as-is; afterwards
// smoothed := beta * previous + (1 - beta) * raw.
void smooth_scores(ConfidenceStore& store, const std::vector<double>& raw, double beta, int k);

// Per-user removal fraction from the friend count: 0 below epsilon, else
// floor(log10(count))^gamma * R, clamped below 1.
double denoise_ratio(int64_t friend_count, int epsilon, double gamma, double base_ratio,
                     double clamp = 0.99);
double eta_for(const DenoiseConfig& cfg, int64_t friend_count);

// Re-selects active edges over each user's full original out-edge list:
// ranked by smoothed score descending (ties by ascending target index), the
// bottom floor(eta_u * degree) become inactive, everything else active.
void curriculum_update(data::SocialGraph& g, const ConfidenceStore& store,
                       const DenoiseConfig& cfg);

// Trainable state: embedding tables plus (for the transformer scorer) the
// encoder, CLS/segment embeddings and the confidence MLP.
struct DenoiserModel {
  num::ParamSet params;
  DenoiseConfig cfg;
};

DenoiserModel init_denoiser(int64_t n_users, int64_t n_items, const DenoiseConfig& cfg);

// Tape handles for one forward pass over the model parameters.
struct ModelLeaves {
  num::Tensor user_emb, item_emb;
  num::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  num::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  num::Tensor ff1, ff1_b, ff2, ff2_b;
  num::Tensor segcls;
  num::Tensor mlp1, mlp1_b, mlp2, mlp2_b;

  static ModelLeaves trainable(num::Tape& t, num::ParamSet& ps);
  static ModelLeaves frozen(num::Tape& t, const num::ParamSet& ps);
};

// Batched relation confidence logits for directed pairs (u, v).
// `stack` is required by the user-layer-1 scorer and ignored otherwise.
num::Tensor relation_confidence_batch(num::Tape& tape, const ModelLeaves& leaves,
                                      std::span<const std::pair<int32_t, int32_t>> pairs,
                                      const std::vector<HistorySequence>& histories,
                                      const DenoiseConfig& cfg, bool training, Rng& rng,
                                      const gcn::LayerStack* stack = nullptr);

// Single-pair convenience over a scratch tape (no dropout).
double relation_confidence(const DenoiserModel& model, const std::vector<HistorySequence>& hist,
                           int32_t u, int32_t v, const gcn::LayerStack* stack = nullptr);

// -sum ln sigmoid(pos) - sum ln(1 - sigmoid(neg)); empty inputs give 0.
num::Tensor bce_link_loss(num::Tape& tape, const std::optional<num::Tensor>& logits_pos,
                          const std::optional<num::Tensor>& logits_neg);

// alpha * bce + (1 - alpha) * bpr.
num::Tensor joint_loss(const num::Tensor& bce, const num::Tensor& bpr, double alpha);

// Raw logits for every original edge of g (edge-id order). Histories and the
// interaction adjacency come from `hist_data`; the social side of the GCN
// (user-layer scorers only) uses g's currently active edges.
std::vector<double> score_all_edges(const DenoiserModel& model, const data::Dataset& hist_data,
                                    const data::SocialGraph& g);

struct PeriodStat {
  int period = 0;
  int64_t epoch = 0;
  double observed_retention = 1.0;
  double fake_retention = 1.0;
  double overall_removal = 0.0;
};

struct TrainResult {
  DenoiserModel model;
  ConfidenceStore store;
  std::vector<PeriodStat> curriculum_log;
  std::vector<double> epoch_loss;  // mean joint loss per epoch
};

// Joint BCE+BPR training with per-interaction negative sampling and the
// periodic self-correcting curriculum.
TrainResult train_denoiser(const data::Dataset& d, const data::SocialGraph& g,
                           const DenoiseConfig& cfg, std::ostream* log = nullptr);

// Rescores every edge with the given (typically full) dataset and smooths the
// result in as one more period. Used when training saw only a fraction of the
// interactions, or when no curriculum period ever completed.
ConfidenceStore rescore_store(const DenoiserModel& model, const data::Dataset& full_data,
                              const data::SocialGraph& g, ConfidenceStore store);

struct DenoiseSummary {
  int64_t edges_total = 0;
  int64_t edges_retained = 0;
  double overall_removal_ratio = 0.0;
  double observed_retention = 1.0;
  double fake_retention = 1.0;
  bool has_fakes = false;
};

// One application of the curriculum rule to the original edge set with final
// smoothed scores.
data::SocialGraph denoise_graph(const data::SocialGraph& g, const ConfidenceStore& store,
                                const DenoiseConfig& cfg, DenoiseSummary* summary = nullptr);

// Retained directed edges as `u<TAB>v<TAB>score` lines.
void export_denoised_tsv(const std::filesystem::path& path, const data::SocialGraph& denoised,
                         const ConfidenceStore& store);
data::SocialGraph load_denoised_tsv(const std::filesystem::path& path, int64_t n_users);

// Co-interaction-count baseline: per user, drop the bottom floor(ratio * deg)
// friends ranked by shared train items (ties by ascending index).
data::SocialGraph rule_based_denoise(const data::Dataset& d, const data::SocialGraph& g,
                                     double ratio);

// Smallest R whose overall removal ratio reaches `target` (degrees only; the
// removal count per user does not depend on scores).
double calibrate_base_ratio(const data::SocialGraph& g, const DenoiseConfig& cfg, double target);
double overall_removal_at(const data::SocialGraph& g, const DenoiseConfig& cfg);

}  // namespace gdmsr::denoise
