#pragma once

#include <span>
#include <vector>

#include "gdmsr/csr.hpp"
#include "gdmsr/tensor.hpp"

namespace gdmsr::gcn {

// Per-hop user/item representations plus their layer averages.
struct LayerStack {
  std::vector<num::Tensor> user_layers;  // hops + 1 entries
  std::vector<num::Tensor> item_layers;
  num::Tensor user_avg;
  num::Tensor item_avg;
};

// K-hop propagation with self-loop mean aggregation: each hop averages a
// node's previous representation with its neighbors'. The user side combines
// the social branch and the interaction branch by arithmetic mean.
// The CSRs must outlive the tape.
LayerStack gcn_forward(num::Tape& tape, const num::Tensor& user_emb, const num::Tensor& item_emb,
                       const Csr& social_active, const Csr& user_to_items,
                       const Csr& item_to_users, int hops);

struct Triple {
  int32_t user;
  int32_t pos_item;
  int32_t neg_item;
};

// Pairwise ranking loss: sum over triples of -ln sigmoid(s_pos - s_neg).
// An empty triple list yields the scalar 0.
num::Tensor bpr_loss(num::Tape& tape, const LayerStack& stack, std::span<const Triple> triples);

// Non-tape product of the averaged stacks, for evaluation and caching.
struct DenseStack {
  DenseMatrix user_avg;
  DenseMatrix item_avg;
};

DenseStack gcn_forward_dense(const DenseMatrix& user_emb, const DenseMatrix& item_emb,
                             const Csr& social_active, const Csr& user_to_items,
                             const Csr& item_to_users, int hops);

double predict_score(const DenseStack& stack, int32_t u, int32_t i);

}  // namespace gdmsr::gcn
