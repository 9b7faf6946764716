#include "gdmsr/gcn.hpp"

namespace gdmsr::gcn {

using num::Tape;
using num::Tensor;

LayerStack gcn_forward(Tape& tape, const Tensor& user_emb, const Tensor& item_emb,
                       const Csr& social_active, const Csr& user_to_items,
                       const Csr& item_to_users, int hops) {
  check(hops >= 0, "gcn_forward: hops must be >= 0");
  const int64_t n_users = user_emb.shape()[0];
  const int64_t n_items = item_emb.shape()[0];
  check(social_active.n_rows == n_users && social_active.n_cols == n_users,
        "gcn_forward: social adjacency is ", social_active.n_rows, "x", social_active.n_cols,
        " for ", n_users, " users");
  check(user_to_items.n_rows == n_users && user_to_items.n_cols == n_items &&
            item_to_users.n_rows == n_items && item_to_users.n_cols == n_users,
        "gcn_forward: interaction adjacency does not match embedding tables");

  LayerStack s;
  s.user_layers.push_back(user_emb);
  s.item_layers.push_back(item_emb);
  for (int k = 1; k <= hops; ++k) {
    const Tensor u_prev = s.user_layers.back();  // by value: push_back below reallocates
    const Tensor i_prev = s.item_layers.back();
    Tensor social_branch = num::neighbor_mean(u_prev, u_prev, social_active);
    Tensor pref_branch = num::neighbor_mean(u_prev, i_prev, user_to_items);
    s.user_layers.push_back(num::average({social_branch, pref_branch}));
    s.item_layers.push_back(num::neighbor_mean(i_prev, u_prev, item_to_users));
  }
  s.user_avg = num::average(s.user_layers);
  s.item_avg = num::average(s.item_layers);
  return s;
}

Tensor bpr_loss(Tape& tape, const LayerStack& stack, std::span<const Triple> triples) {
  if (triples.empty()) return tape.constant_scalar(0.0);
  std::vector<int64_t> users, pos, neg;
  users.reserve(triples.size());
  pos.reserve(triples.size());
  neg.reserve(triples.size());
  for (const Triple& t : triples) {
    users.push_back(t.user);
    pos.push_back(t.pos_item);
    neg.push_back(t.neg_item);
  }
  Tensor u_rows = num::gather_rows(stack.user_avg, users);
  Tensor s_pos = num::rowwise_dot(u_rows, num::gather_rows(stack.item_avg, pos));
  Tensor s_neg = num::rowwise_dot(u_rows, num::gather_rows(stack.item_avg, neg));
  // -ln sigmoid(x) == softplus(-x)
  return num::sum_all(num::softplus(num::sub(s_neg, s_pos)));
}

DenseStack gcn_forward_dense(const DenseMatrix& user_emb, const DenseMatrix& item_emb,
                             const Csr& social_active, const Csr& user_to_items,
                             const Csr& item_to_users, int hops) {
  Tape tape;
  Tensor e1 = tape.constant({user_emb.rows, user_emb.cols}, user_emb.v);
  Tensor e2 = tape.constant({item_emb.rows, item_emb.cols}, item_emb.v);
  LayerStack s = gcn_forward(tape, e1, e2, social_active, user_to_items, item_to_users, hops);
  return {s.user_avg.to_matrix(), s.item_avg.to_matrix()};
}

double predict_score(const DenseStack& stack, int32_t u, int32_t i) {
  check(u >= 0 && u < stack.user_avg.rows, "predict_score: user ", u, " out of range");
  check(i >= 0 && i < stack.item_avg.rows, "predict_score: item ", i, " out of range");
  return dot(stack.user_avg.row(u), stack.item_avg.row(i), stack.user_avg.cols);
}

}  // namespace gdmsr::gcn
