#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gdmsr/common.hpp"
#include "gdmsr/csr.hpp"
#include "gdmsr/rng.hpp"

namespace gdmsr::num {

using Shape = std::vector<int64_t>;

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// A named trainable array plus its gradient accumulator.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)),
        shape(std::move(s)),
        value(static_cast<size_t>(shape_size(shape)), 0.0),
        grad(value.size(), 0.0) {}

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Insertion-ordered parameter collection with stable references.
class ParamSet {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t size() const { return params_.size(); }
  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, Parameter*> by_name_;
};

class Tape;

// Lightweight handle to a node on a tape. Valid only while the tape lives.
class Tensor {
 public:
  Tensor() = default;
  const Shape& shape() const;
  int64_t size() const;
  const std::vector<double>& values() const;
  double scalar() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  DenseMatrix to_matrix() const;  // requires a 2-D shape

 private:
  friend class Tape;
  friend struct OpAccess;
  Tensor(Tape* t, int32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

// Records forward ops and their backward rules; single-threaded by contract.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Parameter& p);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant_scalar(double v) { return constant({1}, {v}); }

  // Runs the reverse pass from a scalar loss, accumulating into
  // Parameter::grad for every leaf the loss depends on.
  void backward(const Tensor& loss);

  // Gradient buffer of an intermediate node after backward (tests only).
  const std::vector<double>& grad_of(const Tensor& t) const;

  size_t n_nodes() const { return nodes_.size(); }

 private:
  friend class Tensor;
  friend struct OpAccess;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&)> backward_fn;
  };

  Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  std::vector<double>& grad_buf(int32_t id);
  Tensor make_node(Shape shape, std::vector<double> value, bool requires_grad);

  std::deque<Node> nodes_;
};

// ---- Forward primitives -------------------------------------------------
// Every primitive checks shapes (naming the op on mismatch) and registers a
// backward rule when any differentiable input requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [n,d] + [d]
Tensor matmul(const Tensor& a, const Tensor& b);       // [n,k] x [k,m]

// Row gather; index -1 yields a zero row and no gradient flow.
Tensor gather_rows(const Tensor& table, std::vector<int64_t> idx);

// out[r] = (self[r] + sum_{c in adj.row(r)} nbr[c]) / (1 + degree(r)).
// `adj` is captured by pointer and must outlive the tape.
Tensor neighbor_mean(const Tensor& self_rows, const Tensor& neighbor_rows, const Csr& adj);

Tensor average(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor mean_rows(const Tensor& x);  // [n,d] -> [d]
Tensor sum_all(const Tensor& x);    // -> scalar

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), stable

// Softmax over the trailing dimension.
Tensor softmax_rows(const Tensor& x);

// keep[i] == 0 replaces element i with `fill`; gradient is blocked there.
Tensor masked_fill(const Tensor& x, std::shared_ptr<const std::vector<uint8_t>> keep, double fill);

// Normalization over the trailing dimension with learnable gain/bias of [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Inverted dropout. keep_prob == 1 or !training returns x itself.
Tensor dropout(const Tensor& x, double keep_prob, bool training, Rng& rng);

// Multi-head attention contractions over flattened [batch*seq, dim] tensors.
// Feature f of head h is dim index h*(dim/heads) + f.
Tensor attn_scores(const Tensor& q, const Tensor& k, int64_t batch, int64_t seq, int64_t heads);
Tensor attn_context(const Tensor& probs, const Tensor& v, int64_t batch, int64_t seq,
                    int64_t heads);

Tensor rowwise_dot(const Tensor& a, const Tensor& b);  // [n,d] x [n,d] -> [n]

// Mean over valid positions of each segment: [batch*seq, d] -> [batch, d].
// Every segment must contain at least one valid position.
Tensor segment_masked_mean(const Tensor& x, std::shared_ptr<const std::vector<uint8_t>> valid,
                           int64_t batch, int64_t seq);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace gdmsr::num
