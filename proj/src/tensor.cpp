#include "gdmsr/tensor.hpp"

#include <cmath>
#include <numeric>

namespace gdmsr::num {

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---- ParamSet ------------------------------------------------------------

Parameter& ParamSet::add(const std::string& name, Shape shape) {
  check(by_name_.count(name) == 0, "ParamSet: duplicate parameter '", name, "'");
  params_.emplace_back(name, std::move(shape));
  by_name_[name] = &params_.back();
  return params_.back();
}

Parameter& ParamSet::at(const std::string& name) {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "ParamSet: unknown parameter '", name, "'");
  return *it->second;
}

const Parameter& ParamSet::at(const std::string& name) const {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "ParamSet: unknown parameter '", name, "'");
  return *it->second;
}

std::vector<Parameter*> ParamSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- Tensor --------------------------------------------------------------

struct OpAccess {
  static Tape* tape(const Tensor& t) { return t.tape_; }
  static int32_t id(const Tensor& t) { return t.id_; }
  static Tape::Node& node(Tape& t, int32_t id) { return t.node(id); }
  static const Tape::Node& node(const Tape& t, int32_t id) { return t.node(id); }
  static std::vector<double>& grad_buf(Tape& t, int32_t id) { return t.grad_buf(id); }
  static Tensor make(Tape& t, Shape s, std::vector<double> v, bool rg) {
    return t.make_node(std::move(s), std::move(v), rg);
  }
  static void set_backward(Tape& t, const Tensor& out, std::function<void(Tape&)> fn) {
    t.node(out.id_).backward_fn = std::move(fn);
  }
};

const Shape& Tensor::shape() const {
  check(valid(), "Tensor: using a default-constructed handle");
  return tape_->node(id_).shape;
}

int64_t Tensor::size() const { return static_cast<int64_t>(values().size()); }

const std::vector<double>& Tensor::values() const {
  check(valid(), "Tensor: using a default-constructed handle");
  return tape_->node(id_).value;
}

double Tensor::scalar() const {
  check(size() == 1, "Tensor::scalar: shape is ", shape_str(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const {
  check(valid(), "Tensor: using a default-constructed handle");
  return tape_->node(id_).requires_grad;
}

DenseMatrix Tensor::to_matrix() const {
  const Shape& s = shape();
  check(s.size() == 2, "Tensor::to_matrix: shape is ", shape_str(s));
  DenseMatrix m(s[0], s[1]);
  m.v = values();
  return m;
}

// ---- Tape ----------------------------------------------------------------

Tensor Tape::make_node(Shape shape, std::vector<double> value, bool requires_grad) {
  check(shape_size(shape) == static_cast<int64_t>(value.size()), "Tape: node value size ",
        value.size(), " does not match shape ", shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int32_t>(nodes_.size() - 1));
}

Tensor Tape::leaf(Parameter& p) {
  Tensor t = make_node(p.shape, p.value, true);
  node(t.id_).param = &p;
  return t;
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return make_node(std::move(shape), std::move(values), false);
}

std::vector<double>& Tape::grad_buf(int32_t id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  check(loss.valid() && loss.tape_ == this, "backward: loss does not live on this tape");
  check(loss.size() == 1, "backward: loss must be scalar, got ", shape_str(loss.shape()));
  check(loss.requires_grad(), "backward: loss does not depend on any parameter");
  grad_buf(loss.id_)[0] = 1.0;
  for (int32_t id = loss.id_; id >= 0; --id) {
    Node& n = node(id);
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
    }
    if (n.backward_fn) n.backward_fn(*this);
  }
}

const std::vector<double>& Tape::grad_of(const Tensor& t) const {
  check(t.valid() && t.tape_ == this, "grad_of: tensor does not live on this tape");
  return node(t.id_).grad;
}

// ---- op helpers ----------------------------------------------------------

namespace {

Tape* tape_of(const Tensor& a, const char* op) {
  Tape* t = OpAccess::tape(a);
  check(t != nullptr, op, ": tensor handle is empty");
  return t;
}

Tape* same_tape(const Tensor& a, const Tensor& b, const char* op) {
  Tape* t = tape_of(a, op);
  check(t == OpAccess::tape(b), op, ": tensors live on different tapes");
  return t;
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Registers an elementwise op. Functors are class types so the per-element
// calls inline; a function pointer here costs an indirect call per element.
template <typename Fwd, typename Dydx>
Tensor elementwise(const Tensor& x, const char* op, Fwd fwd, Dydx dydx) {
  Tape* t = tape_of(x, op);
  std::vector<double> out(x.values().size());
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, dydx](Tape& tp) {
      const auto& yn = OpAccess::node(tp, yid);
      const auto& xv2 = OpAccess::node(tp, xid).value;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += yn.grad[i] * dydx(xv2[i], yn.value[i]);
    });
  }
  return y;
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tape* t = same_tape(a, b, "add");
  check(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
        shape_str(b.shape()));
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tensor y = OpAccess::make(*t, a.shape(), std::move(out), wants_grad(a) || wants_grad(b));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), bid = OpAccess::id(b), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, bid, yid](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      for (int32_t in : {aid, bid}) {
        if (!OpAccess::node(tp, in).requires_grad) continue;
        auto& gi = OpAccess::grad_buf(tp, in);
        for (size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape* t = same_tape(a, b, "sub");
  check(a.shape() == b.shape(), "sub: shape mismatch ", shape_str(a.shape()), " vs ",
        shape_str(b.shape()));
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tensor y = OpAccess::make(*t, a.shape(), std::move(out), wants_grad(a) || wants_grad(b));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), bid = OpAccess::id(b), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, bid, yid](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      if (OpAccess::node(tp, aid).requires_grad) {
        auto& ga = OpAccess::grad_buf(tp, aid);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        auto& gb = OpAccess::grad_buf(tp, bid);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape* t = same_tape(a, b, "mul");
  check(a.shape() == b.shape(), "mul: shape mismatch ", shape_str(a.shape()), " vs ",
        shape_str(b.shape()));
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tensor y = OpAccess::make(*t, a.shape(), std::move(out), wants_grad(a) || wants_grad(b));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), bid = OpAccess::id(b), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, bid, yid](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      const auto& av = OpAccess::node(tp, aid).value;
      const auto& bv2 = OpAccess::node(tp, bid).value;
      if (OpAccess::node(tp, aid).requires_grad) {
        auto& ga = OpAccess::grad_buf(tp, aid);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        auto& gb = OpAccess::grad_buf(tp, bid);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tape* t = tape_of(a, "scale");
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  Tensor y = OpAccess::make(*t, a.shape(), std::move(out), wants_grad(a));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, yid, s](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& ga = OpAccess::grad_buf(tp, aid);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  Tape* t = same_tape(x, bias, "add_bias");
  check(x.shape().size() == 2 && bias.shape().size() == 1 && x.shape()[1] == bias.shape()[0],
        "add_bias: shape mismatch ", shape_str(x.shape()), " vs ", shape_str(bias.shape()));
  const int64_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(x.values());
  const auto& bv = bias.values();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < d; ++c) out[static_cast<size_t>(r * d + c)] += bv[c];
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), wants_grad(x) || wants_grad(bias));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), bid = OpAccess::id(bias), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, bid, yid, n, d](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      if (OpAccess::node(tp, xid).requires_grad) {
        auto& gx = OpAccess::grad_buf(tp, xid);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        auto& gb = OpAccess::grad_buf(tp, bid);
        for (int64_t r = 0; r < n; ++r)
          for (int64_t c = 0; c < d; ++c) gb[c] += g[static_cast<size_t>(r * d + c)];
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* t = same_tape(a, b, "matmul");
  check(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
        "matmul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  const int64_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(n * m), 0.0);
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        const double* brow = bv + p * m;
        double* orow = ov + i * m;
        for (int64_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  Tensor y = OpAccess::make(*t, {n, m}, std::move(out), wants_grad(a) || wants_grad(b));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), bid = OpAccess::id(b), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, bid, yid, n, k, m](Tape& tp) {
      const double* g = OpAccess::node(tp, yid).grad.data();
      const double* av = OpAccess::node(tp, aid).value.data();
      const double* bv = OpAccess::node(tp, bid).value.data();
      if (OpAccess::node(tp, aid).requires_grad) {
        double* ga = OpAccess::grad_buf(tp, aid).data();
// dA = G * B^T
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = g + i * m;
            const double* brow = bv + p * m;
            for (int64_t j = 0; j < m; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        double* gb = OpAccess::grad_buf(tp, bid).data();
// dB = A^T * G
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < k; ++p) {
          for (int64_t i = 0; i < n; ++i) {
            const double aip = av[i * k + p];
            const double* grow = g + i * m;
            double* brow = gb + p * m;
            for (int64_t j = 0; j < m; ++j) brow[j] += aip * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::vector<int64_t> idx) {
  Tape* t = tape_of(table, "gather_rows");
  check(table.shape().size() == 2, "gather_rows: table must be 2-D, got ",
        shape_str(table.shape()));
  const int64_t rows = table.shape()[0], d = table.shape()[1];
  const int64_t n = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(n * d), 0.0);
  const auto& tv = table.values();
  for (int64_t r = 0; r < n; ++r) {
    const int64_t src = idx[static_cast<size_t>(r)];
    check(src >= -1 && src < rows, "gather_rows: index ", src, " out of range [0,", rows, ")");
    if (src >= 0)
      std::copy_n(tv.data() + src * d, d, out.data() + r * d);
  }
  Tensor y = OpAccess::make(*t, {n, d}, std::move(out), wants_grad(table));
  if (y.requires_grad()) {
    const int32_t tid = OpAccess::id(table), yid = OpAccess::id(y);
    auto shared_idx = std::make_shared<std::vector<int64_t>>(std::move(idx));
    OpAccess::set_backward(*t, y, [tid, yid, shared_idx, d](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gt = OpAccess::grad_buf(tp, tid);
      const auto& ix = *shared_idx;
      for (size_t r = 0; r < ix.size(); ++r) {
        const int64_t dst = ix[r];
        if (dst < 0) continue;
        const double* grow = g.data() + static_cast<int64_t>(r) * d;
        double* trow = gt.data() + dst * d;
        for (int64_t c = 0; c < d; ++c) trow[c] += grow[c];
      }
    });
  }
  return y;
}

Tensor neighbor_mean(const Tensor& self_rows, const Tensor& neighbor_rows, const Csr& adj) {
  Tape* t = same_tape(self_rows, neighbor_rows, "neighbor_mean");
  check(self_rows.shape().size() == 2 && neighbor_rows.shape().size() == 2 &&
            self_rows.shape()[1] == neighbor_rows.shape()[1],
        "neighbor_mean: shape mismatch ", shape_str(self_rows.shape()), " vs ",
        shape_str(neighbor_rows.shape()));
  check(self_rows.shape()[0] == adj.n_rows && neighbor_rows.shape()[0] == adj.n_cols,
        "neighbor_mean: adjacency ", adj.n_rows, "x", adj.n_cols, " does not match tensors ",
        shape_str(self_rows.shape()), " / ", shape_str(neighbor_rows.shape()));
  const int64_t n = adj.n_rows, d = self_rows.shape()[1];
  std::vector<double> out(static_cast<size_t>(n * d), 0.0);
  {
    const double* sv = self_rows.values().data();
    const double* nv = neighbor_rows.values().data();
    double* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t u = 0; u < n; ++u) {
      double* orow = ov + u * d;
      std::copy_n(sv + u * d, d, orow);
      for (int32_t v : adj.row(u)) {
        const double* nrow = nv + static_cast<int64_t>(v) * d;
        for (int64_t c = 0; c < d; ++c) orow[c] += nrow[c];
      }
      const double inv = 1.0 / static_cast<double>(1 + adj.degree(u));
      for (int64_t c = 0; c < d; ++c) orow[c] *= inv;
    }
  }
  Tensor y = OpAccess::make(*t, {n, d}, std::move(out),
                            wants_grad(self_rows) || wants_grad(neighbor_rows));
  if (y.requires_grad()) {
    const int32_t sid = OpAccess::id(self_rows), nid = OpAccess::id(neighbor_rows),
                  yid = OpAccess::id(y);
    const Csr* a = &adj;
    OpAccess::set_backward(*t, y, [sid, nid, yid, a, n, d](Tape& tp) {
      const double* g = OpAccess::node(tp, yid).grad.data();
      if (OpAccess::node(tp, sid).requires_grad) {
        double* gs = OpAccess::grad_buf(tp, sid).data();
#pragma omp parallel for schedule(static)
        for (int64_t u = 0; u < n; ++u) {
          const double inv = 1.0 / static_cast<double>(1 + a->degree(u));
          for (int64_t c = 0; c < d; ++c) gs[u * d + c] += g[u * d + c] * inv;
        }
      }
      if (OpAccess::node(tp, nid).requires_grad) {
        double* gn = OpAccess::grad_buf(tp, nid).data();
        for (int64_t u = 0; u < n; ++u) {
          const double inv = 1.0 / static_cast<double>(1 + a->degree(u));
          const double* grow = g + u * d;
          for (int32_t v : a->row(u)) {
            double* nrow = gn + static_cast<int64_t>(v) * d;
            for (int64_t c = 0; c < d; ++c) nrow[c] += grow[c] * inv;
          }
        }
      }
    });
  }
  return y;
}

Tensor average(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "average: empty tensor list");
  Tape* t = tape_of(xs[0], "average");
  bool rg = false;
  for (const auto& x : xs) {
    check(OpAccess::tape(x) == t, "average: tensors live on different tapes");
    check(x.shape() == xs[0].shape(), "average: shape mismatch ", shape_str(x.shape()), " vs ",
          shape_str(xs[0].shape()));
    rg = rg || wants_grad(x);
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  std::vector<double> out(xs[0].values().size(), 0.0);
  for (const auto& x : xs) {
    const auto& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += xv[i];
  }
  for (double& v : out) v *= inv;
  Tensor y = OpAccess::make(*t, xs[0].shape(), std::move(out), rg);
  if (rg) {
    std::vector<int32_t> ids;
    for (const auto& x : xs) ids.push_back(OpAccess::id(x));
    const int32_t yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [ids, yid, inv](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      for (int32_t in : ids) {
        if (!OpAccess::node(tp, in).requires_grad) continue;
        auto& gi = OpAccess::grad_buf(tp, in);
        for (size_t i = 0; i < gi.size(); ++i) gi[i] += g[i] * inv;
      }
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_rows: empty tensor list");
  Tape* t = tape_of(xs[0], "concat_rows");
  const int64_t d = xs[0].shape().size() == 2 ? xs[0].shape()[1] : -1;
  check(d > 0, "concat_rows: tensors must be 2-D");
  int64_t rows = 0;
  bool rg = false;
  for (const auto& x : xs) {
    check(OpAccess::tape(x) == t, "concat_rows: tensors live on different tapes");
    check(x.shape().size() == 2 && x.shape()[1] == d, "concat_rows: column mismatch ",
          shape_str(x.shape()));
    rows += x.shape()[0];
    rg = rg || wants_grad(x);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows * d));
  for (const auto& x : xs) out.insert(out.end(), x.values().begin(), x.values().end());
  Tensor y = OpAccess::make(*t, {rows, d}, std::move(out), rg);
  if (rg) {
    std::vector<int32_t> ids;
    std::vector<int64_t> sizes;
    for (const auto& x : xs) {
      ids.push_back(OpAccess::id(x));
      sizes.push_back(x.size());
    }
    const int32_t yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [ids, sizes, yid](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      int64_t off = 0;
      for (size_t p = 0; p < ids.size(); ++p) {
        if (OpAccess::node(tp, ids[p]).requires_grad) {
          auto& gi = OpAccess::grad_buf(tp, ids[p]);
          for (int64_t i = 0; i < sizes[p]; ++i) gi[static_cast<size_t>(i)] += g[static_cast<size_t>(off + i)];
        }
        off += sizes[p];
      }
    });
  }
  return y;
}

Tensor mean_rows(const Tensor& x) {
  Tape* t = tape_of(x, "mean_rows");
  check(x.shape().size() == 2 && x.shape()[0] >= 1, "mean_rows: need a non-empty 2-D tensor, got ",
        shape_str(x.shape()));
  const int64_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  const auto& xv = x.values();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < d; ++c) out[static_cast<size_t>(c)] += xv[static_cast<size_t>(r * d + c)];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  Tensor y = OpAccess::make(*t, {d}, std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, n, d, inv](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) gx[static_cast<size_t>(r * d + c)] += g[static_cast<size_t>(c)] * inv;
    });
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  Tape* t = tape_of(x, "sum_all");
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = OpAccess::make(*t, {1}, {s}, wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid](Tape& tp) {
      const double g = OpAccess::node(tp, yid).grad[0];
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (double& v : gx) v += g;
    });
  }
  return y;
}

// ---- nonlinearities --------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  return elementwise(
      x, "sigmoid", [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return elementwise(
      x, "gelu",
      [](double v) { return 0.5 * v * std::erfc(-v * 0.7071067811865476); },
      [](double v, double) {
        const double cdf = 0.5 * std::erfc(-v * 0.7071067811865476);
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor softplus(const Tensor& x) {
  return elementwise(
      x, "softplus", [](double v) { return stable_softplus(v); },
      [](double v, double) { return stable_sigmoid(v); });
}

// ---- softmax / masking -----------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  Tape* t = tape_of(x, "softmax_rows");
  check(!x.shape().empty() && x.shape().back() >= 1, "softmax_rows: bad shape ",
        shape_str(x.shape()));
  const int64_t d = x.shape().back();
  const int64_t rows = x.size() / d;
  std::vector<double> out(x.values().size());
  {
    const double* xv = x.values().data();
    double* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = xv + r * d;
      double* orow = ov + r * d;
      double mx = xr[0];
      for (int64_t c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
      double z = 0.0;
      for (int64_t c = 0; c < d; ++c) {
        orow[c] = std::exp(xr[c] - mx);
        z += orow[c];
      }
      const double inv = 1.0 / z;
      for (int64_t c = 0; c < d; ++c) orow[c] *= inv;
    }
  }
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, rows, d](Tape& tp) {
      const auto& yn = OpAccess::node(tp, yid);
      double* gx = OpAccess::grad_buf(tp, xid).data();
      const double* g = yn.grad.data();
      const double* yv = yn.value.data();
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < rows; ++r) {
        const double* grow = g + r * d;
        const double* yrow = yv + r * d;
        double dotgy = 0.0;
        for (int64_t c = 0; c < d; ++c) dotgy += grow[c] * yrow[c];
        double* gxr = gx + r * d;
        for (int64_t c = 0; c < d; ++c) gxr[c] += yrow[c] * (grow[c] - dotgy);
      }
    });
  }
  return y;
}

Tensor masked_fill(const Tensor& x, std::shared_ptr<const std::vector<uint8_t>> keep,
                   double fill) {
  Tape* t = tape_of(x, "masked_fill");
  check(keep && static_cast<int64_t>(keep->size()) == x.size(), "masked_fill: mask size ",
        keep ? keep->size() : 0, " does not match tensor ", shape_str(x.shape()));
  std::vector<double> out(x.values());
  for (size_t i = 0; i < out.size(); ++i)
    if (!(*keep)[i]) out[i] = fill;
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, keep](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (size_t i = 0; i < gx.size(); ++i)
        if ((*keep)[i]) gx[i] += g[i];
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tape* t = same_tape(x, gain, "layer_norm");
  check(OpAccess::tape(bias) == t, "layer_norm: tensors live on different tapes");
  check(!x.shape().empty(), "layer_norm: bad input shape");
  const int64_t d = x.shape().back();
  check(gain.shape() == Shape{d} && bias.shape() == Shape{d}, "layer_norm: gain/bias must be [",
        d, "], got ", shape_str(gain.shape()), " / ", shape_str(bias.shape()));
  const int64_t rows = x.size() / d;
  std::vector<double> out(x.values().size());
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  std::vector<double> xhat(x.values().size());
  {
    const double* xv = x.values().data();
    const double* gv = gain.values().data();
    const double* bv = bias.values().data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = xv + r * d;
      double mu = 0.0;
      for (int64_t c = 0; c < d; ++c) mu += xr[c];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(r)] = is;
      for (int64_t c = 0; c < d; ++c) {
        const double h = (xr[c] - mu) * is;
        xhat[static_cast<size_t>(r * d + c)] = h;
        out[static_cast<size_t>(r * d + c)] = h * gv[c] + bv[c];
      }
    }
  }
  const bool rg = wants_grad(x) || wants_grad(gain) || wants_grad(bias);
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), rg);
  if (rg) {
    const int32_t xid = OpAccess::id(x), gid = OpAccess::id(gain), bid = OpAccess::id(bias),
                  yid = OpAccess::id(y);
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto isv = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    OpAccess::set_backward(*t, y, [xid, gid, bid, yid, xh, isv, rows, d](Tape& tp) {
      const double* g = OpAccess::node(tp, yid).grad.data();
      const double* gv = OpAccess::node(tp, gid).value.data();
      if (OpAccess::node(tp, gid).requires_grad) {
        double* gg = OpAccess::grad_buf(tp, gid).data();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * (*xh)[static_cast<size_t>(r * d + c)];
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        double* gb = OpAccess::grad_buf(tp, bid).data();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
      }
      if (OpAccess::node(tp, xid).requires_grad) {
        double* gx = OpAccess::grad_buf(tp, xid).data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
          const double* grow = g + r * d;
          const double* hrow = xh->data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t c = 0; c < d; ++c) {
            const double dg = grow[c] * gv[c];
            m1 += dg;
            m2 += dg * hrow[c];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double is = (*isv)[static_cast<size_t>(r)];
          for (int64_t c = 0; c < d; ++c)
            gx[r * d + c] += is * (grow[c] * gv[c] - m1 - hrow[c] * m2);
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double keep_prob, bool training, Rng& rng) {
  check(keep_prob > 0.0 && keep_prob <= 1.0, "dropout: keep probability ", keep_prob,
        " outside (0,1]");
  if (!training || keep_prob == 1.0) return x;
  Tape* t = tape_of(x, "dropout");
  const double inv = 1.0 / keep_prob;
  auto mask = std::make_shared<std::vector<uint8_t>>(x.values().size());
  std::vector<double> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) {
    const bool keep = rng.uniform01() < keep_prob;
    (*mask)[i] = keep ? 1 : 0;
    out[i] = keep ? out[i] * inv : 0.0;
  }
  Tensor y = OpAccess::make(*t, x.shape(), std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, mask, inv](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (size_t i = 0; i < gx.size(); ++i)
        if ((*mask)[i]) gx[i] += g[i] * inv;
    });
  }
  return y;
}

// ---- attention -------------------------------------------------------------

Tensor attn_scores(const Tensor& q, const Tensor& k, int64_t batch, int64_t seq, int64_t heads) {
  Tape* t = same_tape(q, k, "attn_scores");
  check(q.shape() == k.shape() && q.shape().size() == 2 && q.shape()[0] == batch * seq,
        "attn_scores: expected [", batch * seq, ",d] q/k, got ", shape_str(q.shape()), " vs ",
        shape_str(k.shape()));
  const int64_t d = q.shape()[1];
  check(d % heads == 0, "attn_scores: dim ", d, " not divisible by heads ", heads);
  const int64_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> out(static_cast<size_t>(batch * heads * seq * seq), 0.0);
  {
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    double* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t bh = 0; bh < batch * heads; ++bh) {
      const int64_t b = bh / heads, h = bh % heads;
      for (int64_t i = 0; i < seq; ++i) {
        const double* qrow = qv + (b * seq + i) * d + h * hd;
        double* orow = ov + (bh * seq + i) * seq;
        for (int64_t j = 0; j < seq; ++j) {
          const double* krow = kv + (b * seq + j) * d + h * hd;
          double s = 0.0;
          for (int64_t c = 0; c < hd; ++c) s += qrow[c] * krow[c];
          orow[j] = s * inv_sqrt;
        }
      }
    }
  }
  Tensor y =
      OpAccess::make(*t, {batch * heads * seq, seq}, std::move(out), wants_grad(q) || wants_grad(k));
  if (y.requires_grad()) {
    const int32_t qid = OpAccess::id(q), kid = OpAccess::id(k), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [qid, kid, yid, batch, seq, heads, d, hd, inv_sqrt](Tape& tp) {
      const double* g = OpAccess::node(tp, yid).grad.data();
      const double* qv = OpAccess::node(tp, qid).value.data();
      const double* kv = OpAccess::node(tp, kid).value.data();
      if (OpAccess::node(tp, qid).requires_grad) {
        double* gq = OpAccess::grad_buf(tp, qid).data();
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < batch * seq; ++bi) {
          const int64_t b = bi / seq, i = bi % seq;
          for (int64_t h = 0; h < heads; ++h) {
            const double* grow = g + ((b * heads + h) * seq + i) * seq;
            double* qrow = gq + bi * d + h * hd;
            for (int64_t j = 0; j < seq; ++j) {
              const double gij = grow[j] * inv_sqrt;
              if (gij == 0.0) continue;
              const double* krow = kv + (b * seq + j) * d + h * hd;
              for (int64_t c = 0; c < hd; ++c) qrow[c] += gij * krow[c];
            }
          }
        }
      }
      if (OpAccess::node(tp, kid).requires_grad) {
        double* gk = OpAccess::grad_buf(tp, kid).data();
#pragma omp parallel for schedule(static)
        for (int64_t bj = 0; bj < batch * seq; ++bj) {
          const int64_t b = bj / seq, j = bj % seq;
          for (int64_t h = 0; h < heads; ++h) {
            double* krow = gk + bj * d + h * hd;
            for (int64_t i = 0; i < seq; ++i) {
              const double gij = g[((b * heads + h) * seq + i) * seq + j] * inv_sqrt;
              if (gij == 0.0) continue;
              const double* qrow = qv + (b * seq + i) * d + h * hd;
              for (int64_t c = 0; c < hd; ++c) krow[c] += gij * qrow[c];
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor attn_context(const Tensor& probs, const Tensor& v, int64_t batch, int64_t seq,
                    int64_t heads) {
  Tape* t = same_tape(probs, v, "attn_context");
  check(v.shape().size() == 2 && v.shape()[0] == batch * seq, "attn_context: bad v shape ",
        shape_str(v.shape()));
  const int64_t d = v.shape()[1];
  check(d % heads == 0, "attn_context: dim ", d, " not divisible by heads ", heads);
  const int64_t hd = d / heads;
  check(probs.shape() == Shape{batch * heads * seq, seq}, "attn_context: bad probs shape ",
        shape_str(probs.shape()));
  std::vector<double> out(static_cast<size_t>(batch * seq * d), 0.0);
  {
    const double* pv = probs.values().data();
    const double* vv = v.values().data();
    double* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < batch * seq; ++bi) {
      const int64_t b = bi / seq, i = bi % seq;
      double* orow = ov + bi * d;
      for (int64_t h = 0; h < heads; ++h) {
        const double* prow = pv + ((b * heads + h) * seq + i) * seq;
        for (int64_t j = 0; j < seq; ++j) {
          const double p = prow[j];
          if (p == 0.0) continue;
          const double* vrow = vv + (b * seq + j) * d + h * hd;
          for (int64_t c = 0; c < hd; ++c) orow[h * hd + c] += p * vrow[c];
        }
      }
    }
  }
  Tensor y = OpAccess::make(*t, {batch * seq, d}, std::move(out),
                            wants_grad(probs) || wants_grad(v));
  if (y.requires_grad()) {
    const int32_t pid = OpAccess::id(probs), vid = OpAccess::id(v), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [pid, vid, yid, batch, seq, heads, d, hd](Tape& tp) {
      const double* g = OpAccess::node(tp, yid).grad.data();
      const double* pv = OpAccess::node(tp, pid).value.data();
      const double* vv = OpAccess::node(tp, vid).value.data();
      if (OpAccess::node(tp, pid).requires_grad) {
        double* gp = OpAccess::grad_buf(tp, pid).data();
#pragma omp parallel for schedule(static)
        for (int64_t bh = 0; bh < batch * heads; ++bh) {
          const int64_t b = bh / heads, h = bh % heads;
          for (int64_t i = 0; i < seq; ++i) {
            const double* grow = g + (b * seq + i) * d + h * hd;
            double* prow = gp + (bh * seq + i) * seq;
            for (int64_t j = 0; j < seq; ++j) {
              const double* vrow = vv + (b * seq + j) * d + h * hd;
              double s = 0.0;
              for (int64_t c = 0; c < hd; ++c) s += grow[c] * vrow[c];
              prow[j] += s;
            }
          }
        }
      }
      if (OpAccess::node(tp, vid).requires_grad) {
        double* gv2 = OpAccess::grad_buf(tp, vid).data();
#pragma omp parallel for schedule(static)
        for (int64_t bj = 0; bj < batch * seq; ++bj) {
          const int64_t b = bj / seq, j = bj % seq;
          for (int64_t h = 0; h < heads; ++h) {
            double* vrow = gv2 + bj * d + h * hd;
            for (int64_t i = 0; i < seq; ++i) {
              const double p = pv[((b * heads + h) * seq + i) * seq + j];
              if (p == 0.0) continue;
              const double* grow = g + (b * seq + i) * d + h * hd;
              for (int64_t c = 0; c < hd; ++c) vrow[c] += p * grow[c];
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  Tape* t = same_tape(a, b, "rowwise_dot");
  check(a.shape() == b.shape() && a.shape().size() == 2, "rowwise_dot: shape mismatch ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  const int64_t n = a.shape()[0], d = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int64_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < d; ++c) s += av[static_cast<size_t>(r * d + c)] * bv[static_cast<size_t>(r * d + c)];
    out[static_cast<size_t>(r)] = s;
  }
  Tensor y = OpAccess::make(*t, {n}, std::move(out), wants_grad(a) || wants_grad(b));
  if (y.requires_grad()) {
    const int32_t aid = OpAccess::id(a), bid = OpAccess::id(b), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [aid, bid, yid, n, d](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      const auto& av2 = OpAccess::node(tp, aid).value;
      const auto& bv2 = OpAccess::node(tp, bid).value;
      if (OpAccess::node(tp, aid).requires_grad) {
        auto& ga = OpAccess::grad_buf(tp, aid);
        for (int64_t r = 0; r < n; ++r)
          for (int64_t c = 0; c < d; ++c)
            ga[static_cast<size_t>(r * d + c)] += g[static_cast<size_t>(r)] * bv2[static_cast<size_t>(r * d + c)];
      }
      if (OpAccess::node(tp, bid).requires_grad) {
        auto& gb = OpAccess::grad_buf(tp, bid);
        for (int64_t r = 0; r < n; ++r)
          for (int64_t c = 0; c < d; ++c)
            gb[static_cast<size_t>(r * d + c)] += g[static_cast<size_t>(r)] * av2[static_cast<size_t>(r * d + c)];
      }
    });
  }
  return y;
}

Tensor segment_masked_mean(const Tensor& x, std::shared_ptr<const std::vector<uint8_t>> valid,
                           int64_t batch, int64_t seq) {
  Tape* t = tape_of(x, "segment_masked_mean");
  check(x.shape().size() == 2 && x.shape()[0] == batch * seq,
        "segment_masked_mean: expected [", batch * seq, ",d], got ", shape_str(x.shape()));
  check(valid && static_cast<int64_t>(valid->size()) == batch * seq,
        "segment_masked_mean: mask size mismatch");
  const int64_t d = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(batch * d), 0.0);
  auto counts = std::make_shared<std::vector<double>>(static_cast<size_t>(batch), 0.0);
  const auto& xv = x.values();
  for (int64_t b = 0; b < batch; ++b) {
    double cnt = 0.0;
    for (int64_t s = 0; s < seq; ++s) {
      if (!(*valid)[static_cast<size_t>(b * seq + s)]) continue;
      cnt += 1.0;
      const double* row = xv.data() + (b * seq + s) * d;
      for (int64_t c = 0; c < d; ++c) out[static_cast<size_t>(b * d + c)] += row[c];
    }
    check(cnt > 0.0, "segment_masked_mean: segment ", b, " has no valid positions");
    (*counts)[static_cast<size_t>(b)] = cnt;
    for (int64_t c = 0; c < d; ++c) out[static_cast<size_t>(b * d + c)] /= cnt;
  }
  Tensor y = OpAccess::make(*t, {batch, d}, std::move(out), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid, valid, counts, batch, seq, d](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (int64_t b = 0; b < batch; ++b) {
        const double inv = 1.0 / (*counts)[static_cast<size_t>(b)];
        for (int64_t s = 0; s < seq; ++s) {
          if (!(*valid)[static_cast<size_t>(b * seq + s)]) continue;
          for (int64_t c = 0; c < d; ++c)
            gx[static_cast<size_t>((b * seq + s) * d + c)] += g[static_cast<size_t>(b * d + c)] * inv;
        }
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tape* t = tape_of(x, "reshape");
  check(shape_size(shape) == x.size(), "reshape: cannot view ", shape_str(x.shape()), " as ",
        shape_str(shape));
  Tensor y = OpAccess::make(*t, std::move(shape), x.values(), wants_grad(x));
  if (y.requires_grad()) {
    const int32_t xid = OpAccess::id(x), yid = OpAccess::id(y);
    OpAccess::set_backward(*t, y, [xid, yid](Tape& tp) {
      const auto& g = OpAccess::node(tp, yid).grad;
      auto& gx = OpAccess::grad_buf(tp, xid);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

}  // namespace gdmsr::num
