#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "gdmsr/adam.hpp"
#include "gdmsr/gradcheck.hpp"
#include "gdmsr/tensor.hpp"

using namespace gdmsr;
using namespace gdmsr::num;

namespace {

void fill_random(Parameter& p, Rng& rng, double stddev = 1.0, double keepaway = 0.0) {
  for (double& v : p.value) {
    do {
      v = rng.normal(0.0, stddev);
    } while (keepaway > 0.0 && std::fabs(v) < keepaway);
  }
}

double fd_max_err(std::vector<Parameter*> params, const std::function<Tensor(Tape&)>& f) {
  return grad_check(params, f, 1e-4).max_rel_error;
}

}  // namespace

TEST_CASE("forward values of simple primitives") {
  Tape t;
  CHECK(sigmoid(t.constant({1}, {0.0})).scalar() == doctest::Approx(0.5));
  CHECK(softplus(t.constant({1}, {0.0})).scalar() == doctest::Approx(std::log(2.0)));

  Tensor sm = softmax_rows(t.constant({1, 2}, {0.0, 0.0}));
  CHECK(sm.values()[0] == doctest::Approx(0.5));
  CHECK(sm.values()[1] == doctest::Approx(0.5));

  Tensor mr = mean_rows(t.constant({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  CHECK(mr.values()[0] == doctest::Approx(0.5));
  CHECK(mr.values()[1] == doctest::Approx(0.5));

  Tensor rd = rowwise_dot(t.constant({1, 2}, {1.0, 0.0}), t.constant({1, 2}, {0.0, 1.0}));
  CHECK(rd.values()[0] == doctest::Approx(0.0));
}

TEST_CASE("backward of x.x and untouched parameters") {
  Parameter x("x", {2});
  x.value = {1.0, 2.0};
  Parameter unused("unused", {3});
  unused.value = {5.0, 5.0, 5.0};
  Tape t;
  Tensor xt = t.leaf(x);
  Tensor loss = sum_all(mul(xt, xt));
  t.backward(loss);
  CHECK(x.grad[0] == doctest::Approx(2.0));
  CHECK(x.grad[1] == doctest::Approx(4.0));
  CHECK(unused.grad[0] == 0.0);
  CHECK(unused.grad[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Parameter x("x", {2});
  x.value = {1.0, 2.0};
  Tape t;
  Tensor xt = t.leaf(x);
  CHECK_THROWS_WITH_AS(t.backward(xt), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("shape mismatches name the op") {
  Tape t;
  Tensor a = t.constant({2, 2}, {1, 2, 3, 4});
  Tensor b = t.constant({3}, {1, 2, 3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::runtime_error);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::runtime_error);
}

TEST_CASE("finite differences validate every primitive") {
  Rng rng(7);

  SUBCASE("arithmetic and reductions") {
    Parameter a("a", {3, 4}), b("b", {3, 4});
    fill_random(a, rng);
    fill_random(b, rng);
    std::vector<Parameter*> ps{&a, &b};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor at = t.leaf(a), bt = t.leaf(b);
            Tensor s = add(sub(mul(at, bt), scale(at, 0.3)), at);
            return sum_all(mul(s, s));
          }) < 1e-4);
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor v = mean_rows(add(t.leaf(a), t.leaf(b)));
            return sum_all(mul(v, v));
          }) < 1e-4);
    CHECK(fd_max_err(ps, [&](Tape& t) {
            auto avg = average({t.leaf(a), t.leaf(b), t.leaf(a)});
            return sum_all(mul(avg, avg));
          }) < 1e-4);
    CHECK(fd_max_err(ps, [&](Tape& t) {
            auto cat = concat_rows({t.leaf(a), t.leaf(b)});
            return sum_all(mul(cat, cat));
          }) < 1e-4);
    CHECK(fd_max_err(ps, [&](Tape& t) {
            auto d = rowwise_dot(t.leaf(a), t.leaf(b));
            return sum_all(mul(d, d));
          }) < 1e-4);
  }

  SUBCASE("matmul and bias") {
    Parameter a("a", {3, 4}), w("w", {4, 2}), c("c", {2});
    fill_random(a, rng);
    fill_random(w, rng);
    fill_random(c, rng);
    std::vector<Parameter*> ps{&a, &w, &c};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor y = add_bias(matmul(t.leaf(a), t.leaf(w)), t.leaf(c));
            return sum_all(mul(y, y));
          }) < 1e-4);
  }

  SUBCASE("nonlinearities") {
    Parameter a("a", {4, 4});
    fill_random(a, rng, 1.0, 0.05);  // keep relu inputs off the kink
    std::vector<Parameter*> ps{&a};
    for (auto op : {&relu, &gelu, &sigmoid, &softplus}) {
      CHECK(fd_max_err(ps, [&](Tape& t) { return sum_all(mul(op(t.leaf(a)), op(t.leaf(a)))); }) <
            1e-4);
    }
  }

  SUBCASE("softmax, masking, layer norm") {
    Parameter a("a", {3, 4}), g("g", {4}), b("b", {4});
    fill_random(a, rng);
    fill_random(g, rng);
    fill_random(b, rng);
    auto keep = std::make_shared<std::vector<uint8_t>>(
        std::vector<uint8_t>{1, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1, 1});
    std::vector<Parameter*> ps{&a, &g, &b};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor y = softmax_rows(masked_fill(t.leaf(a), keep, -1e30));
            Tensor z = layer_norm(y, t.leaf(g), t.leaf(b));
            return sum_all(mul(z, z));
          }) < 1e-4);
  }

  SUBCASE("gather with padding index") {
    Parameter table("table", {5, 3});
    fill_random(table, rng);
    std::vector<Parameter*> ps{&table};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor rows = gather_rows(t.leaf(table), {4, -1, 0, 2, 2});
            return sum_all(mul(rows, rows));
          }) < 1e-4);
  }

  SUBCASE("neighbor mean over csr") {
    std::vector<std::pair<int32_t, int32_t>> edges{{0, 1}, {0, 3}, {2, 0}};
    Csr adj = Csr::from_pairs(3, 4, edges);
    Parameter self("self", {3, 2}), nbr("nbr", {4, 2});
    fill_random(self, rng);
    fill_random(nbr, rng);
    std::vector<Parameter*> ps{&self, &nbr};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor y = neighbor_mean(t.leaf(self), t.leaf(nbr), adj);
            return sum_all(mul(y, y));
          }) < 1e-4);
  }

  SUBCASE("attention block") {
    const int64_t B = 2, S = 3, H = 2, D = 4;
    Parameter q("q", {B * S, D}), k("k", {B * S, D}), v("v", {B * S, D});
    fill_random(q, rng);
    fill_random(k, rng);
    fill_random(v, rng);
    auto keymask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B * H * S * S), 1);
    // mask out key position 2 of batch 0 for every query/head
    for (int64_t h = 0; h < H; ++h)
      for (int64_t i = 0; i < S; ++i) (*keymask)[static_cast<size_t>((h * S + i) * S + 2)] = 0;
    std::vector<Parameter*> ps{&q, &k, &v};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor sc = attn_scores(t.leaf(q), t.leaf(k), B, S, H);
            Tensor pr = softmax_rows(masked_fill(sc, keymask, -1e30));
            Tensor ctx = attn_context(pr, t.leaf(v), B, S, H);
            return sum_all(mul(ctx, ctx));
          }) < 1e-4);
  }

  SUBCASE("segment masked mean") {
    const int64_t B = 2, S = 3;
    Parameter x("x", {B * S, 2});
    fill_random(x, rng);
    auto valid = std::make_shared<std::vector<uint8_t>>(std::vector<uint8_t>{1, 1, 0, 0, 1, 0});
    std::vector<Parameter*> ps{&x};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor m = segment_masked_mean(t.leaf(x), valid, B, S);
            return sum_all(mul(m, m));
          }) < 1e-4);
  }

  SUBCASE("dropout with a fixed stream") {
    Parameter x("x", {4, 4});
    fill_random(x, rng);
    std::vector<Parameter*> ps{&x};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Rng drop_rng(123);  // same mask on every evaluation
            Tensor y = dropout(t.leaf(x), 0.7, true, drop_rng);
            return sum_all(mul(y, y));
          }) < 1e-4);
  }

  SUBCASE("reshape and sum") {
    Parameter x("x", {2, 6});
    fill_random(x, rng);
    std::vector<Parameter*> ps{&x};
    CHECK(fd_max_err(ps, [&](Tape& t) {
            Tensor y = reshape(t.leaf(x), {3, 4});
            return sum_all(mul(y, y));
          }) < 1e-4);
  }
}

TEST_CASE("masked_fill blocks gradient at filled positions") {
  Parameter x("x", {4});
  x.value = {1.0, 2.0, 3.0, 4.0};
  auto keep = std::make_shared<std::vector<uint8_t>>(std::vector<uint8_t>{1, 0, 1, 0});
  Tape t;
  Tensor y = masked_fill(t.leaf(x), keep, 0.0);
  t.backward(sum_all(y));
  CHECK(x.grad == std::vector<double>{1.0, 0.0, 1.0, 0.0});
}

TEST_CASE("dropout with keep probability 1 is the identity") {
  Parameter x("x", {3});
  x.value = {1.0, -2.0, 3.0};
  Rng rng(1);
  Tape t;
  Tensor xt = t.leaf(x);
  Tensor y = dropout(xt, 1.0, true, rng);
  CHECK(&y.values() == &xt.values());  // same node, bitwise identical by construction
  t.backward(sum_all(y));
  CHECK(x.grad == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("adam closed-form behavior") {
  AdamConfig cfg;
  cfg.lr = 1e-3;

  SUBCASE("zero gradient leaves parameter unchanged") {
    Parameter p("p", {2});
    p.value = {1.0, -1.0};
    Adam opt(cfg);
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(1.0));
    CHECK(p.value[1] == doctest::Approx(-1.0));
  }

  SUBCASE("first step moves by about -lr on unit gradient") {
    Parameter p("p", {1});
    p.value = {0.5};
    p.grad = {1.0};
    Adam opt(cfg);
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  }

  SUBCASE("two constant-gradient steps accumulate about -2 lr") {
    Parameter p("p", {1});
    p.value = {0.0};
    Adam opt(cfg);
    std::vector<Parameter*> ps{&p};
    for (int s = 0; s < 2; ++s) {
      p.grad = {1.0};
      opt.step(ps);
    }
    CHECK(p.value[0] == doctest::Approx(-2e-3).epsilon(1e-6));
  }

  SUBCASE("non-finite gradient raises") {
    Parameter p("p", {1});
    p.grad = {std::nan("")};
    Adam opt(cfg);
    std::vector<Parameter*> ps{&p};
    CHECK_THROWS_AS(opt.step(ps), std::runtime_error);
  }
}

TEST_CASE("grad_check on a quadratic is exact to rounding") {
  Parameter x("x", {3});
  x.value = {0.3, -1.2, 2.0};
  std::vector<Parameter*> ps{&x};
  auto res = grad_check(ps, [&](Tape& t) {
    Tensor xt = t.leaf(x);
    return sum_all(mul(xt, xt));
  }, 1e-4);
  CHECK(res.max_rel_error < 1e-8);
  CHECK(res.coords_checked == 3);
}

TEST_CASE("grad_check with no parameters returns an empty report") {
  auto res = grad_check({}, [](Tape& t) { return t.constant_scalar(1.0); }, 1e-4);
  CHECK(res.coords_checked == 0);
  CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("identical seeds give bitwise-identical forward and backward") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Parameter a("a", {4, 4}), w("w", {4, 4});
    fill_random(a, rng);
    fill_random(w, rng);
    Tape t;
    Rng drop(seed + 1);
    Tensor y = dropout(sigmoid(matmul(t.leaf(a), t.leaf(w))), 0.8, true, drop);
    Tensor loss = sum_all(mul(y, y));
    t.backward(loss);
    std::vector<double> out = {loss.scalar()};
    out.insert(out.end(), a.grad.begin(), a.grad.end());
    out.insert(out.end(), w.grad.begin(), w.grad.end());
    return out;
  };
  CHECK(run(99) == run(99));
}
