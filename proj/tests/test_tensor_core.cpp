#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vdpg/autodiff.hpp"
#include "vdpg/optimizer.hpp"
#include "vdpg/params.hpp"
#include "vdpg/rng.hpp"
#include "vdpg/tensor.hpp"

using namespace vdpg;

namespace {

// Independent naive product used as the matmul oracle.
Tensor oracle_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double scl = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scl * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape tape;
  SECTION("identity") {
    Var i2 = tape.constant(Tensor::identity(2));
    Var m = tape.constant(Tensor::from_rows({{3, 4}, {5, 6}}));
    Var out = tape.matmul(i2, m);
    REQUIRE(tape.value(out) == tape.value(m));
  }
  SECTION("hand example vs oracle") {
    Tensor a = Tensor::from_rows({{1, 2}});
    Tensor b = Tensor::from_rows({{3}, {4}});
    Var out = tape.matmul(tape.constant(a), tape.constant(b));
    REQUIRE(tape.value(out).rows() == 1);
    REQUIRE(tape.value(out).cols() == 1);
    REQUIRE(tape.value(out)[0] == 11.0);
    REQUIRE(tape.value(out) == oracle_matmul(a, b));
  }
  SECTION("zero annihilates") {
    Rng rng(7);
    Tensor z(3, 4);
    Tensor b = random_tensor(rng, 4, 5);
    Var out = tape.matmul(tape.constant(z), tape.constant(b));
    for (std::size_t i = 0; i < tape.value(out).size(); ++i)
      REQUIRE(tape.value(out)[i] == 0.0);
  }
  SECTION("shape mismatch names both shapes") {
    Var a = tape.constant(Tensor(2, 3));
    Var b = tape.constant(Tensor(2, 3));
    REQUIRE_THROWS_WITH(tape.matmul(a, b),
                        Catch::Matchers::ContainsSubstring("[2x3]"));
  }
  SECTION("random sizes vs oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t m = 1 + rng.index(6), k = 1 + rng.index(6),
                        n = 1 + rng.index(6);
      Tensor a = random_tensor(rng, m, k);
      Tensor b = random_tensor(rng, k, n);
      Var out = tape.matmul(tape.constant(a), tape.constant(b));
      Tensor want = oracle_matmul(a, b);
      for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE(std::abs(tape.value(out)[i] - want[i]) < 1e-12);
    }
  }
}

TEST_CASE("softmax_rows") {
  Tape tape;
  SECTION("symmetric row") {
    Var out = tape.softmax_rows(tape.constant(Tensor::from_rows({{0, 0, 0}})));
    for (std::size_t j = 0; j < 3; ++j)
      REQUIRE(std::abs(tape.value(out)[j] - 1.0 / 3.0) < 1e-15);
  }
  SECTION("large values do not overflow") {
    Var out =
        tape.softmax_rows(tape.constant(Tensor::from_rows({{1000, 1000}})));
    REQUIRE(std::abs(tape.value(out)[0] - 0.5) < 1e-15);
    REQUIRE(std::abs(tape.value(out)[1] - 0.5) < 1e-15);
  }
  SECTION("closed form [0, ln 3]") {
    Var out = tape.softmax_rows(
        tape.constant(Tensor::from_rows({{0.0, std::log(3.0)}})));
    // oracle: exp(0)/(exp(0)+3) and 3/(1+3)
    REQUIRE(std::abs(tape.value(out)[0] - 0.25) < 1e-15);
    REQUIRE(std::abs(tape.value(out)[1] - 0.75) < 1e-15);
  }
  SECTION("rows sum to one, entries in [0,1]") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
      Tensor x = random_tensor(rng, 1 + rng.index(5), 1 + rng.index(6), 30.0);
      Var out = tape.softmax_rows(tape.constant(x));
      const Tensor& s = tape.value(out);
      for (std::size_t i = 0; i < s.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) {
          REQUIRE(s.at(i, j) >= 0.0);
          REQUIRE(s.at(i, j) <= 1.0);
          total += s.at(i, j);
        }
        REQUIRE(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("backward basics") {
  SECTION("sum gives ones") {
    Tape tape;
    Var x = tape.leaf(Tensor::from_rows({{1, 2, 3}}), true);
    Gradients g = tape.backward(tape.sum_all(x));
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(g.grad(x)[i] == 1.0);
  }
  SECTION("quadratic form, analytic oracle 2x") {
    Tape tape;
    Tensor x0 = Tensor::from_rows({{1, 2}});
    Var x = tape.leaf(x0, true);
    Var f = tape.sum_all(tape.square(x));
    Gradients g = tape.backward(f);
    REQUIRE(std::abs(g.grad(x)[0] - 2.0) < 1e-14);
    REQUIRE(std::abs(g.grad(x)[1] - 4.0) < 1e-14);
  }
  SECTION("disconnected leaf gets zeros") {
    Tape tape;
    Var x = tape.leaf(Tensor::from_rows({{1, 2}}), true);
    Var y = tape.leaf(Tensor::from_rows({{5, 6, 7}}), true);
    Gradients g = tape.backward(tape.sum_all(tape.square(x)));
    REQUIRE(g.grad(y).rows() == 1);
    REQUIRE(g.grad(y).cols() == 3);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(g.grad(y)[i] == 0.0);
  }
  SECTION("non-scalar output rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::from_rows({{1, 2}}), true);
    REQUIRE_THROWS_AS(tape.backward(x), ContractError);
  }
}

TEST_CASE("broadcast add and mul") {
  Tape tape;
  Rng rng(5);
  Tensor m = random_tensor(rng, 3, 4);
  Tensor rowv = random_tensor(rng, 1, 4);
  Tensor colv = random_tensor(rng, 3, 1);

  Var a = tape.constant(m);
  Var sum_row = tape.add(a, tape.constant(rowv));
  Var prod_col = tape.mul(a, tape.constant(colv));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE(tape.value(sum_row).at(i, j) == m.at(i, j) + rowv[j]);
      REQUIRE(tape.value(prod_col).at(i, j) == m.at(i, j) * colv[i]);
    }

  SECTION("broadcast gradients reduce correctly") {
    Tape t2;
    Var x = t2.leaf(m, true);
    Var r = t2.leaf(rowv, true);
    Var f = t2.sum_all(t2.mul(x, r));  // f = sum_ij x_ij * r_j
    Gradients g = t2.backward(f);
    for (std::size_t j = 0; j < 4; ++j) {
      double want = 0.0;
      for (std::size_t i = 0; i < 3; ++i) want += m.at(i, j);
      REQUIRE(std::abs(g.grad(r)[j] - want) < 1e-13);
    }
  }
  SECTION("incompatible shapes rejected") {
    REQUIRE_THROWS_AS(tape.add(a, tape.constant(Tensor(2, 2))), ShapeError);
  }
}

TEST_CASE("concat and slice round trip") {
  Tape tape;
  Rng rng(9);
  Tensor a = random_tensor(rng, 2, 3);
  Tensor b = random_tensor(rng, 4, 3);
  std::vector<Var> parts = {tape.constant(a), tape.constant(b)};
  Var cat = tape.concat_rows(parts);
  REQUIRE(tape.value(cat).rows() == 6);
  Var back = tape.slice(cat, 2, 6, 0, 3);
  REQUIRE(tape.value(back) == b);

  Var cc = tape.concat_cols(std::vector<Var>{tape.constant(a), tape.constant(a)});
  REQUIRE(tape.value(cc).cols() == 6);
  REQUIRE(tape.value(tape.slice(cc, 0, 2, 3, 6)) == a);
}

TEST_CASE("mean_of is exact on duplicated inputs") {
  Tape tape;
  Rng rng(2);
  Tensor x = random_tensor(rng, 3, 5);
  Var v = tape.constant(x);
  std::vector<Var> dup(7, v);
  Var m = tape.mean_of(dup);
  REQUIRE(tape.value(m) == x);  // bitwise

  // and it is still the mean on distinct inputs
  Tensor y = random_tensor(rng, 3, 5);
  std::vector<Var> two = {tape.constant(x), tape.constant(y)};
  Var m2 = tape.mean_of(two);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(std::abs(tape.value(m2)[i] - 0.5 * (x[i] + y[i])) < 1e-15);
}

TEST_CASE("strict mode flags non-finite values") {
  Tape tape(true);
  Var x = tape.constant(Tensor::from_rows({{-1.0}}));
  REQUIRE_THROWS_AS(tape.log(x), NumericError);
  Tape loose(false);
  Var y = loose.constant(Tensor::from_rows({{-1.0}}));
  REQUIRE_NOTHROW(loose.log(y));
}

TEST_CASE("cosine schedule") {
  OptimizerState opt;
  opt.base_lr = 0.1;
  opt.total_steps = 100;
  SECTION("endpoints") {
    REQUIRE(opt.lr_at(0) == 0.1);
    REQUIRE(std::abs(opt.lr_at(100)) < 1e-18);
  }
  SECTION("monotone non-increasing") {
    for (std::size_t s = 0; s < 100; ++s)
      REQUIRE(opt.lr_at(s + 1) <= opt.lr_at(s) + 1e-18);
  }
}

TEST_CASE("sgd_step") {
  SECTION("definition") {
    ParamStore p;
    p.add("theta", Tensor::scalar(1.0));
    GradMap g;
    g.emplace("theta", Tensor::scalar(2.0));
    OptimizerState opt;
    opt.base_lr = 0.1;
    opt.total_steps = 100;  // lr(0) == base_lr exactly
    sgd_step(p, g, opt);
    REQUIRE(std::abs(p.at("theta")[0] - 0.8) < 1e-15);
    REQUIRE(opt.step == 1);
  }
  SECTION("cosine endpoint leaves parameters unchanged") {
    ParamStore p;
    p.add("theta", Tensor::scalar(3.5));
    GradMap g;
    g.emplace("theta", Tensor::scalar(123.0));
    OptimizerState opt;
    opt.base_lr = 0.1;
    opt.total_steps = 10;
    opt.step = 10;
    sgd_step(p, g, opt);
    REQUIRE(std::abs(p.at("theta")[0] - 3.5) < 1e-15);
  }
  SECTION("two steps reproduce the schedule sum") {
    ParamStore p;
    p.add("theta", Tensor::scalar(0.0));
    GradMap g;
    g.emplace("theta", Tensor::scalar(1.0));
    OptimizerState opt;
    opt.base_lr = 0.2;
    opt.total_steps = 4;
    sgd_step(p, g, opt);
    sgd_step(p, g, opt);
    // independent schedule oracle
    const double lr0 = 0.2 * 0.5 * (1 + std::cos(0.0));
    const double lr1 = 0.2 * 0.5 * (1 + std::cos(std::numbers::pi * 0.25));
    REQUIRE(std::abs(p.at("theta")[0] + (lr0 + lr1)) < 1e-15);
  }
  SECTION("frozen tensors untouched, missing grads rejected") {
    ParamStore p;
    p.add("w", Tensor::scalar(1.0), true);
    p.add("frozen", Tensor::scalar(5.0), false);
    OptimizerState opt;
    GradMap g;
    REQUIRE_THROWS_AS(sgd_step(p, g, opt), ContractError);
    g.emplace("w", Tensor::scalar(1.0));
    sgd_step(p, g, opt);
    REQUIRE(p.at("frozen")[0] == 5.0);
  }
}

namespace {

// Moderately deep composition touching every supported primitive.
LossEval composed_loss(const ParamStore& params, bool want_grads) {
  Tape tape;
  BoundParams bound(tape, params);
  Var a = bound("a");  // 3x4
  Var b = bound("b");  // 4x2
  Var w = bound("w");  // 1x2 row vector

  Var c = tape.matmul(a, b);                       // 3x2
  Var s = tape.softmax_rows(tape.scale(c, 0.7));   // 3x2
  Var t = tape.add(s, w);                          // broadcast row
  Var u = tape.mul(t, t);                          // elementwise square via mul
  Var v = tape.sqrt(tape.add_scalar(tape.square(u), 0.5));
  Var cat = tape.concat_rows(std::vector<Var>{v, tape.transpose(tape.slice(v, 0, 2, 0, 2))});
  Var e = tape.exp(tape.scale(cat, 0.3));
  Var l = tape.log(tape.add_scalar(e, 1.0));
  Var rm = tape.row_mean(l);
  Var cs = tape.col_sum(l);
  Var loss = tape.add(tape.mean_all(rm), tape.scale(tape.sum_all(cs), 0.01));
  loss = tape.add(loss, tape.mean_all(tape.softmax_rows(tape.matmul(tape.transpose(a), a))));

  LossEval out;
  out.value = tape.value(loss)[0];
  if (want_grads) out.grads = collect_grads(bound, tape.backward(loss), params);
  return out;
}

}  // namespace

TEST_CASE("grad_check") {
  SECTION("quadratic loss is exact to 1e-7") {
    ParamStore p;
    Rng rng(17);
    p.add("x", random_tensor(rng, 2, 3));
    auto quad = [](const ParamStore& ps, bool want) {
      Tape tape;
      BoundParams bound(tape, ps);
      Var loss = tape.sum_all(tape.square(bound("x")));
      LossEval out;
      out.value = tape.value(loss)[0];
      if (want) out.grads = collect_grads(bound, tape.backward(loss), ps);
      return out;
    };
    GradCheckReport r = grad_check(quad, p, {.eps = 1e-5});
    REQUIRE(r.max_rel_error < 1e-7);
    REQUIRE(r.entries_checked == 6);
  }
  SECTION("composed graph of all primitives below 1e-4") {
    ParamStore p;
    Rng rng(23);
    p.add("a", random_tensor(rng, 3, 4));
    p.add("b", random_tensor(rng, 4, 2));
    p.add("w", random_tensor(rng, 1, 2, 0.3));
    GradCheckReport r = grad_check(composed_loss, p, {.eps = 1e-5});
    INFO(r.worst_entry);
    REQUIRE(r.max_rel_error < 1e-4);
  }
  SECTION("constant loss reports zero error") {
    ParamStore p;
    p.add("x", Tensor::scalar(2.0));
    auto konst = [](const ParamStore& ps, bool want) {
      Tape tape;
      BoundParams bound(tape, ps);
      Var c = tape.constant(4.0);
      Var loss = tape.add(c, tape.scale(bound("x"), 0.0));
      LossEval out;
      out.value = tape.value(loss)[0];
      if (want) out.grads = collect_grads(bound, tape.backward(loss), ps);
      return out;
    };
    GradCheckReport r = grad_check(konst, p, {.eps = 1e-5});
    REQUIRE(r.max_rel_error == 0.0);
  }
  SECTION("non-deterministic loss rejected") {
    ParamStore p;
    p.add("x", Tensor::scalar(1.0));
    int calls = 0;
    auto bad = [&calls](const ParamStore&, bool) {
      LossEval out;
      out.value = static_cast<double>(calls++);
      return out;
    };
    REQUIRE_THROWS_AS(grad_check(bad, p, {.eps = 1e-5}), ContractError);
  }
  SECTION("eps outside contract rejected") {
    ParamStore p;
    p.add("x", Tensor::scalar(1.0));
    auto f = [](const ParamStore&, bool) { return LossEval{}; };
    REQUIRE_THROWS_AS(grad_check(f, p, {.eps = 1e-2}), ContractError);
  }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  ParamStore p;
  Rng rng(31);
  p.add("a", random_tensor(rng, 3, 4));
  p.add("b", random_tensor(rng, 4, 2));
  p.add("w", random_tensor(rng, 1, 2, 0.3));
  LossEval e1 = composed_loss(p, true);
  LossEval e2 = composed_loss(p, true);
  REQUIRE(e1.value == e2.value);
  for (const auto& [name, g] : e1.grads) REQUIRE(g == e2.grads.at(name));
}

TEST_CASE("rng streams") {
  SECTION("derived streams differ, same stream repeats") {
    Rng a = Rng::derive(42, 0);
    Rng b = Rng::derive(42, 0);
    Rng c = Rng::derive(42, 1);
    REQUIRE(a.next_u64() == b.next_u64());
    Rng a2 = Rng::derive(42, 0);
    REQUIRE(a2.next_u64() != c.next_u64());
  }
  SECTION("sample_without_replacement is a k-subset") {
    Rng rng(99);
    auto s = rng.sample_without_replacement(10, 10);
    std::vector<bool> seen(10, false);
    for (auto i : s) {
      REQUIRE(!seen[i]);
      seen[i] = true;
    }
    REQUIRE_THROWS_AS(rng.sample_without_replacement(3, 4), ContractError);
  }
}
