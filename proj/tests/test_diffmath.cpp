#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nsm/nn.hpp"
#include "nsm/tape.hpp"
#include "support/gradcheck.hpp"

using namespace nsm;
using nsm::testing::check_input_gradients;
using nsm::testing::GradCheckResult;

TEST_CASE("matmul identity and projector") {
  Tape t;
  Var eye = t.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
  Var a = t.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
  Tensor out = t.value(t.matmul(eye, a));
  CHECK(out.data == std::vector<double>{1, 2, 3, 4});

  Var proj = t.leaf(Tensor::from({2, 2}, {1, 0, 0, 0}));
  Var b = t.leaf(Tensor::from({2, 2}, {5, 6, 7, 8}));
  Tensor out2 = t.value(t.matmul(proj, b));
  CHECK(out2.data == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.leaf(Tensor::zeros({2, 3}));
  Var b = t.leaf(Tensor::zeros({2, 2}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("gradient of sum(A*B) wrt A equals row sums of B, matches FD") {
  Rng rng(7);
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4, 2});
  for (double& v : a.data) v = rng.uniform(-2, 2);
  for (double& v : b.data) v = rng.uniform(-2, 2);

  auto f = [](const std::vector<Tensor>& in) {
    Tape t;
    Var va = t.leaf(in[0]);
    Var vb = t.leaf(in[1]);
    return t.value(t.sum(t.matmul(va, vb))).data[0];
  };

  Tape t;
  Var va = t.leaf(a);
  Var vb = t.leaf(b);
  Var loss = t.sum(t.matmul(va, vb));
  t.backward(loss);
  Tensor ga = t.grad(va);
  Tensor gb = t.grad(vb);

  // d sum(AB) / dA_il = sum_j B_lj
  for (int i = 0; i < 3; ++i) {
    for (int l = 0; l < 4; ++l) {
      double row_sum = 0;
      for (int j = 0; j < 2; ++j) row_sum += b(l, j);
      CHECK(ga(i, l) == doctest::Approx(row_sum).epsilon(1e-12));
    }
  }
  GradCheckResult r = check_input_gradients(f, {a, b}, {ga, gb});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax trivial cases") {
  Tape t;
  Tensor even = t.value(t.softmax(t.leaf(Tensor::vec({0, 0}))));
  CHECK(even(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even(1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor forced = t.value(t.softmax(t.leaf(Tensor::vec({std::log(2.0), 0}))));
  CHECK(forced(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(forced(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor wide = t.value(t.softmax(t.leaf(Tensor::vec({1000, 0}))));
  CHECK(wide.all_finite());
  CHECK(wide(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(wide(1) < 1e-300);

  CHECK_THROWS_AS(t.softmax(t.leaf(Tensor::vec({}))), ValueError);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + rng.uniform_int(32);
    Tensor x = Tensor::zeros({n});
    for (double& v : x.data) v = rng.uniform(-2, 2);
    Tensor shifted = x;
    const double c = rng.uniform(-5, 5);
    for (double& v : shifted.data) v += c;

    Tape t;
    Tensor y = t.value(t.softmax(t.leaf(x)));
    Tensor y2 = t.value(t.softmax(t.leaf(shifted)));
    double s = 0;
    for (double v : y.data) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
    for (int i = 0; i < n; ++i) CHECK(std::abs(y(i) - y2(i)) <= 1e-9);
  }
}

TEST_CASE("elu values and gradient at -1") {
  Tape t;
  CHECK(t.value(t.elu(t.leaf(Tensor::vec({0})))).data[0] == 0.0);
  CHECK(std::abs(t.value(t.elu(t.leaf(Tensor::vec({-20})))).data[0] - (-1.0)) < 1e-8);

  auto f = [](const std::vector<Tensor>& in) {
    Tape t2;
    return t2.value(t2.sum(t2.elu(t2.leaf(in[0])))).data[0];
  };
  Tape t3;
  Var x = t3.leaf(Tensor::vec({-1.0}));
  Var loss = t3.sum(t3.elu(x));
  t3.backward(loss);
  Tensor g = t3.grad(x);
  CHECK(g(0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
  GradCheckResult r = check_input_gradients(f, {Tensor::vec({-1.0})}, {g});
  CHECK(r.max_rel_err < 1e-4);
}

static LstmVars lstm_from(Tape& t, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  return LstmVars{t.leaf(wx), t.leaf(wh), t.leaf(b)};
}

TEST_CASE("lstm cell zero weights give zero hidden state") {
  const int d = 4;
  Tape t;
  LstmVars p = lstm_from(t, Tensor::zeros({4 * d, d}), Tensor::zeros({4 * d, d}),
                         Tensor::zeros({4 * d}));
  Rng rng(3);
  Tensor x = Tensor::zeros({d});
  Tensor h = Tensor::zeros({d});
  for (double& v : x.data) v = rng.uniform(-2, 2);
  for (double& v : h.data) v = rng.uniform(-2, 2);
  LstmState s{t.leaf(h), t.leaf(Tensor::zeros({d}))};
  LstmState next = lstm_cell(t.leaf(x), s, p);
  for (double v : t.value(next.h).data) CHECK(v == 0.0);
}

TEST_CASE("lstm cell memory-carry limit: saturated forget, closed input") {
  const int d = 3;
  Tape t;
  Tensor b = Tensor::zeros({4 * d});
  for (int i = 0; i < d; ++i) {
    b(i) = -50.0;      // input gate ~ 0
    b(d + i) = 50.0;   // forget gate ~ 1
  }
  LstmVars p = lstm_from(t, Tensor::zeros({4 * d, d}), Tensor::zeros({4 * d, d}), b);
  Tensor c = Tensor::vec({0.3, -0.7, 1.2});
  LstmState s{t.leaf(Tensor::zeros({d})), t.leaf(c)};
  LstmState next = lstm_cell(t.leaf(Tensor::zeros({d})), s, p);
  Tensor c_next = t.value(next.c);
  for (int i = 0; i < d; ++i) CHECK(c_next(i) == doctest::Approx(c(i)).epsilon(1e-12));
}

TEST_CASE("lstm cell full gradient vs finite differences, d=8") {
  const int d = 8;
  Rng rng(17);
  std::vector<Tensor> inputs = {
      nsm::init_xavier(4 * d, d, rng),  // wx
      nsm::init_xavier(4 * d, d, rng),  // wh
      nsm::init_gaussian({4 * d}, rng, 0.5),
      nsm::init_gaussian({d}, rng, 1.0),  // x
      nsm::init_gaussian({d}, rng, 1.0),  // h
      nsm::init_gaussian({d}, rng, 1.0),  // c
      nsm::init_gaussian({d}, rng, 1.0),  // probe vector for the scalar head
  };
  auto f = [d](const std::vector<Tensor>& in) {
    Tape t;
    LstmVars p = lstm_from(t, in[0], in[1], in[2]);
    LstmState s{t.leaf(in[4]), t.leaf(in[5])};
    LstmState next = lstm_cell(t.leaf(in[3]), s, p);
    Var probe = t.leaf(in[6]);
    return t.value(t.add(t.dot(probe, next.h), t.dot(probe, next.c))).data[0];
  };

  Tape t;
  LstmVars p = lstm_from(t, inputs[0], inputs[1], inputs[2]);
  Var x = t.leaf(inputs[3]);
  LstmState s{t.leaf(inputs[4]), t.leaf(inputs[5])};
  LstmState next = lstm_cell(x, s, p);
  Var probe = t.leaf(inputs[6]);
  Var loss = t.add(t.dot(probe, next.h), t.dot(probe, next.c));
  t.backward(loss);
  std::vector<Tensor> grads = {t.grad(p.wx), t.grad(p.wh), t.grad(p.b), t.grad(x),
                               t.grad(s.h),  t.grad(s.c),  t.grad(probe)};
  GradCheckResult r = check_input_gradients(f, inputs, grads);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("backward on x^2") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var loss = t.mul(x, x);
  t.backward(loss);
  CHECK(t.grad(x).data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape t;
  Var x = t.leaf(Tensor::vec({1, 2}));
  CHECK_THROWS_AS(t.backward(x), ValueError);
}

TEST_CASE("softmax cross-entropy of uniform logits") {
  const int k = 5;
  const int target = 2;
  Tape t;
  Var logits = t.leaf(Tensor::zeros({k}));
  Var loss = t.softmax_xent(logits, target);
  CHECK(t.value(loss).data[0] == doctest::Approx(std::log(double(k))).epsilon(1e-12));
  t.backward(loss);
  Tensor g = t.grad(logits);
  for (int i = 0; i < k; ++i) {
    const double expect = 1.0 / k - (i == target ? 1.0 : 0.0);
    CHECK(g(i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("repeated backward over the same tape is bit-identical") {
  Rng rng(23);
  Tape t;
  Var a = t.leaf(nsm::init_gaussian({6}, rng, 1.0));
  Var b = t.leaf(nsm::init_gaussian({6}, rng, 1.0));
  Var loss = t.sum(t.mul(t.elu(a), t.tanh(b)));
  t.backward(loss);
  Tensor g1a = t.grad(a), g1b = t.grad(b);
  t.backward(loss);
  Tensor g2a = t.grad(a), g2b = t.grad(b);
  CHECK(g1a.data == g2a.data);
  CHECK(g1b.data == g2b.data);
}

// Per-op finite-difference sweep over random inputs in [-2, 2].
TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(31);
  auto rand_t = [&](std::vector<int> shape) {
    Tensor x = Tensor::zeros(std::move(shape));
    for (double& v : x.data) v = rng.uniform(-2, 2);
    return x;
  };

  struct OpCase {
    const char* name;
    std::vector<Tensor> inputs;
    std::function<Var(Tape&, const std::vector<Var>&)> build;
  };
  const int d = 7;
  Tensor probe_v = rand_t({d});
  Tensor probe_m = rand_t({3});

  std::vector<OpCase> cases;
  cases.push_back({"add", {rand_t({d}), rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.add(v[0], v[1])); }});
  cases.push_back({"sub", {rand_t({d}), rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.sub(v[0], v[1])); }});
  cases.push_back({"mul", {rand_t({d}), rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }});
  cases.push_back({"smul", {rand_t({}), rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.smul(v[0], v[1])); }});
  cases.push_back({"scale", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.scale(v[0], -1.7)); }});
  cases.push_back({"matmul", {rand_t({3, 4}), rand_t({4, 2})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.sum(t.elu(t.matmul(v[0], v[1])));
                   }});
  cases.push_back({"matvec", {rand_t({3, d}), rand_t({d})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_m), t.matvec(v[0], v[1]));
                   }});
  cases.push_back({"vecmat", {rand_t({3}), rand_t({3, d})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_v), t.vecmat(v[0], v[1]));
                   }});
  cases.push_back({"dot", {rand_t({d}), rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.dot(v[0], v[1]); }});
  cases.push_back({"sum", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.tanh(v[0])); }});
  cases.push_back({"elem", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.elem(t.sigmoid(v[0]), 3); }});
  cases.push_back({"slice", {rand_t({d})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_m), t.slice(v[0], 2, 3));
                   }});
  cases.push_back({"concat", {rand_t({3}), rand_t({4})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_v), t.concat(v[0], v[1]));
                   }});
  cases.push_back({"vstack", {rand_t({d}), rand_t({2, d}), rand_t({d})},
                   [&](Tape& t, const std::vector<Var>& v) {
                     return t.sum(t.elu(t.matvec(t.vstack({v[0], v[1], v[2]}), t.leaf(probe_v))));
                   }});
  cases.push_back({"row", {rand_t({3, d})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_v), t.row(v[0], 1));
                   }});
  cases.push_back({"softmax", {rand_t({d})}, [&](Tape& t, const std::vector<Var>& v) {
                     return t.dot(t.leaf(probe_v), t.softmax(v[0]));
                   }});
  cases.push_back({"softmax_xent", {rand_t({d})}, [](Tape& t, const std::vector<Var>& v) {
                     return t.softmax_xent(v[0], 2);
                   }});
  cases.push_back({"elu", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.elu(v[0])); }});
  cases.push_back({"sigmoid", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.sigmoid(v[0])); }});
  cases.push_back({"tanh", {rand_t({d})},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(t.tanh(v[0])); }});

  for (const OpCase& c : cases) {
    CAPTURE(c.name);
    auto f = [&](const std::vector<Tensor>& in) {
      Tape t;
      std::vector<Var> vars;
      for (const Tensor& x : in) vars.push_back(t.leaf(x));
      return t.value(c.build(t, vars)).data[0];
    };
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& x : c.inputs) vars.push_back(t.leaf(x));
    Var loss = c.build(t, vars);
    t.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(t.grad(v));
    auto r = check_input_gradients(f, c.inputs, grads);
    INFO(r.worst);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("dropout scales kept entries and zeroes dropped ones") {
  Rng rng(5);
  Tape t;
  Tensor x = Tensor::full({1000}, 1.0);
  Var v = t.leaf(x);
  Var y = t.dropout(v, 0.25, rng);
  const Tensor out = t.value(y);  // copy: later ops may reallocate the tape
  int kept = 0;
  for (double u : out.data) {
    if (u != 0.0) {
      CHECK(u == doctest::Approx(1.0 / 0.75).epsilon(1e-12));
      ++kept;
    }
  }
  CHECK(kept > 600);
  CHECK(kept < 900);
  // Gradient equals the mask.
  t.backward(t.sum(y));
  const Tensor g = t.grad(v);
  for (int64_t i = 0; i < g.size(); ++i) {
    CHECK(g.data[i] == out.data[i]);
  }
}

TEST_CASE("finite outputs on finite inputs across ops") {
  Rng rng(41);
  Tape t;
  Var a = t.leaf(nsm::init_gaussian({16}, rng, 2.0));
  Var b = t.leaf(nsm::init_gaussian({16}, rng, 2.0));
  Var y = t.softmax(t.mul(t.elu(a), t.tanh(b)));
  CHECK(t.value(y).all_finite());
}
