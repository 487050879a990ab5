#include "nsm/nn.hpp"

#include <cmath>

namespace nsm {

LstmState lstm_cell(Var x, LstmState s, const LstmVars& p) {
  Tape& t = *x.tape;
  const int d4 = t.value(p.b).dim(0);
  if (d4 % 4 != 0) throw ShapeError("lstm_cell: bias length must be 4*d");
  const int d = d4 / 4;
  if (t.value(s.h).dim(0) != d || t.value(s.c).dim(0) != d) {
    throw ShapeError("lstm_cell: state dimension mismatch, expected " + std::to_string(d));
  }
  Var z = t.add(t.add(t.matvec(p.wx, x), t.matvec(p.wh, s.h)), p.b);
  Var i = t.sigmoid(t.slice(z, 0, d));
  Var f = t.sigmoid(t.slice(z, d, d));
  Var g = t.tanh(t.slice(z, 2 * d, d));
  Var o = t.sigmoid(t.slice(z, 3 * d, d));
  Var c_next = t.add(t.mul(f, s.c), t.mul(i, g));
  Var h_next = t.mul(o, t.tanh(c_next));
  return LstmState{h_next, c_next};
}

LstmVars lease_lstm(Pass& pass, const std::string& prefix) {
  return LstmVars{pass.param(prefix + "/wx"), pass.param(prefix + "/wh"),
                  pass.param(prefix + "/b")};
}

Tensor init_gaussian(std::vector<int> shape, Rng& rng, double sigma) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.gaussian(0.0, sigma);
  return t;
}

Tensor init_xavier(int rows, int cols, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  const double s = std::sqrt(6.0 / (rows + cols));
  for (double& v : t.data) v = rng.uniform(-s, s);
  return t;
}

Tensor init_identity(int n) {
  Tensor t = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void add_lstm_params(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim,
                     Rng& rng, double forget_bias) {
  store.add(prefix + "/wx", init_xavier(4 * hidden_dim, in_dim, rng));
  store.add(prefix + "/wh", init_xavier(4 * hidden_dim, hidden_dim, rng));
  Tensor b = Tensor::zeros({4 * hidden_dim});
  for (int i = 0; i < hidden_dim; ++i) b(hidden_dim + i) = forget_bias;
  store.add(prefix + "/b", std::move(b));
}

}  // namespace nsm
