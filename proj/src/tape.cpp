#include "nsm/tape.hpp"

#include <cmath>
#include <cstring>

namespace nsm {

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::at(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
const Tape::Node& Tape::at(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }

void Tape::check_same_tape(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ValueError("Var does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::Leaf;
  return wrap(push(std::move(n)));
}

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (!ta.same_shape(tb)) {
    throw ShapeError("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  }
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.value = ta;
  for (int64_t i = 0; i < n.value.size(); ++i) n.value.data[i] += tb.data[i];
  return wrap(push(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (!ta.same_shape(tb)) {
    throw ShapeError("sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  }
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.value = ta;
  for (int64_t i = 0; i < n.value.size(); ++i) n.value.data[i] -= tb.data[i];
  return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (!ta.same_shape(tb)) {
    throw ShapeError("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  }
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.value = ta;
  for (int64_t i = 0; i < n.value.size(); ++i) n.value.data[i] *= tb.data[i];
  return wrap(push(std::move(n)));
}

Var Tape::smul(Var scalar, Var t) {
  check_same_tape(scalar);
  check_same_tape(t);
  const Tensor& ts = at(scalar).value;
  if (ts.size() != 1 || ts.rank() != 0) {
    throw ShapeError("smul: first operand must be scalar, got " + shape_str(ts.shape));
  }
  Node n;
  n.op = Op::Smul;
  n.a = scalar.id;
  n.b = t.id;
  n.value = at(t).value;
  double s = ts.data[0];
  for (double& v : n.value.data) v *= s;
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a);
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.aux_d = c;
  n.value = at(a).value;
  for (double& v : n.value.data) v *= c;
  return wrap(push(std::move(n)));
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(ta.shape) + " x " +
                     shape_str(tb.shape));
  }
  const int m = ta.rows(), k = ta.cols(), p = tb.cols();
  Node n;
  n.op = Op::Matmul;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor::zeros({m, p});
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = ta(i, l);
      if (av == 0.0) continue;
      for (int j = 0; j < p; ++j) n.value(i, j) += av * tb(l, j);
    }
  }
  return wrap(push(std::move(n)));
}

Var Tape::matvec(Var m, Var x) {
  check_same_tape(m);
  check_same_tape(x);
  const Tensor& tm = at(m).value;
  const Tensor& tx = at(x).value;
  if (tm.rank() != 2 || tx.rank() != 1 || tm.cols() != tx.dim(0)) {
    throw ShapeError("matvec: dimension mismatch " + shape_str(tm.shape) + " x " +
                     shape_str(tx.shape));
  }
  const int rows = tm.rows(), cols = tm.cols();
  Node n;
  n.op = Op::Matvec;
  n.a = m.id;
  n.b = x.id;
  n.value = Tensor::zeros({rows});
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* mrow = &tm.data[static_cast<size_t>(i) * cols];
    for (int j = 0; j < cols; ++j) acc += mrow[j] * tx.data[j];
    n.value(i) = acc;
  }
  return wrap(push(std::move(n)));
}

Var Tape::vecmat(Var x, Var m) {
  check_same_tape(x);
  check_same_tape(m);
  const Tensor& tx = at(x).value;
  const Tensor& tm = at(m).value;
  if (tx.rank() != 1 || tm.rank() != 2 || tx.dim(0) != tm.rows()) {
    throw ShapeError("vecmat: dimension mismatch " + shape_str(tx.shape) + " x " +
                     shape_str(tm.shape));
  }
  const int rows = tm.rows(), cols = tm.cols();
  Node n;
  n.op = Op::Vecmat;
  n.a = x.id;
  n.b = m.id;
  n.value = Tensor::zeros({cols});
  for (int i = 0; i < rows; ++i) {
    const double xv = tx.data[i];
    if (xv == 0.0) continue;
    const double* mrow = &tm.data[static_cast<size_t>(i) * cols];
    for (int j = 0; j < cols; ++j) n.value(j) += xv * mrow[j];
  }
  return wrap(push(std::move(n)));
}

Var Tape::dot(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (ta.rank() != 1 || tb.rank() != 1 || ta.dim(0) != tb.dim(0)) {
    throw ShapeError("dot: dimension mismatch " + shape_str(ta.shape) + " . " +
                     shape_str(tb.shape));
  }
  double acc = 0.0;
  for (int64_t i = 0; i < ta.size(); ++i) acc += ta.data[i] * tb.data[i];
  Node n;
  n.op = Op::Dot;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor::scalar(acc);
  return wrap(push(std::move(n)));
}

Var Tape::sum(Var a) {
  check_same_tape(a);
  double acc = 0.0;
  for (double v : at(a).value.data) acc += v;
  Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.value = Tensor::scalar(acc);
  return wrap(push(std::move(n)));
}

Var Tape::elem(Var a, int i) {
  check_same_tape(a);
  const Tensor& ta = at(a).value;
  if (i < 0 || i >= ta.size()) {
    throw ShapeError("elem: index " + std::to_string(i) + " out of range for " +
                     shape_str(ta.shape));
  }
  Node n;
  n.op = Op::Elem;
  n.a = a.id;
  n.aux_i = i;
  n.value = Tensor::scalar(ta.data[i]);
  return wrap(push(std::move(n)));
}

Var Tape::slice(Var a, int offset, int len) {
  check_same_tape(a);
  const Tensor& ta = at(a).value;
  if (ta.rank() != 1 || offset < 0 || len < 0 || offset + len > ta.dim(0)) {
    throw ShapeError("slice: [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                     ") out of range for " + shape_str(ta.shape));
  }
  Node n;
  n.op = Op::Slice;
  n.a = a.id;
  n.aux_i = offset;
  n.aux_j = len;
  n.value = Tensor::zeros({len});
  std::memcpy(n.value.data.data(), ta.data.data() + offset, sizeof(double) * len);
  return wrap(push(std::move(n)));
}

Var Tape::concat(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (ta.rank() != 1 || tb.rank() != 1) {
    throw ShapeError("concat: expects rank-1 operands, got " + shape_str(ta.shape) + " and " +
                     shape_str(tb.shape));
  }
  Node n;
  n.op = Op::Concat;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor::zeros({ta.dim(0) + tb.dim(0)});
  std::memcpy(n.value.data.data(), ta.data.data(), sizeof(double) * ta.data.size());
  std::memcpy(n.value.data.data() + ta.dim(0), tb.data.data(), sizeof(double) * tb.data.size());
  return wrap(push(std::move(n)));
}

Var Tape::vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValueError("vstack: no inputs");
  int cols = -1;
  int rows = 0;
  for (Var p : parts) {
    check_same_tape(p);
    const Tensor& t = at(p).value;
    int c;
    if (t.rank() == 1) {
      c = t.dim(0);
      rows += 1;
    } else if (t.rank() == 2) {
      c = t.cols();
      rows += t.rows();
    } else {
      throw ShapeError("vstack: expects rank-1 or rank-2 inputs, got " + shape_str(t.shape));
    }
    if (cols == -1) cols = c;
    if (c != cols) {
      throw ShapeError("vstack: column mismatch " + std::to_string(cols) + " vs " +
                       std::to_string(c));
    }
  }
  Node n;
  n.op = Op::VStack;
  n.extra.reserve(parts.size());
  for (Var p : parts) n.extra.push_back(p.id);
  n.value = Tensor::zeros({rows, cols});
  double* out = n.value.data.data();
  for (Var p : parts) {
    const Tensor& t = at(p).value;
    std::memcpy(out, t.data.data(), sizeof(double) * t.data.size());
    out += t.data.size();
  }
  return wrap(push(std::move(n)));
}

Var Tape::row(Var m, int i) {
  check_same_tape(m);
  const Tensor& tm = at(m).value;
  if (tm.rank() != 2 || i < 0 || i >= tm.rows()) {
    throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                     shape_str(tm.shape));
  }
  Node n;
  n.op = Op::Row;
  n.a = m.id;
  n.aux_i = i;
  n.value = Tensor::zeros({tm.cols()});
  std::memcpy(n.value.data.data(), &tm.data[static_cast<size_t>(i) * tm.cols()],
              sizeof(double) * tm.cols());
  return wrap(push(std::move(n)));
}

Var Tape::softmax(Var a) {
  check_same_tape(a);
  const Tensor& ta = at(a).value;
  if (ta.rank() != 1 || ta.dim(0) < 1) {
    throw ValueError("softmax: expects a non-empty vector, got " + shape_str(ta.shape));
  }
  Node n;
  n.op = Op::Softmax;
  n.a = a.id;
  n.value = Tensor::zeros({ta.dim(0)});
  double mx = ta.data[0];
  for (double v : ta.data) mx = std::max(mx, v);
  double z = 0.0;
  for (int64_t i = 0; i < ta.size(); ++i) {
    n.value.data[i] = std::exp(ta.data[i] - mx);
    z += n.value.data[i];
  }
  for (double& v : n.value.data) v /= z;
  return wrap(push(std::move(n)));
}

Var Tape::softmax_xent(Var logits, int target) {
  check_same_tape(logits);
  const Tensor& tl = at(logits).value;
  if (tl.rank() != 1 || tl.dim(0) < 1) {
    throw ValueError("softmax_xent: expects a non-empty vector, got " + shape_str(tl.shape));
  }
  if (target < 0 || target >= tl.dim(0)) {
    throw ValueError("softmax_xent: target " + std::to_string(target) + " out of range");
  }
  Node n;
  n.op = Op::SoftmaxXent;
  n.a = logits.id;
  n.aux_i = target;
  n.aux_t = Tensor::zeros({tl.dim(0)});
  double mx = tl.data[0];
  for (double v : tl.data) mx = std::max(mx, v);
  double z = 0.0;
  for (int64_t i = 0; i < tl.size(); ++i) {
    n.aux_t.data[i] = std::exp(tl.data[i] - mx);
    z += n.aux_t.data[i];
  }
  for (double& v : n.aux_t.data) v /= z;
  n.value = Tensor::scalar(-(tl.data[target] - mx - std::log(z)));
  return wrap(push(std::move(n)));
}

Var Tape::elu(Var a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Elu;
  n.a = a.id;
  n.value = at(a).value;
  for (double& v : n.value.data) v = v >= 0.0 ? v : std::expm1(v);
  return wrap(push(std::move(n)));
}

Var Tape::sigmoid(Var a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.value = at(a).value;
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  return wrap(push(std::move(n)));
}

Var Tape::tanh(Var a) {
  check_same_tape(a);
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.value = at(a).value;
  for (double& v : n.value.data) v = std::tanh(v);
  return wrap(push(std::move(n)));
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  check_same_tape(a);
  if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0,1)");
  Node n;
  n.op = Op::Dropout;
  n.a = a.id;
  n.value = at(a).value;
  n.aux_t = Tensor::zeros(n.value.shape);
  const double keep = 1.0 - rate;
  for (int64_t i = 0; i < n.value.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    n.aux_t.data[i] = m;
    n.value.data[i] *= m;
  }
  return wrap(push(std::move(n)));
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  check_same_tape(v);
  const Node& n = at(v);
  if (n.grad.data.empty()) return Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  const Node& ln = at(loss);
  if (ln.value.rank() != 0 || ln.value.size() != 1) {
    throw ValueError("backward: loss must be scalar, got " + shape_str(ln.value.shape));
  }
  for (Node& n : nodes_) n.grad.data.clear();
  grad_buf(loss.id).data[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty() || n.op == Op::Leaf) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        for (int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
        break;
      }
      case Op::Sub: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        for (int64_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
        break;
      }
      case Op::Mul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        {
          Tensor& ga = grad_buf(n.a);
          for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        }
        {
          Tensor& gb = grad_buf(n.b);
          for (int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
        }
        break;
      }
      case Op::Smul: {
        const double s = nodes_[n.a].value.data[0];
        const Tensor& vb = nodes_[n.b].value;
        double acc = 0.0;
        for (int64_t i = 0; i < g.size(); ++i) acc += g.data[i] * vb.data[i];
        grad_buf(n.a).data[0] += acc;
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * s;
        break;
      }
      case Op::Scale: {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.aux_d;
        break;
      }
      case Op::Matmul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        const int m = va.rows(), k = va.cols(), p = vb.cols();
        {
          Tensor& ga = grad_buf(n.a);  // g . B^T
          for (int i = 0; i < m; ++i) {
            for (int l = 0; l < k; ++l) {
              double acc = 0.0;
              for (int j = 0; j < p; ++j) acc += g(i, j) * vb(l, j);
              ga(i, l) += acc;
            }
          }
        }
        {
          Tensor& gb = grad_buf(n.b);  // A^T . g
          for (int l = 0; l < k; ++l) {
            for (int i = 0; i < m; ++i) {
              const double av = va(i, l);
              if (av == 0.0) continue;
              for (int j = 0; j < p; ++j) gb(l, j) += av * g(i, j);
            }
          }
        }
        break;
      }
      case Op::Matvec: {
        const Tensor& vm = nodes_[n.a].value;
        const Tensor& vx = nodes_[n.b].value;
        const int rows = vm.rows(), cols = vm.cols();
        Tensor& gm = grad_buf(n.a);
        Tensor& gx = grad_buf(n.b);
        for (int i = 0; i < rows; ++i) {
          const double gi = g.data[i];
          if (gi == 0.0) continue;
          double* gmrow = &gm.data[static_cast<size_t>(i) * cols];
          const double* mrow = &vm.data[static_cast<size_t>(i) * cols];
          for (int j = 0; j < cols; ++j) {
            gmrow[j] += gi * vx.data[j];
            gx.data[j] += gi * mrow[j];
          }
        }
        break;
      }
      case Op::Vecmat: {
        const Tensor& vx = nodes_[n.a].value;
        const Tensor& vm = nodes_[n.b].value;
        const int rows = vm.rows(), cols = vm.cols();
        Tensor& gx = grad_buf(n.a);
        Tensor& gm = grad_buf(n.b);
        for (int i = 0; i < rows; ++i) {
          const double xi = vx.data[i];
          const double* mrow = &vm.data[static_cast<size_t>(i) * cols];
          double* gmrow = &gm.data[static_cast<size_t>(i) * cols];
          double acc = 0.0;
          for (int j = 0; j < cols; ++j) {
            acc += g.data[j] * mrow[j];
            gmrow[j] += xi * g.data[j];
          }
          gx.data[i] += acc;
        }
        break;
      }
      case Op::Dot: {
        const double gs = g.data[0];
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < va.size(); ++i) {
          ga.data[i] += gs * vb.data[i];
          gb.data[i] += gs * va.data[i];
        }
        break;
      }
      case Op::Sum: {
        const double gs = g.data[0];
        Tensor& ga = grad_buf(n.a);
        for (double& v : ga.data) v += gs;
        break;
      }
      case Op::Elem: {
        grad_buf(n.a).data[n.aux_i] += g.data[0];
        break;
      }
      case Op::Slice: {
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < n.aux_j; ++i) ga.data[n.aux_i + i] += g.data[i];
        break;
      }
      case Op::Concat: {
        Tensor& ga = grad_buf(n.a);
        Tensor& gb = grad_buf(n.b);
        const int64_t na = ga.size();
        for (int64_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
        for (int64_t i = 0; i < gb.size(); ++i) gb.data[i] += g.data[na + i];
        break;
      }
      case Op::VStack: {
        const double* gp = g.data.data();
        for (int src : n.extra) {
          Tensor& gs = grad_buf(src);
          for (int64_t i = 0; i < gs.size(); ++i) gs.data[i] += gp[i];
          gp += gs.size();
        }
        break;
      }
      case Op::Row: {
        Tensor& gm = grad_buf(n.a);
        const int cols = nodes_[n.a].value.cols();
        double* grow = &gm.data[static_cast<size_t>(n.aux_i) * cols];
        for (int j = 0; j < cols; ++j) grow[j] += g.data[j];
        break;
      }
      case Op::Softmax: {
        // ds = y * (g - <g, y>)
        const Tensor& y = n.value;
        double gy = 0.0;
        for (int64_t i = 0; i < y.size(); ++i) gy += g.data[i] * y.data[i];
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < y.size(); ++i) ga.data[i] += y.data[i] * (g.data[i] - gy);
        break;
      }
      case Op::SoftmaxXent: {
        const double gs = g.data[0];
        const Tensor& p = n.aux_t;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < p.size(); ++i) {
          ga.data[i] += gs * (p.data[i] - (i == n.aux_i ? 1.0 : 0.0));
        }
        break;
      }
      case Op::Elu: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& y = n.value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < y.size(); ++i) {
          ga.data[i] += g.data[i] * (x.data[i] >= 0.0 ? 1.0 : y.data[i] + 1.0);
        }
        break;
      }
      case Op::Sigmoid: {
        const Tensor& y = n.value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < y.size(); ++i) {
          ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
        }
        break;
      }
      case Op::Tanh: {
        const Tensor& y = n.value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < y.size(); ++i) {
          ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
        }
        break;
      }
      case Op::Dropout: {
        const Tensor& mask = n.aux_t;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < mask.size(); ++i) ga.data[i] += g.data[i] * mask.data[i];
        break;
      }
    }
  }
}

}  // namespace nsm
