// Reverse-mode differentiation tape.
//
// Nodes are appended in evaluation order, so the tape order is already a
// topological order; backward() is a single reverse sweep that visits each
// node exactly once. Dispatch is over a fixed opcode set rather than stored
// closures, which keeps per-node overhead low at training time.

#pragma once

#include <cstdint>
#include <vector>

#include "nsm/rng.hpp"
#include "nsm/tensor.hpp"

namespace nsm {

class Tape;

// Handle to a tape node. Cheap to copy; valid for the lifetime of its tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,          // elementwise, same shape
  Smul,         // scalar node * tensor node
  Scale,        // tensor * compile-time constant
  Matmul,       // [m x k] * [k x n]
  Matvec,       // [m x n] * [n]  -> [m]
  Vecmat,       // [m]  * [m x n] -> [n]
  Dot,          // [n] . [n] -> scalar
  Sum,          // -> scalar
  Elem,         // pick element i -> scalar
  Slice,        // rank-1 subrange
  Concat,       // rank-1 ++ rank-1
  VStack,       // stack rank-1/rank-2 inputs into a matrix
  Row,          // row i of a matrix -> rank-1
  Softmax,      // rank-1, max-subtracted
  SoftmaxXent,  // fused softmax + cross-entropy against a target index
  Elu,
  Sigmoid,
  Tanh,
  Dropout,      // inverted dropout with a stored mask
};

class Tape {
 public:
  Var leaf(Tensor value);
  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var smul(Var scalar, Var t);
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var matvec(Var m, Var x);
  Var vecmat(Var x, Var m);
  Var dot(Var a, Var b);
  Var sum(Var a);
  Var elem(Var a, int i);
  Var slice(Var a, int offset, int len);
  Var concat(Var a, Var b);
  Var vstack(const std::vector<Var>& parts);
  Var row(Var m, int i);
  Var softmax(Var a);
  Var softmax_xent(Var logits, int target);
  Var elu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var dropout(Var a, double rate, Rng& rng);

  // Accumulates d(loss)/d(node) for every node reachable from `loss`, which
  // must be scalar. Clears any gradients from a previous sweep first, so
  // repeated calls on the same tape give identical results.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  // Gradient of the node after backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;          // empty until touched by backward()
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    int aux_i = 0;        // slice offset / elem index / xent target / row index
    int aux_j = 0;        // slice length
    double aux_d = 0.0;   // scale constant
    Tensor aux_t;         // dropout mask, xent probabilities
    std::vector<int> extra;  // vstack inputs
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  Node& at(Var v);
  const Node& at(Var v) const;
  void check_same_tape(Var v) const;
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
};

// Convenience operators for formula-heavy call sites.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace nsm
