// Named parameter storage and the per-example forward pass context.
//
// Parameters persist across passes in a ParamStore; a Pass leases them onto
// its own tape as leaves so gradients can be read back by name afterwards.
// Map ordering makes every by-name iteration deterministic.

#pragma once

#include <map>
#include <string>

#include "nsm/tape.hpp"

namespace nsm {

struct ParamStore {
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  void add(const std::string& name, Tensor t) {
    if (has(name)) throw ConfigError("duplicate parameter: " + name);
    tensors.emplace(name, std::move(t));
  }

  size_t count() const { return tensors.size(); }
};

// One forward/backward pass. Owns the tape; leases parameters on first use.
class Pass {
 public:
  explicit Pass(const ParamStore& store, bool training = false, double dropout_rate = 0.0,
                uint64_t dropout_seed = 0)
      : store_(store), training_(training), rate_(dropout_rate), rng_(dropout_seed) {}

  Tape& tape() { return tape_; }
  bool training() const { return training_; }

  Var param(const std::string& name) {
    auto it = leased_.find(name);
    if (it != leased_.end()) return Var{&tape_, it->second};
    Var v = tape_.leaf(store_.at(name));
    leased_.emplace(name, v.id);
    return v;
  }

  Var constant(Tensor t) { return tape_.leaf(std::move(t)); }
  Var constant(double v) { return tape_.constant(v); }

  // Inverted dropout on the pass RNG stream; identity when not training.
  Var dropout(Var v) {
    if (!training_ || rate_ <= 0.0) return v;
    return tape_.dropout(v, rate_, rng_);
  }

  // After tape().backward(loss): adds each leased parameter's gradient into
  // `out`, creating zero entries on first touch.
  void accumulate_grads(std::map<std::string, Tensor>& out) const {
    for (const auto& [name, id] : leased_) {
      Tensor g = tape_.grad(Var{const_cast<Tape*>(&tape_), id});
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, std::move(g));
      } else {
        Tensor& acc = it->second;
        for (int64_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
      }
    }
  }

  const std::map<std::string, int>& leased() const { return leased_; }

 private:
  const ParamStore& store_;
  Tape tape_;
  bool training_;
  double rate_;
  Rng rng_;
  std::map<std::string, int> leased_;
};

}  // namespace nsm
