// Small neural building blocks on top of the tape: LSTM cell and
// parameter initializers.

#pragma once

#include "nsm/params.hpp"
#include "nsm/rng.hpp"
#include "nsm/tape.hpp"

namespace nsm {

// Fused LSTM cell parameters, gate order i|f|g|o along the first axis.
struct LstmVars {
  Var wx;  // [4d x in_dim]
  Var wh;  // [4d x d]
  Var b;   // [4d]
};

struct LstmState {
  Var h;
  Var c;
};

// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate.
LstmState lstm_cell(Var x, LstmState s, const LstmVars& p);

// Leases the three tensors "<prefix>/wx", "<prefix>/wh", "<prefix>/b".
LstmVars lease_lstm(Pass& pass, const std::string& prefix);

// Initializers. All deterministic in the passed Rng.
Tensor init_gaussian(std::vector<int> shape, Rng& rng, double sigma);
Tensor init_xavier(int rows, int cols, Rng& rng);
Tensor init_identity(int n);

// Registers LSTM parameters (Xavier weights, zero bias except forget gate).
void add_lstm_params(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim,
                     Rng& rng, double forget_bias = 1.0);

}  // namespace nsm
