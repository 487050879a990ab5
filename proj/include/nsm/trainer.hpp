// Training harness: cross-entropy + Adam with global-norm clipping, EMA
// shadow weights used at evaluation, early stopping, ablation variants, and
// the metric/checkpoint file formats.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nsm/machine.hpp"
#include "nsm/synthgen.hpp"

namespace nsm {

// Training failure that carries a diagnostic dump (NaN loss and the like).
class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  double grad_clip_norm = 5.0;
  double ema_decay = 0.999;
  double dropout = 0.15;
  int dim = 300;
  int steps = 8;  // N
  uint64_t seed = 0;
  int max_epochs = 50;
  int early_stop_patience = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;  // batch shards; fixed-order reduction keeps runs reproducible
  double stop_at_train_accuracy = 1.01;  // early exit for memorization runs

  void validate() const;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int64_t t = 0;
};

// One optimizer step over averaged gradients, in parameter-name order.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

// Scales gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

// shadow <- decay * shadow + (1 - decay) * raw, per tensor.
void ema_update(ParamStore& shadow, const ParamStore& raw, double decay);

struct MetricRow {
  int64_t step = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

struct EvalMetrics {
  int n = 0;
  int correct = 0;
  double accuracy = 0.0;
  std::map<int, std::pair<int, int>> by_hops;             // hops -> (correct, n)
  std::map<std::string, std::pair<int, int>> by_template; // template -> (correct, n)
  int unknown_answers = 0;  // gold answers outside the model vocabulary

  double hop_accuracy(int hops) const;
  std::string to_json() const;
};

// Deterministic evaluation of `weights` (raw or EMA) over the listed
// question ids. steps_override truncates the roll-out when >= 1.
EvalMetrics evaluate(const NsmModel& model, const ParamStore& weights, const Dataset& data,
                     const std::vector<int>& question_ids, int steps_override = -1);

struct TrainResult {
  std::vector<MetricRow> history;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  int epochs_run = 0;
  ParamStore ema;  // shadow weights at the best epoch
};

// Optimizes the model in place (restoring the best-epoch weights at the end)
// and returns the metric history plus the EMA shadow store.
TrainResult train(NsmModel& model, const Dataset& data, const std::vector<int>& train_ids,
                  const std::vector<int>& val_ids, const TrainConfig& cfg);

// Returns a copy of the model configured for the requested variant.
NsmModel apply_ablation(const NsmModel& model, Ablation mode);

// Versioned binary checkpoint: magic, version, config JSON block, named
// float64 tensor blocks for both raw and EMA weights.
void save_checkpoint(const std::string& path, const NsmModel& model, const ParamStore& ema);
struct Checkpoint {
  NsmModel model;
  ParamStore ema;
};
Checkpoint load_checkpoint(const std::string& path);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

}  // namespace nsm
