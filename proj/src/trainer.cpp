#include "nsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nsm/serialize.hpp"

using nlohmann::json;

namespace nsm {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (grad_clip_norm <= 0.0) throw ConfigError("grad_clip_norm must be positive");
  if (ema_decay <= 0.0 || ema_decay >= 1.0) throw ConfigError("ema_decay must be in (0,1)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (dim <= 0 || steps <= 0) throw ConfigError("dim and steps must be positive");
  if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
  if (early_stop_patience <= 0) throw ConfigError("early_stop_patience must be positive");
  if (threads <= 0) throw ConfigError("threads must be positive");
}

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  state.t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name);
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(w.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(w.shape)).first->second;
    for (int64_t i = 0; i < w.size(); ++i) {
      const double gi = g.data[i];
      m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
      v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
      const double m_hat = m.data[i] / bias1;
      const double v_hat = v.data[i] / bias2;
      w.data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.data) v *= s;
    }
  }
  return norm;
}

void ema_update(ParamStore& shadow, const ParamStore& raw, double decay) {
  for (auto& [name, s] : shadow.tensors) {
    const Tensor& w = raw.at(name);
    for (int64_t i = 0; i < s.size(); ++i) {
      s.data[i] = decay * s.data[i] + (1.0 - decay) * w.data[i];
    }
  }
}

double EvalMetrics::hop_accuracy(int hops) const {
  auto it = by_hops.find(hops);
  if (it == by_hops.end() || it->second.second == 0) return 0.0;
  return static_cast<double>(it->second.first) / it->second.second;
}

std::string EvalMetrics::to_json() const {
  json j;
  j["n"] = n;
  j["correct"] = correct;
  j["accuracy"] = accuracy;
  json hops = json::object();
  for (const auto& [h, cn] : by_hops) {
    hops[std::to_string(h)] = {{"correct", cn.first}, {"n", cn.second}};
  }
  j["by_hops"] = std::move(hops);
  json tmpl = json::object();
  for (const auto& [name, cn] : by_template) {
    tmpl[name] = {{"correct", cn.first}, {"n", cn.second}};
  }
  j["by_template"] = std::move(tmpl);
  j["unknown_answers"] = unknown_answers;
  return j.dump(2);
}

EvalMetrics evaluate(const NsmModel& model, const ParamStore& weights, const Dataset& data,
                     const std::vector<int>& question_ids, int steps_override) {
  EvalMetrics metrics;
  for (int qid : question_ids) {
    const QuestionRecord& q = data.questions[static_cast<size_t>(qid)];
    const SceneGraph& graph = data.graphs[static_cast<size_t>(q.graph_id)];
    Pass pass(weights, /*training=*/false);
    NsmModel::Output out = model.forward(pass, graph, q.text, steps_override);
    const Tensor& logits = pass.tape().value(out.logits);
    int argmax = 0;
    for (int i = 1; i < logits.dim(0); ++i) {
      if (logits(i) > logits(argmax)) argmax = i;
    }
    const int gold = model.answer_index(q.answer);
    if (gold < 0) metrics.unknown_answers += 1;
    const bool ok = gold >= 0 && argmax == gold;
    metrics.n += 1;
    metrics.correct += ok ? 1 : 0;
    auto& hop = metrics.by_hops[q.hop_count];
    hop.first += ok ? 1 : 0;
    hop.second += 1;
    auto& tmpl = metrics.by_template[template_name(q.template_id)];
    tmpl.first += ok ? 1 : 0;
    tmpl.second += 1;
  }
  metrics.accuracy = metrics.n == 0 ? 0.0 : static_cast<double>(metrics.correct) / metrics.n;
  return metrics;
}

namespace {

struct ShardResult {
  std::map<std::string, Tensor> grads;
  double loss_sum = 0.0;
  int n = 0;
  bool nan = false;
  std::string nan_dump;
};

void run_shard(const NsmModel& model, const Dataset& data, const std::vector<int>& batch,
               size_t begin, size_t end, const TrainConfig& cfg, uint64_t epoch_base,
               ShardResult* out) {
  for (size_t k = begin; k < end; ++k) {
    const int qid = batch[k];
    const QuestionRecord& q = data.questions[static_cast<size_t>(qid)];
    const SceneGraph& graph = data.graphs[static_cast<size_t>(q.graph_id)];
    const int target = model.answer_index(q.answer);
    if (target < 0) continue;  // unanswerable under this model's vocabulary
    Pass pass(model.params(), /*training=*/true, cfg.dropout,
              Rng::derive(epoch_base, static_cast<uint64_t>(k)));
    NsmModel::Output fwd = model.forward(pass, graph, q.text);
    Var loss = pass.tape().softmax_xent(fwd.logits, target);
    const double loss_val = pass.tape().value(loss).data[0];
    if (!std::isfinite(loss_val)) {
      out->nan = true;
      out->nan_dump = "question " + std::to_string(qid) + " ('" + q.answer +
                      "') produced loss " + std::to_string(loss_val);
      return;
    }
    pass.tape().backward(loss);
    pass.accumulate_grads(out->grads);
    out->loss_sum += loss_val;
    out->n += 1;
  }
}

}  // namespace

TrainResult train(NsmModel& model, const Dataset& data, const std::vector<int>& train_ids,
                  const std::vector<int>& val_ids, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ids.empty()) throw ConfigError("train: empty training set");
  if (val_ids.empty()) throw ConfigError("train: empty validation set");

  TrainResult result;
  result.ema = model.params();  // shadow starts at the initial weights
  AdamState adam;
  int64_t step = 0;

  ParamStore best_raw = model.params();
  ParamStore best_ema = result.ema;
  double best_val = -1.0;
  int best_epoch = -1;
  int since_best = 0;

  std::vector<int> order = train_ids;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // Seeded shuffle; depends only on (seed, epoch).
    Rng shuffle_rng(Rng::derive(cfg.seed, 0xe0000 + static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);
    }

    double epoch_loss = 0.0;
    int epoch_n = 0;
    int epoch_correct = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      std::vector<int> batch(order.begin() + static_cast<long>(off), order.begin() + static_cast<long>(end));
      const uint64_t batch_base =
          Rng::derive(cfg.seed, 0xb0000000ULL + static_cast<uint64_t>(step));

      const int n_shards = std::min<int>(cfg.threads, static_cast<int>(batch.size()));
      std::vector<ShardResult> shards(static_cast<size_t>(n_shards));
      if (n_shards <= 1) {
        run_shard(model, data, batch, 0, batch.size(), cfg, batch_base, &shards[0]);
      } else {
        std::vector<std::thread> pool;
        const size_t chunk = (batch.size() + static_cast<size_t>(n_shards) - 1) / static_cast<size_t>(n_shards);
        for (int s = 0; s < n_shards; ++s) {
          const size_t b = static_cast<size_t>(s) * chunk;
          const size_t e = std::min(batch.size(), b + chunk);
          pool.emplace_back(run_shard, std::cref(model), std::cref(data), std::cref(batch), b, e,
                            std::cref(cfg), batch_base, &shards[static_cast<size_t>(s)]);
        }
        for (auto& th : pool) th.join();
      }

      // Fixed-order reduction across shards.
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      int batch_n = 0;
      for (const ShardResult& sr : shards) {
        if (sr.nan) {
          throw TrainError("non-finite loss at step " + std::to_string(step) + ": " + sr.nan_dump);
        }
        for (const auto& [name, g] : sr.grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, g);
          } else {
            for (int64_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
          }
        }
        batch_loss += sr.loss_sum;
        batch_n += sr.n;
      }
      if (batch_n == 0) continue;
      for (auto& [name, g] : grads) {
        for (double& v : g.data) v /= batch_n;
        if (!g.all_finite()) {
          throw TrainError("non-finite gradient for " + name + " at step " + std::to_string(step));
        }
      }
      clip_gradients(grads, cfg.grad_clip_norm);
      adam_step(model.params(), grads, adam, cfg);
      ema_update(result.ema, model.params(), cfg.ema_decay);
      epoch_loss += batch_loss;
      epoch_n += batch_n;
      ++step;
    }

    const double mean_loss = epoch_n ? epoch_loss / epoch_n : 0.0;
    result.history.push_back({step, "train", "loss", mean_loss});

    EvalMetrics train_m;
    if (cfg.stop_at_train_accuracy <= 1.0) {
      train_m = evaluate(model, model.params(), data, train_ids);
      epoch_correct = train_m.correct;
      result.history.push_back({step, "train", "accuracy", train_m.accuracy});
    }
    EvalMetrics val_m = evaluate(model, result.ema, data, val_ids);
    result.history.push_back({step, "val", "accuracy", val_m.accuracy});

    if (val_m.accuracy > best_val) {
      best_val = val_m.accuracy;
      best_epoch = epoch;
      best_raw = model.params();
      best_ema = result.ema;
      since_best = 0;
    } else {
      since_best += 1;
    }
    result.epochs_run = epoch + 1;
    if (cfg.stop_at_train_accuracy <= 1.0 && epoch_n > 0 &&
        static_cast<double>(epoch_correct) / train_ids.size() >= cfg.stop_at_train_accuracy) {
      break;
    }
    if (since_best >= cfg.early_stop_patience) break;
  }

  model.params() = best_raw;
  result.ema = best_ema;
  result.best_epoch = best_epoch;
  result.best_val_accuracy = best_val;
  return result;
}

NsmModel apply_ablation(const NsmModel& model, Ablation mode) {
  NsmModel out = model;
  out.set_ablation(mode);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

static constexpr char kMagic[8] = {'N', 'S', 'M', 'C', 'K', 'P', 'T', '1'};
static constexpr uint32_t kVersion = 1;

static void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
static void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
static uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
static uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

static void write_tensor_block(std::ostream& out, const std::string& name, const Tensor& t) {
  write_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) write_u64(out, static_cast<uint64_t>(d));
  write_u64(out, static_cast<uint64_t>(t.size()));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

static std::pair<std::string, Tensor> read_tensor_block(std::istream& in) {
  const uint32_t name_len = read_u32(in);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  const uint32_t rank = read_u32(in);
  std::vector<int> shape;
  for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u64(in)));
  const uint64_t count = read_u64(in);
  std::vector<double> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw ParseError("checkpoint: truncated tensor block for " + name);
  return {name, Tensor::from(std::move(shape), std::move(data))};
}

void save_checkpoint(const std::string& path, const NsmModel& model, const ParamStore& ema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);

  json cfg;
  cfg["dim"] = model.config().dim;
  cfg["steps"] = model.config().steps;
  cfg["dropout"] = model.config().dropout;
  cfg["dense_dim"] = model.config().dense_dim;
  cfg["ablation"] = ablation_to_string(model.config().ablation);
  cfg["answers"] = model.answers();
  cfg["vocab"] = json::parse(model.vocab().to_json());
  cfg["tokens"] = json::parse(model.tokens().to_json());
  const std::string cfg_text = cfg.dump();
  write_u64(out, cfg_text.size());
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  write_u64(out, model.params().count());
  for (const auto& [name, t] : model.params().tensors) write_tensor_block(out, "raw/" + name, t);
  write_u64(out, ema.count());
  for (const auto& [name, t] : ema.tensors) write_tensor_block(out, "ema/" + name, t);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint: bad magic in " + path);
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw ParseError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                     std::to_string(kVersion) + ")");
  }
  const uint64_t cfg_len = read_u64(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  json cfg = json::parse(cfg_text);

  ModelConfig mc;
  mc.dim = cfg.at("dim").get<int>();
  mc.steps = cfg.at("steps").get<int>();
  mc.dropout = cfg.at("dropout").get<double>();
  mc.dense_dim = cfg.at("dense_dim").get<int>();
  mc.ablation = ablation_from_string(cfg.at("ablation").get<std::string>());

  ConceptVocabulary vocab = ConceptVocabulary::from_json(cfg.at("vocab").dump());
  TokenTable tokens = TokenTable::from_json(cfg.at("tokens").dump());
  std::vector<std::string> answers = cfg.at("answers").get<std::vector<std::string>>();

  Checkpoint ckpt{NsmModel(std::move(vocab), std::move(tokens), std::move(answers), mc,
                           /*seed=*/0),
                  ParamStore{}};

  const uint64_t n_raw = read_u64(in);
  for (uint64_t i = 0; i < n_raw; ++i) {
    auto [name, t] = read_tensor_block(in);
    if (name.rfind("raw/", 0) != 0) throw ParseError("checkpoint: unexpected block " + name);
    ckpt.model.params().at(name.substr(4)) = std::move(t);
  }
  const uint64_t n_ema = read_u64(in);
  for (uint64_t i = 0; i < n_ema; ++i) {
    auto [name, t] = read_tensor_block(in);
    if (name.rfind("ema/", 0) != 0) throw ParseError("checkpoint: unexpected block " + name);
    ckpt.ema.tensors[name.substr(4)] = std::move(t);
  }
  return ckpt;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open metrics file for writing: " + path);
  out << "step,split,metric,value\n";
  for (const MetricRow& r : rows) {
    out << r.step << ',' << r.split << ',' << r.metric << ',' << format_double(r.value) << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open metrics file: " + path);
  std::vector<MetricRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricRow r;
    std::string field;
    std::getline(ss, field, ',');
    r.step = std::stoll(field);
    std::getline(ss, r.split, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, field, ',');
    r.value = std::stod(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace nsm
