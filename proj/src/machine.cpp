#include "nsm/machine.hpp"

#include <cmath>

namespace nsm {

double StateDistribution::sum() const {
  double s = 0.0;
  for (double v : probs) s += v;
  return s;
}

void StateDistribution::validate(double tol) const {
  if (probs.empty()) throw ValueError("state distribution is empty");
  for (double v : probs) {
    if (v < 0.0 || !std::isfinite(v)) throw ValueError("state distribution has invalid mass");
  }
  if (std::abs(sum() - 1.0) > tol) {
    throw ValueError("state distribution sums to " + std::to_string(sum()));
  }
}

namespace machine_params {
std::string property_bilinear(int j) { return "prop/W" + std::to_string(j); }
}  // namespace machine_params

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "no_concepts") return Ablation::NoConcepts;
  if (s == "no_relations") return Ablation::NoRelations;
  if (s == "no_traversal") return Ablation::NoTraversal;
  throw ConfigError("unknown ablation: " + s);
}

std::string ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoConcepts: return "no_concepts";
    case Ablation::NoRelations: return "no_relations";
    case Ablation::NoTraversal: return "no_traversal";
  }
  return "full";
}

GraphReps graph_representations(Pass& pass, const SceneGraph& graph,
                                const ConceptVocabulary& vocab, const ModelConfig& cfg) {
  Tape& t = pass.tape();
  GraphReps reps;
  const int n_props = vocab.num_groups() - 1;

  Var dense_proj;
  if (cfg.ablation == Ablation::NoConcepts) {
    if (cfg.dense_dim <= 0) throw ConfigError("no_concepts ablation needs dense_dim > 0");
    dense_proj = pass.param(machine_params::kDenseProj);
  }

  for (const StateNode& node : graph.nodes) {
    std::vector<Var> props;
    if (cfg.ablation == Ablation::NoConcepts) {
      if (node.dense_features.empty()) {
        throw ConfigError("no_concepts ablation: graph node lacks dense features");
      }
      Var dense = pass.constant(Tensor::vec(node.dense_features));
      Var s = pass.dropout(t.matvec(dense_proj, dense));
      props.assign(static_cast<size_t>(n_props), s);
    } else {
      props = state_representation_vars(pass, node, vocab);
      for (Var& s : props) s = pass.dropout(s);
    }
    std::vector<Var> proj;
    proj.reserve(props.size());
    for (int j = 0; j < n_props; ++j) {
      Var w = pass.param(machine_params::property_bilinear(j));
      proj.push_back(t.matvec(w, props[static_cast<size_t>(j)]));
    }
    reps.node_props.push_back(std::move(props));
    reps.node_proj.push_back(std::move(proj));
  }

  Var w_rel = pass.param(machine_params::kRelationBilinear);
  for (const TransitionEdge& edge : graph.edges) {
    Var e = pass.dropout(edge_representation_vars(pass, edge, vocab));
    reps.edge_reps.push_back(e);
    reps.edge_proj.push_back(t.matvec(w_rel, e));
  }
  return reps;
}

TypeResult instruction_type(Pass& pass, Var instruction) {
  Tape& t = pass.tape();
  Var d = pass.param(ConceptVocabulary::property_param());
  Var logits = t.matvec(d, instruction);
  Var dist = t.softmax(logits);
  const int n_groups = t.value(d).rows();
  return TypeResult{dist, t.elem(dist, n_groups - 1)};
}

Relevance relevance_scores(Pass& pass, Var instruction, Var type_dist, const GraphReps& reps) {
  Tape& t = pass.tape();
  Relevance rel;
  const int n_props = reps.node_props.empty() ? 0 : static_cast<int>(reps.node_props.front().size());
  std::vector<Var> weights;
  weights.reserve(static_cast<size_t>(n_props));
  for (int j = 0; j < n_props; ++j) weights.push_back(t.elem(type_dist, j));

  for (const std::vector<Var>& proj : reps.node_proj) {
    // sum_j R(j) (r o W_j s^j) = r o sum_j R(j) W_j s^j
    Var mix = t.smul(weights[0], proj[0]);
    for (int j = 1; j < n_props; ++j) {
      mix = t.add(mix, t.smul(weights[static_cast<size_t>(j)], proj[static_cast<size_t>(j)]));
    }
    rel.nodes.push_back(t.elu(t.mul(instruction, mix)));
  }
  for (const Var& proj : reps.edge_proj) {
    rel.edges.push_back(t.elu(t.mul(instruction, proj)));
  }
  return rel;
}

Var transition(Pass& pass, Var p, const Relevance& rel, Var relation_weight,
               const SceneGraph& graph) {
  Tape& t = pass.tape();
  const int n_nodes = static_cast<int>(graph.nodes.size());
  const int d = t.value(rel.nodes.front()).dim(0);

  Var w_s = pass.param(machine_params::kStateProj);
  Var w_r = pass.param(machine_params::kRelationProj);

  Var gamma_nodes = t.vstack(rel.nodes);                // V x d
  Var p_state = t.softmax(t.matvec(gamma_nodes, w_s));  // internal-property branch

  // Aggregate incoming-edge relevance weighted by the current distribution.
  std::vector<std::vector<int>> incoming(static_cast<size_t>(n_nodes));
  for (size_t k = 0; k < graph.edges.size(); ++k) {
    incoming[static_cast<size_t>(graph.edges[k].target)].push_back(static_cast<int>(k));
  }
  Var zero = pass.constant(Tensor::zeros({d}));
  std::vector<Var> agg;
  agg.reserve(static_cast<size_t>(n_nodes));
  for (int s = 0; s < n_nodes; ++s) {
    const auto& in_edges = incoming[static_cast<size_t>(s)];
    if (in_edges.empty()) {
      agg.push_back(zero);
      continue;
    }
    Var acc = t.smul(t.elem(p, graph.edges[static_cast<size_t>(in_edges[0])].source),
                     rel.edges[static_cast<size_t>(in_edges[0])]);
    for (size_t k = 1; k < in_edges.size(); ++k) {
      const TransitionEdge& e = graph.edges[static_cast<size_t>(in_edges[k])];
      acc = t.add(acc, t.smul(t.elem(p, e.source), rel.edges[static_cast<size_t>(in_edges[k])]));
    }
    agg.push_back(acc);
  }
  Var p_relation = t.softmax(t.matvec(t.vstack(agg), w_r));

  Var one = pass.constant(1.0);
  return t.add(t.smul(relation_weight, p_relation),
               t.smul(t.sub(one, relation_weight), p_state));
}

SimResult simulate(Pass& pass, const SceneGraph& graph, const GraphReps& reps,
                   const std::vector<Var>& instructions, const std::vector<TypeResult>& types,
                   int n_steps) {
  if (n_steps < 1) throw ValueError("simulate: need at least one step");
  if (static_cast<int>(instructions.size()) != n_steps + 1) {
    throw ValueError("simulate: expected " + std::to_string(n_steps + 1) + " instructions, got " +
                     std::to_string(instructions.size()));
  }
  if (types.size() != instructions.size()) {
    throw ValueError("simulate: types/instructions length mismatch");
  }
  Tape& t = pass.tape();
  const int n_nodes = static_cast<int>(graph.nodes.size());

  SimResult out;
  Var p = pass.constant(Tensor::full({n_nodes}, 1.0 / n_nodes));
  for (int i = 0; i < n_steps; ++i) {
    Relevance rel = relevance_scores(pass, instructions[static_cast<size_t>(i)],
                                     types[static_cast<size_t>(i)].dist, reps);
    Var p_next = transition(pass, p, rel, types[static_cast<size_t>(i)].relation_weight, graph);

    TraversalStep step;
    step.step_index = i;
    step.type_dist = t.value(types[static_cast<size_t>(i)].dist).data;
    step.relation_weight = t.value(types[static_cast<size_t>(i)].relation_weight).data[0];
    for (const Var& g : rel.nodes) step.node_relevance.push_back(t.value(g).data);
    for (const Var& g : rel.edges) step.edge_relevance.push_back(t.value(g).data);
    step.p_next = t.value(p_next).data;
    out.trace.push_back(std::move(step));
    p = p_next;
  }
  out.p_final = p;
  return out;
}

SimResult simulate(Pass& pass, const SceneGraph& graph, const ConceptVocabulary& vocab,
                   const std::vector<Var>& instructions, int n_steps) {
  ModelConfig cfg;
  cfg.dim = vocab.dim();
  GraphReps reps = graph_representations(pass, graph, vocab, cfg);
  std::vector<TypeResult> types;
  types.reserve(instructions.size());
  for (Var r : instructions) types.push_back(instruction_type(pass, r));
  return simulate(pass, graph, reps, instructions, types, n_steps);
}

Var readout(Pass& pass, Var p_final, Var type_dist_final, const GraphReps& reps) {
  Tape& t = pass.tape();
  const int n_props = static_cast<int>(reps.node_props.front().size());
  std::vector<Var> weights;
  weights.reserve(static_cast<size_t>(n_props));
  for (int j = 0; j < n_props; ++j) weights.push_back(t.elem(type_dist_final, j));

  Var m;
  for (size_t s = 0; s < reps.node_props.size(); ++s) {
    Var blended = t.smul(weights[0], reps.node_props[s][0]);
    for (int j = 1; j < n_props; ++j) {
      blended = t.add(blended,
                      t.smul(weights[static_cast<size_t>(j)], reps.node_props[s][static_cast<size_t>(j)]));
    }
    Var term = t.smul(t.elem(p_final, static_cast<int>(s)), blended);
    m = (s == 0) ? term : t.add(m, term);
  }
  return m;
}

Var answer_logits(Pass& pass, Var question_summary, Var readout_vec, int n_answers) {
  Tape& t = pass.tape();
  Var x = pass.dropout(t.concat(question_summary, readout_vec));
  Var h = t.elu(t.add(t.matvec(pass.param(machine_params::kClsW1), x),
                      pass.param(machine_params::kClsB1)));
  Var logits = t.add(t.matvec(pass.param(machine_params::kClsW2), h),
                     pass.param(machine_params::kClsB2));
  const Tensor& lv = t.value(logits);
  if (lv.dim(0) != n_answers) {
    throw ShapeError("classifier emits " + std::to_string(lv.dim(0)) + " logits, expected " +
                     std::to_string(n_answers));
  }
  return logits;
}

Var classify(Pass& pass, Var question_summary, Var readout_vec, int n_answers) {
  return pass.tape().softmax(answer_logits(pass, question_summary, readout_vec, n_answers));
}

SceneGraph uniform_relations_graph(const SceneGraph& graph, int n_relations) {
  SceneGraph out = graph;
  out.edges.clear();
  const int n = static_cast<int>(graph.nodes.size());
  std::vector<double> uniform(static_cast<size_t>(n_relations), 1.0 / n_relations);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) out.edges.push_back({i, j, uniform});
    }
  }
  return out;
}

std::vector<std::string> default_answer_vocabulary(const ConceptVocabulary& vocab) {
  std::vector<std::string> answers;
  for (int g = 0; g < vocab.num_groups() - 1; ++g) {  // identity + attribute groups
    const auto& names = vocab.group_concepts(g);
    answers.insert(answers.end(), names.begin(), names.end());
  }
  answers.push_back("yes");
  answers.push_back("no");
  return answers;
}

NsmModel::NsmModel(ConceptVocabulary vocab, TokenTable tokens, std::vector<std::string> answers,
                   ModelConfig cfg, uint64_t seed)
    : vocab_(std::move(vocab)), tokens_(std::move(tokens)), answers_(std::move(answers)),
      config_(cfg) {
  if (vocab_.dim() != cfg.dim) {
    throw ConfigError("model dim " + std::to_string(cfg.dim) + " != vocabulary dim " +
                      std::to_string(vocab_.dim()));
  }
  Rng rng(Rng::derive(seed, 0x4d4f444c));
  const int d = cfg.dim;

  vocab_.register_params(params_);
  add_instructor_params(params_, tokens_, d, cfg.steps + 1, rng);

  const int n_props = vocab_.num_groups() - 1;
  for (int j = 0; j < n_props; ++j) {
    params_.add(machine_params::property_bilinear(j), init_identity(d));
  }
  params_.add(machine_params::kRelationBilinear, init_identity(d));
  params_.add(machine_params::kStateProj, Tensor::full({d}, 1.0));
  params_.add(machine_params::kRelationProj, Tensor::full({d}, 1.0));

  const int n_answers = static_cast<int>(answers_.size());
  params_.add(machine_params::kClsW1, init_xavier(d, 2 * d, rng));
  params_.add(machine_params::kClsB1, Tensor::zeros({d}));
  params_.add(machine_params::kClsW2, init_xavier(n_answers, d, rng));
  params_.add(machine_params::kClsB2, Tensor::zeros({n_answers}));

  if (cfg.dense_dim > 0) {
    params_.add(machine_params::kDenseProj, init_xavier(d, cfg.dense_dim, rng));
  }
}

int NsmModel::answer_index(const std::string& answer) const {
  for (size_t i = 0; i < answers_.size(); ++i) {
    if (answers_[i] == answer) return static_cast<int>(i);
  }
  return -1;
}

NsmModel::Output NsmModel::forward(Pass& pass, const SceneGraph& graph,
                                   const std::vector<std::string>& question,
                                   int steps_override) const {
  const int n_steps = steps_override < 0 ? config_.steps : steps_override;
  if (n_steps < 1 || n_steps > config_.steps) {
    throw ConfigError("steps override " + std::to_string(n_steps) + " outside [1, " +
                      std::to_string(config_.steps) + "]");
  }
  std::vector<int> token_ids;
  token_ids.reserve(question.size());
  for (const std::string& tok : question) {
    int id = tokens_.index(tok);
    if (id < 0) throw ValueError("unknown question token: " + tok);
    token_ids.push_back(id);
  }

  Tape& t = pass.tape();
  Output out;

  const SceneGraph* g = &graph;
  SceneGraph transformed;
  if (config_.ablation == Ablation::NoRelations) {
    transformed = uniform_relations_graph(graph, vocab_.group_size(vocab_.relation_group()));
    g = &transformed;
  }

  GraphReps reps = graph_representations(pass, *g, vocab_, config_);
  const int n_answers = static_cast<int>(answers_.size());

  if (config_.ablation == Ablation::NoTraversal) {
    // Predict straight from the graph: q plus mean-pooled node properties.
    TagResult tagged = tag_words(pass, vocab_, token_ids);
    Var q = encode_question(pass, tagged.normalized_words);
    Var pool;
    bool first = true;
    for (const auto& props : reps.node_props) {
      for (const Var& s : props) {
        pool = first ? s : t.add(pool, s);
        first = false;
      }
    }
    const double scale = 1.0 / (static_cast<double>(reps.node_props.size()) *
                                static_cast<double>(reps.node_props.front().size()));
    Var m = t.scale(pool, scale);
    out.question_summary = q;
    out.readout_vec = m;
    out.instructions.question_summary = q;
    out.instructions.normalized_words = tagged.normalized_words;
    out.instructions.tag_dists = std::move(tagged.tag_dists);
    out.logits = answer_logits(pass, q, m, n_answers);
    return out;
  }

  out.instructions = build_instructions(pass, vocab_, token_ids, n_steps + 1);
  std::vector<TypeResult> types;
  types.reserve(out.instructions.instructions.size());
  for (Var r : out.instructions.instructions) {
    TypeResult ty = instruction_type(pass, r);
    types.push_back(ty);
    out.type_dists.push_back(t.value(ty.dist).data);
    out.relation_weights.push_back(t.value(ty.relation_weight).data[0]);
  }

  out.sim = simulate(pass, *g, reps, out.instructions.instructions, types, n_steps);
  out.readout_vec = readout(pass, out.sim.p_final, types.back().dist, reps);
  out.question_summary = out.instructions.question_summary;
  out.logits = answer_logits(pass, out.question_summary, out.readout_vec, n_answers);
  return out;
}

}  // namespace nsm
