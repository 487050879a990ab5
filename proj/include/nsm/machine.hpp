// State machine simulation over the scene graph: instruction typing,
// relevance scoring, attention shifting along edges, readout, and the
// answer classifier. NsmModel wires the full question->answer pipeline.

#pragma once

#include <string>
#include <vector>

#include "nsm/concepts.hpp"
#include "nsm/instructor.hpp"
#include "nsm/params.hpp"
#include "nsm/worldgraph.hpp"

namespace nsm {

struct StateDistribution {
  std::vector<double> probs;

  double sum() const;
  // Throws ValueError unless nonnegative and summing to 1 within tol.
  void validate(double tol = 1e-6) const;
};

struct TraversalStep {
  int step_index = 0;
  std::vector<double> type_dist;                    // R_i over L+2 properties
  double relation_weight = 0.0;                     // r_i' = R_i(L+1)
  std::vector<std::vector<double>> node_relevance;  // gamma_i(s), d each
  std::vector<std::vector<double>> edge_relevance;  // gamma_i(e), d each
  std::vector<double> p_next;
};

namespace machine_params {
std::string property_bilinear(int j);      // "prop/W<j>", j = 0..L
inline const char* kRelationBilinear = "prop/Wrel";
inline const char* kStateProj = "score/ws";
inline const char* kRelationProj = "score/wr";
inline const char* kClsW1 = "cls/W1";
inline const char* kClsB1 = "cls/b1";
inline const char* kClsW2 = "cls/W2";
inline const char* kClsB2 = "cls/b2";
inline const char* kDenseProj = "dense/W";
}  // namespace machine_params

enum class Ablation { Full, NoConcepts, NoRelations, NoTraversal };

Ablation ablation_from_string(const std::string& s);
std::string ablation_to_string(Ablation a);

struct ModelConfig {
  int dim = 300;
  int steps = 8;         // N; the decoder emits N+1 instructions
  double dropout = 0.15;
  int dense_dim = 0;     // enables the no-concepts projection when > 0
  Ablation ablation = Ablation::Full;
};

// Precomputed per-example graph quantities. The bilinear projections are
// cached here because they are instruction-independent, keeping each
// reasoning step linear in V + E.
struct GraphReps {
  std::vector<std::vector<Var>> node_props;  // per node: s^0 .. s^L
  std::vector<Var> edge_reps;                // e' per edge
  std::vector<std::vector<Var>> node_proj;   // per node: W_j s^j
  std::vector<Var> edge_proj;                // W_{L+1} e' per edge
};

GraphReps graph_representations(Pass& pass, const SceneGraph& graph,
                                const ConceptVocabulary& vocab, const ModelConfig& cfg);

struct TypeResult {
  Var dist;             // R_i over L+2 properties
  Var relation_weight;  // scalar R_i(L+1)
};

// R_i = softmax of dot products between the instruction and each property
// embedding; the relation entry gates the relational transition branch.
TypeResult instruction_type(Pass& pass, Var instruction);

struct Relevance {
  std::vector<Var> nodes;  // d-vector per node
  std::vector<Var> edges;  // d-vector per edge
};

// gamma_i(s) = ELU(sum_j R_i(j) (r_i o W_j s^j)); gamma_i(e) analogous.
Relevance relevance_scores(Pass& pass, Var instruction, Var type_dist, const GraphReps& reps);

// Eqs: p^s from node relevance, p^r from incoming-edge aggregation, blended
// by the relation weight. Nodes without incoming edges aggregate the zero
// vector rather than being excluded from the softmax.
Var transition(Pass& pass, Var p, const Relevance& rel, Var relation_weight,
               const SceneGraph& graph);

struct SimResult {
  Var p_final;
  std::vector<TraversalStep> trace;
};

// Uniform p_0, then N transitions driven by instructions[0..N-1]; the final
// instruction is reserved for readout. instructions.size() must be N+1.
SimResult simulate(Pass& pass, const SceneGraph& graph, const GraphReps& reps,
                   const std::vector<Var>& instructions, const std::vector<TypeResult>& types,
                   int n_steps);

// Convenience form matching the machine contract: builds representations and
// instruction types internally.
SimResult simulate(Pass& pass, const SceneGraph& graph, const ConceptVocabulary& vocab,
                   const std::vector<Var>& instructions, int n_steps);

// m = sum_s p_N(s) (sum_j R_N(j) s^j)
Var readout(Pass& pass, Var p_final, Var type_dist_final, const GraphReps& reps);

// 2-layer ELU classifier over [q; m]; returns raw logits.
Var answer_logits(Pass& pass, Var question_summary, Var readout_vec, int n_answers);
// Softmax of the logits.
Var classify(Pass& pass, Var question_summary, Var readout_vec, int n_answers);

// All ordered pairs with a uniform relation distribution (no-relations
// ablation input transform).
SceneGraph uniform_relations_graph(const SceneGraph& graph, int n_relations);

// Answer vocabulary: identity and attribute concepts plus yes/no.
std::vector<std::string> default_answer_vocabulary(const ConceptVocabulary& vocab);

class NsmModel {
 public:
  NsmModel() = default;
  NsmModel(ConceptVocabulary vocab, TokenTable tokens, std::vector<std::string> answers,
           ModelConfig cfg, uint64_t seed);

  struct Output {
    Var logits;
    Var question_summary;
    Var readout_vec;
    InstructionSequence instructions;  // empty under no-traversal
    SimResult sim;
    std::vector<std::vector<double>> type_dists;
    std::vector<double> relation_weights;
  };

  // Full forward pass on the pass's tape. steps_override < config().steps
  // truncates the instruction roll-out (used by step sweeps); -1 = configured.
  Output forward(Pass& pass, const SceneGraph& graph, const std::vector<std::string>& question,
                 int steps_override = -1) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ConceptVocabulary& vocab() const { return vocab_; }
  const TokenTable& tokens() const { return tokens_; }
  const std::vector<std::string>& answers() const { return answers_; }
  int answer_index(const std::string& answer) const;  // -1 when unknown
  const ModelConfig& config() const { return config_; }
  void set_ablation(Ablation a) { config_.ablation = a; }

 private:
  ConceptVocabulary vocab_;
  TokenTable tokens_;
  std::vector<std::string> answers_;
  ModelConfig config_;
  ParamStore params_;
};

}  // namespace nsm
