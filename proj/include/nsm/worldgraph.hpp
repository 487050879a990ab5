// Probabilistic scene graph: nodes with per-property categorical
// distributions, directed relation edges, and the concept-weighted
// structured representations derived from them.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "nsm/concepts.hpp"
#include "nsm/params.hpp"

namespace nsm {

struct StateNode {
  std::array<double, 4> bbox{0, 0, 0, 0};         // x, y, w, h in [0,1] units
  std::vector<std::vector<double>> property_dists;  // L+1 distributions
  std::vector<double> dense_features;              // optional, no-concepts ablation
};

struct TransitionEdge {
  int source = 0;
  int target = 0;
  std::vector<double> relation_dist;
};

struct SceneGraph {
  std::vector<StateNode> nodes;
  std::vector<TransitionEdge> edges;
  std::array<double, 2> image_size{1.0, 1.0};

  // Structural checks: >=1 node, valid edge endpoints, no self-loops,
  // distributions normalized within `tol`. Throws ValueError.
  void validate(double tol = 1e-4) const;
};

// s^j for j = 0..L: each property distribution blended over its group's
// concept embeddings. Plain-tensor form.
std::vector<Tensor> state_representation(const StateNode& node, const ConceptVocabulary& vocab);

// e' = relation distribution blended over relation concept embeddings.
Tensor edge_representation(const TransitionEdge& edge, const ConceptVocabulary& vocab);

// On-tape forms; gradients flow into the vocabulary group parameters.
std::vector<Var> state_representation_vars(Pass& pass, const StateNode& node,
                                           const ConceptVocabulary& vocab);
Var edge_representation_vars(Pass& pass, const TransitionEdge& edge,
                             const ConceptVocabulary& vocab);

// JSON-lines IO. Distribution values survive a save/load cycle bit-exactly.
std::vector<SceneGraph> load_graphs(const std::string& path);
void save_graphs(const std::vector<SceneGraph>& graphs, const std::string& path);
SceneGraph load_graph(const std::string& path);
void save_graph(const SceneGraph& graph, const std::string& path);

SceneGraph parse_graph_line(const std::string& line, int line_no);
std::string graph_to_line(const SceneGraph& graph);

}  // namespace nsm
