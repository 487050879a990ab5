#include "nsm/worldgraph.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace nsm {

static void check_dist(const std::vector<double>& d, double tol, const std::string& what) {
  if (d.empty()) throw ValueError(what + ": empty distribution");
  double s = 0.0;
  for (double v : d) {
    if (v < 0.0 || !std::isfinite(v)) throw ValueError(what + ": negative or non-finite mass");
    s += v;
  }
  if (std::abs(s - 1.0) > tol) {
    throw ValueError(what + ": distribution sums to " + std::to_string(s));
  }
}

void SceneGraph::validate(double tol) const {
  if (nodes.empty()) throw ValueError("graph has no nodes");
  const int n = static_cast<int>(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    const StateNode& node = nodes[i];
    if (node.property_dists.empty()) {
      throw ValueError("node " + std::to_string(i) + " has no property distributions");
    }
    for (size_t j = 0; j < node.property_dists.size(); ++j) {
      check_dist(node.property_dists[j],
                 tol, "node " + std::to_string(i) + " property " + std::to_string(j));
    }
  }
  for (size_t k = 0; k < edges.size(); ++k) {
    const TransitionEdge& e = edges[k];
    if (e.source < 0 || e.source >= n || e.target < 0 || e.target >= n) {
      throw ValueError("edge " + std::to_string(k) + " references invalid node (" +
                       std::to_string(e.source) + " -> " + std::to_string(e.target) + ")");
    }
    if (e.source == e.target) {
      throw ValueError("edge " + std::to_string(k) + " is a self-loop on node " +
                       std::to_string(e.source));
    }
    check_dist(e.relation_dist, tol, "edge " + std::to_string(k));
  }
}

std::vector<Tensor> state_representation(const StateNode& node, const ConceptVocabulary& vocab) {
  const int n_props = vocab.num_groups() - 1;  // identity + attribute groups
  if (static_cast<int>(node.property_dists.size()) != n_props) {
    throw ShapeError("node has " + std::to_string(node.property_dists.size()) +
                     " property distributions, vocabulary expects " + std::to_string(n_props));
  }
  std::vector<Tensor> reps;
  reps.reserve(static_cast<size_t>(n_props));
  for (int j = 0; j < n_props; ++j) {
    const std::vector<double>& dist = node.property_dists[static_cast<size_t>(j)];
    if (static_cast<int>(dist.size()) != vocab.group_size(j)) {
      throw ShapeError("property " + std::to_string(j) + " distribution length " +
                       std::to_string(dist.size()) + " != group size " +
                       std::to_string(vocab.group_size(j)));
    }
    const Tensor& emb = vocab.group_embeddings(j);
    Tensor rep = Tensor::zeros({vocab.dim()});
    for (size_t k = 0; k < dist.size(); ++k) {
      const double w = dist[k];
      if (w == 0.0) continue;
      for (int c = 0; c < vocab.dim(); ++c) rep(c) += w * emb(static_cast<int>(k), c);
    }
    reps.push_back(std::move(rep));
  }
  return reps;
}

Tensor edge_representation(const TransitionEdge& edge, const ConceptVocabulary& vocab) {
  const int rg = vocab.relation_group();
  if (static_cast<int>(edge.relation_dist.size()) != vocab.group_size(rg)) {
    throw ShapeError("relation distribution length " + std::to_string(edge.relation_dist.size()) +
                     " != relation group size " + std::to_string(vocab.group_size(rg)));
  }
  const Tensor& emb = vocab.group_embeddings(rg);
  Tensor rep = Tensor::zeros({vocab.dim()});
  for (size_t k = 0; k < edge.relation_dist.size(); ++k) {
    const double w = edge.relation_dist[k];
    if (w == 0.0) continue;
    for (int c = 0; c < vocab.dim(); ++c) rep(c) += w * emb(static_cast<int>(k), c);
  }
  return rep;
}

std::vector<Var> state_representation_vars(Pass& pass, const StateNode& node,
                                           const ConceptVocabulary& vocab) {
  const int n_props = vocab.num_groups() - 1;
  if (static_cast<int>(node.property_dists.size()) != n_props) {
    throw ShapeError("node has " + std::to_string(node.property_dists.size()) +
                     " property distributions, vocabulary expects " + std::to_string(n_props));
  }
  Tape& t = pass.tape();
  std::vector<Var> reps;
  reps.reserve(static_cast<size_t>(n_props));
  for (int j = 0; j < n_props; ++j) {
    Var dist = pass.constant(Tensor::vec(node.property_dists[static_cast<size_t>(j)]));
    reps.push_back(t.vecmat(dist, pass.param(ConceptVocabulary::group_param(j))));
  }
  return reps;
}

Var edge_representation_vars(Pass& pass, const TransitionEdge& edge,
                             const ConceptVocabulary& vocab) {
  Tape& t = pass.tape();
  Var dist = pass.constant(Tensor::vec(edge.relation_dist));
  return t.vecmat(dist, pass.param(ConceptVocabulary::group_param(vocab.relation_group())));
}

static json dist_to_json(const std::vector<double>& d) { return json(d); }

std::string graph_to_line(const SceneGraph& graph) {
  json j;
  j["image_size"] = {graph.image_size[0], graph.image_size[1]};
  json nodes = json::array();
  for (const StateNode& node : graph.nodes) {
    json jn;
    jn["bbox"] = {node.bbox[0], node.bbox[1], node.bbox[2], node.bbox[3]};
    json props = json::array();
    for (const auto& d : node.property_dists) props.push_back(dist_to_json(d));
    jn["props"] = std::move(props);
    if (!node.dense_features.empty()) jn["dense"] = node.dense_features;
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const TransitionEdge& e : graph.edges) {
    edges.push_back({{"src", e.source}, {"dst", e.target}, {"rel", dist_to_json(e.relation_dist)}});
  }
  j["edges"] = std::move(edges);
  return j.dump();
}

SceneGraph parse_graph_line(const std::string& line, int line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError("graph line " + std::to_string(line_no) + ": " + e.what());
  }
  SceneGraph g;
  try {
    if (j.contains("image_size")) {
      g.image_size[0] = j["image_size"].at(0).get<double>();
      g.image_size[1] = j["image_size"].at(1).get<double>();
    }
    for (const auto& jn : j.at("nodes")) {
      StateNode node;
      for (int k = 0; k < 4; ++k) node.bbox[static_cast<size_t>(k)] = jn.at("bbox").at(k).get<double>();
      for (const auto& jd : jn.at("props")) {
        node.property_dists.push_back(jd.get<std::vector<double>>());
      }
      if (jn.contains("dense")) node.dense_features = jn["dense"].get<std::vector<double>>();
      g.nodes.push_back(std::move(node));
    }
    if (j.contains("edges")) {
      for (const auto& je : j["edges"]) {
        TransitionEdge e;
        e.source = je.at("src").get<int>();
        e.target = je.at("dst").get<int>();
        e.relation_dist = je.at("rel").get<std::vector<double>>();
        g.edges.push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("graph line " + std::to_string(line_no) + ": " + e.what());
  }
  try {
    g.validate();
  } catch (const ValueError& e) {
    throw ValueError("graph line " + std::to_string(line_no) + ": " + e.what());
  }
  return g;
}

std::vector<SceneGraph> load_graphs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open graph file: " + path);
  std::vector<SceneGraph> graphs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    graphs.push_back(parse_graph_line(line, line_no));
  }
  return graphs;
}

void save_graphs(const std::vector<SceneGraph>& graphs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open graph file for writing: " + path);
  for (const SceneGraph& g : graphs) out << graph_to_line(g) << '\n';
}

SceneGraph load_graph(const std::string& path) {
  std::vector<SceneGraph> graphs = load_graphs(path);
  if (graphs.empty()) throw ParseError("graph file is empty: " + path);
  return graphs.front();
}

void save_graph(const SceneGraph& graph, const std::string& path) {
  save_graphs({graph}, path);
}

}  // namespace nsm
