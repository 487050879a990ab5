#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "nsm/rng.hpp"
#include "nsm/worldgraph.hpp"

using namespace nsm;

static OntologySpec tiny_ontology() {
  OntologySpec o;
  o.objects = {"identity", {"cat", "table", "dog"}};
  o.attributes = {{"color", {"red", "blue"}}};
  o.relations = {"relation", {"on", "near"}};
  o.function_words = {"what"};
  return o;
}

static ConceptVocabulary tiny_vocab(int dim = 8) {
  return ConceptVocabulary::build(tiny_ontology(), dim, 5);
}

static StateNode node_with(std::vector<double> ident, std::vector<double> color) {
  StateNode n;
  n.bbox = {0.1, 0.1, 0.2, 0.2};
  n.property_dists = {std::move(ident), std::move(color)};
  return n;
}

TEST_CASE("one-hot state distribution reproduces the concept embedding") {
  ConceptVocabulary v = tiny_vocab();
  StateNode n = node_with({1, 0, 0}, {0, 1});
  std::vector<Tensor> reps = state_representation(n, v);
  REQUIRE(reps.size() == 2);
  Tensor cat = v.embedding(*v.find("cat"));
  Tensor blue = v.embedding(*v.find("blue"));
  for (int j = 0; j < v.dim(); ++j) {
    CHECK(reps[0](j) == doctest::Approx(cat(j)).epsilon(1e-15));
    CHECK(reps[1](j) == doctest::Approx(blue(j)).epsilon(1e-15));
  }
}

TEST_CASE("uniform two-way distribution lands on the midpoint") {
  ConceptVocabulary v = tiny_vocab();
  StateNode n = node_with({1, 0, 0}, {0.5, 0.5});
  std::vector<Tensor> reps = state_representation(n, v);
  Tensor red = v.embedding(*v.find("red"));
  Tensor blue = v.embedding(*v.find("blue"));
  for (int j = 0; j < v.dim(); ++j) {
    CHECK(reps[1](j) == doctest::Approx(0.5 * (red(j) + blue(j))).epsilon(1e-12));
  }
}

TEST_CASE("random distribution matches an independent naive loop") {
  ConceptVocabulary v = tiny_vocab();
  Rng rng(71);
  std::vector<double> ident = {rng.uniform(), rng.uniform(), rng.uniform()};
  double s = ident[0] + ident[1] + ident[2];
  for (double& x : ident) x /= s;
  StateNode n = node_with(ident, {0.25, 0.75});
  std::vector<Tensor> reps = state_representation(n, v);

  for (int j = 0; j < v.dim(); ++j) {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) acc += ident[size_t(k)] * v.group_embeddings(0)(k, j);
    CHECK(std::abs(reps[0](j) - acc) < 1e-12);
  }
}

TEST_CASE("edge representation: one-hot, midpoint, naive loop") {
  ConceptVocabulary v = tiny_vocab();
  TransitionEdge on_edge{0, 1, {1, 0}};
  Tensor on = v.embedding(*v.find("on"));
  Tensor near = v.embedding(*v.find("near"));
  Tensor rep = edge_representation(on_edge, v);
  for (int j = 0; j < v.dim(); ++j) CHECK(rep(j) == doctest::Approx(on(j)).epsilon(1e-15));

  TransitionEdge mid{0, 1, {0.5, 0.5}};
  Tensor rep2 = edge_representation(mid, v);
  for (int j = 0; j < v.dim(); ++j) {
    CHECK(rep2(j) == doctest::Approx(0.5 * (on(j) + near(j))).epsilon(1e-12));
  }

  TransitionEdge rnd{0, 1, {0.3, 0.7}};
  Tensor rep3 = edge_representation(rnd, v);
  for (int j = 0; j < v.dim(); ++j) {
    const double acc = 0.3 * on(j) + 0.7 * near(j);
    CHECK(std::abs(rep3(j) - acc) < 1e-12);
  }
}

TEST_CASE("representation is linear in the distribution") {
  ConceptVocabulary v = tiny_vocab();
  Rng rng(13);
  auto rand_dist = [&](int n) {
    std::vector<double> d(static_cast<size_t>(n));
    double s = 0;
    for (double& x : d) {
      x = rng.uniform() + 1e-3;
      s += x;
    }
    for (double& x : d) x /= s;
    return d;
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p = rand_dist(3), q = rand_dist(3);
    const double alpha = rng.uniform();
    std::vector<double> blend(3);
    for (int k = 0; k < 3; ++k) blend[size_t(k)] = alpha * p[size_t(k)] + (1 - alpha) * q[size_t(k)];
    Tensor rp = state_representation(node_with(p, {1, 0}), v)[0];
    Tensor rq = state_representation(node_with(q, {1, 0}), v)[0];
    Tensor rb = state_representation(node_with(blend, {1, 0}), v)[0];
    for (int j = 0; j < v.dim(); ++j) {
      CHECK(std::abs(rb(j) - (alpha * rp(j) + (1 - alpha) * rq(j))) < 1e-12);
    }
  }
}

TEST_CASE("representations stay inside the per-coordinate concept hull") {
  ConceptVocabulary v = tiny_vocab();
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(3);
    double s = 0;
    for (double& x : d) {
      x = rng.uniform();
      s += x;
    }
    for (double& x : d) x /= s;
    Tensor rep = state_representation(node_with(d, {1, 0}), v)[0];
    for (int j = 0; j < v.dim(); ++j) {
      double lo = 1e300, hi = -1e300;
      for (int k = 0; k < 3; ++k) {
        lo = std::min(lo, v.group_embeddings(0)(k, j));
        hi = std::max(hi, v.group_embeddings(0)(k, j));
      }
      CHECK(rep(j) >= lo - 1e-12);
      CHECK(rep(j) <= hi + 1e-12);
    }
  }
}

TEST_CASE("distribution length mismatch raises a schema error") {
  ConceptVocabulary v = tiny_vocab();
  StateNode bad = node_with({1, 0}, {1, 0});  // identity group has 3 concepts
  CHECK_THROWS_AS(state_representation(bad, v), ShapeError);
}

static SceneGraph sample_graph(int n_nodes, uint64_t seed) {
  Rng rng(seed);
  SceneGraph g;
  for (int i = 0; i < n_nodes; ++i) {
    StateNode n;
    n.bbox = {rng.uniform(0, 0.8), rng.uniform(0, 0.8), 0.1, 0.1};
    n.property_dists = {{0.8, 0.1, 0.1}, {0.4, 0.6}};
    g.nodes.push_back(std::move(n));
  }
  for (int i = 0; i + 1 < n_nodes; ++i) {
    g.edges.push_back({i, i + 1, {0.7, 0.3}});
  }
  return g;
}

TEST_CASE("minimal one-node graph round-trips") {
  SceneGraph g = sample_graph(1, 3);
  const std::string path = "graph_one.jsonl";
  save_graph(g, path);
  SceneGraph h = load_graph(path);
  CHECK(h.nodes.size() == 1);
  CHECK(h.nodes[0].property_dists == g.nodes[0].property_dists);
  std::remove(path.c_str());
}

TEST_CASE("fifty-node graph round-trips bit-exactly") {
  SceneGraph g = sample_graph(50, 4);
  // Perturb with awkward values that exercise double formatting.
  g.nodes[7].property_dists[0] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  g.nodes[9].property_dists[1] = {1e-17, 1.0 - 1e-17};
  const std::string path = "graph_fifty.jsonl";
  save_graph(g, path);
  SceneGraph h = load_graph(path);
  REQUIRE(h.nodes.size() == 50);
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    CHECK(h.nodes[i].property_dists == g.nodes[i].property_dists);
    CHECK(h.nodes[i].bbox == g.nodes[i].bbox);
  }
  for (size_t k = 0; k < g.edges.size(); ++k) {
    CHECK(h.edges[k].relation_dist == g.edges[k].relation_dist);
  }
  std::remove(path.c_str());
}

TEST_CASE("malformed edge index names the edge") {
  SceneGraph g = sample_graph(2, 5);
  g.edges.push_back({0, 9, {1, 0}});
  CHECK_THROWS_WITH_AS(g.validate(), doctest::Contains("edge 1"), ValueError);

  SceneGraph loop = sample_graph(2, 6);
  loop.edges.push_back({1, 1, {1, 0}});
  CHECK_THROWS_WITH_AS(loop.validate(), doctest::Contains("self-loop"), ValueError);
}

TEST_CASE("unnormalized distribution fails validation") {
  SceneGraph g = sample_graph(2, 7);
  g.nodes[0].property_dists[0] = {0.5, 0.1, 0.1};
  CHECK_THROWS_AS(g.validate(), ValueError);
}

TEST_CASE("parse errors carry the line number") {
  const std::string path = "graph_bad.jsonl";
  {
    std::ofstream out(path);
    out << graph_to_line(sample_graph(1, 8)) << '\n';
    out << "{ not json\n";
  }
  CHECK_THROWS_WITH_AS(load_graphs(path), doctest::Contains("line 2"), ParseError);
  std::remove(path.c_str());
}
