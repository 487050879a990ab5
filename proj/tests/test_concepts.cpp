#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "nsm/concepts.hpp"
#include "nsm/instructor.hpp"
#include "nsm/serialize.hpp"

using namespace nsm;

static OntologySpec tiny_ontology() {
  OntologySpec o;
  o.objects = {"identity", {"cat", "table"}};
  o.attributes = {{"color", {"red", "blue"}}};
  o.relations = {"relation", {"on", "near"}};
  o.function_words = {"what", "is", "the"};
  return o;
}

TEST_CASE("toy ontology builds L=1 with groups sized (2,2,2)") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 16, 1);
  CHECK(v.attr_groups() == 1);
  CHECK(v.num_groups() == 3);
  CHECK(v.group_size(0) == 2);
  CHECK(v.group_size(1) == 2);
  CHECK(v.group_size(2) == 2);
  CHECK(v.total_concepts() == 6);
}

TEST_CASE("paper-scale embedding dimension is supported") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 300, 1);
  CHECK(v.dim() == 300);
  CHECK(v.embedding(ConceptId{0, 0}).dim(0) == 300);
}

TEST_CASE("same seed gives bit-identical embeddings") {
  ConceptVocabulary a = ConceptVocabulary::build(tiny_ontology(), 32, 99);
  ConceptVocabulary b = ConceptVocabulary::build(tiny_ontology(), 32, 99);
  for (int g = 0; g < a.num_groups(); ++g) {
    CHECK(a.group_embeddings(g).data == b.group_embeddings(g).data);
  }
  CHECK(a.default_embedding().data == b.default_embedding().data);
  CHECK(a.property_embeddings().data == b.property_embeddings().data);

  ConceptVocabulary c = ConceptVocabulary::build(tiny_ontology(), 32, 100);
  CHECK(a.group_embeddings(0).data != c.group_embeddings(0).data);
}

TEST_CASE("duplicate concept names are rejected") {
  OntologySpec o = tiny_ontology();
  o.attributes[0].concepts.push_back("cat");
  CHECK_THROWS_AS(ConceptVocabulary::build(o, 8, 1), ConfigError);
}

TEST_CASE("concept matrix stacks all groups plus the default row") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 8, 7);
  Tensor m = v.concept_matrix();
  CHECK(m.rows() == 7);  // 6 concepts + default
  CHECK(m.cols() == 8);
  // Row for ConceptId(0,0) is the stored "cat" embedding.
  Tensor cat = v.embedding(*v.find("cat"));
  for (int j = 0; j < 8; ++j) CHECK(m(0, j) == cat(j));
  // Last row is the default embedding.
  for (int j = 0; j < 8; ++j) CHECK(m(6, j) == v.default_embedding()(j));
  CHECK(v.flat_index(*v.find("on")) == 4);
}

TEST_CASE("concept rows receive gradient through the tagger") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 8, 3);
  TokenTable tokens = build_token_table(v, 3);
  ParamStore store;
  v.register_params(store);
  Rng rng(5);
  add_instructor_params(store, tokens, 8, 3, rng);

  Pass pass(store);
  TagResult tagged = tag_words(pass, v, {tokens.index("cat"), tokens.index("is")});
  Var loss = pass.tape().sum(tagged.normalized_words);
  pass.tape().backward(loss);
  std::map<std::string, Tensor> grads;
  pass.accumulate_grads(grads);
  const Tensor& g0 = grads.at(ConceptVocabulary::group_param(0));
  double norm = 0.0;
  for (double x : g0.data) norm += x * x;
  CHECK(norm > 0.0);
}

TEST_CASE("vector file override round-trips bit-exactly") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 6, 11);
  const std::string path = "vocab_vectors_test.txt";
  v.export_vector_file(path);

  ConceptVocabulary w = ConceptVocabulary::build(tiny_ontology(), 6, 999);
  CHECK(w.group_embeddings(0).data != v.group_embeddings(0).data);
  const int covered = w.load_vector_file(path);
  CHECK(covered == 6);
  for (int g = 0; g < v.num_groups(); ++g) {
    CHECK(w.group_embeddings(g).data == v.group_embeddings(g).data);
  }
  std::remove(path.c_str());
}

TEST_CASE("vector file with wrong dimension is rejected") {
  ConceptVocabulary v = ConceptVocabulary::build(tiny_ontology(), 6, 11);
  const std::string path = "vocab_vectors_bad.txt";
  {
    std::ofstream out(path);
    out << "cat 1.0 2.0\n";
  }
  CHECK_THROWS_AS(v.load_vector_file(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("json round trip preserves structure and bytes") {
  ConceptVocabulary v = ConceptVocabulary::build(OntologySpec::toy_world(), 12, 42);
  ConceptVocabulary w = ConceptVocabulary::from_json(v.to_json());
  CHECK(w.num_groups() == v.num_groups());
  CHECK(w.dim() == v.dim());
  for (int g = 0; g < v.num_groups(); ++g) {
    CHECK(w.group_concepts(g) == v.group_concepts(g));
    CHECK(w.group_embeddings(g).data == v.group_embeddings(g).data);
  }
  CHECK(w.default_embedding().data == v.default_embedding().data);
  CHECK(w.property_embeddings().data == v.property_embeddings().data);
  CHECK(w.ontology().categories == v.ontology().categories);
  CHECK(w.ontology().function_words == v.ontology().function_words);
}

TEST_CASE("base64 helpers round trip doubles") {
  std::vector<double> xs = {0.0, -1.5, 3.14159, 1e-300, -2.5e300};
  CHECK(doubles_from_base64(base64_doubles(xs)) == xs);
}
