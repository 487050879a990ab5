// The machine's alphabet: embedded concepts grouped into L+2 property types
// (object identities, L attribute groups, relations), property-type
// embeddings, and a learned default embedding for non-content words.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nsm/params.hpp"
#include "nsm/tensor.hpp"

namespace nsm {

struct OntologySpec {
  struct Group {
    std::string name;
    std::vector<std::string> concepts;
  };

  Group objects;                  // property 0 (identity)
  std::vector<Group> attributes;  // properties 1..L
  Group relations;                // property L+1

  // Object categories (e.g. "animals" -> {cat, dog}); used by content splits.
  std::vector<std::pair<std::string, std::vector<std::string>>> categories;

  // Closed set of non-content words the question generator may emit.
  std::vector<std::string> function_words;

  // Built-in ontology used by the synthetic benchmark.
  static OntologySpec toy_world();
};

struct ConceptId {
  int group = 0;
  int index = 0;
};

class ConceptVocabulary {
 public:
  ConceptVocabulary() = default;

  // Deterministic seeded Gaussian init (sigma 0.1), in place of pretrained
  // word vectors. Same (ontology, dim, seed) gives bit-identical embeddings.
  static ConceptVocabulary build(const OntologySpec& ontology, int dim, uint64_t seed);

  int dim() const { return dim_; }
  int num_groups() const { return static_cast<int>(groups_.size()); }  // L+2
  int attr_groups() const { return num_groups() - 2; }                 // L
  int relation_group() const { return num_groups() - 1; }

  const std::string& group_name(int g) const { return group_names_[static_cast<size_t>(g)]; }
  const std::vector<std::string>& group_concepts(int g) const {
    return groups_[static_cast<size_t>(g)];
  }
  int group_size(int g) const { return static_cast<int>(groups_[static_cast<size_t>(g)].size()); }
  int total_concepts() const;

  std::optional<ConceptId> find(const std::string& name) const;
  std::optional<int> find_group(const std::string& group_name) const;
  const std::string& concept_name(ConceptId id) const {
    return groups_[static_cast<size_t>(id.group)][static_cast<size_t>(id.index)];
  }
  // Row index of a concept in the stacked concept matrix.
  int flat_index(ConceptId id) const;

  const Tensor& group_embeddings(int g) const { return embeddings_[static_cast<size_t>(g)]; }
  const Tensor& default_embedding() const { return default_embedding_; }
  const Tensor& property_embeddings() const { return property_embeddings_; }
  Tensor embedding(ConceptId id) const;

  // Stacked concept matrix with the default embedding as the final row:
  // (total_concepts + 1) x d, groups in order, rows stable across calls.
  Tensor concept_matrix() const;

  // Override embeddings from a word-vector text file ("token v1 .. vd" per
  // line); unknown tokens are ignored, wrong dimension is an error.
  // Returns the number of concepts overridden.
  int load_vector_file(const std::string& path);
  // Write every concept in the same text format; covered tokens round-trip
  // bit-exactly through load_vector_file.
  void export_vector_file(const std::string& path) const;

  const OntologySpec& ontology() const { return ontology_; }

  // Parameter names used when the vocabulary's tensors are trained.
  static std::string group_param(int g) { return "vocab/g" + std::to_string(g); }
  static std::string default_param() { return "vocab/default"; }
  static std::string property_param() { return "vocab/D"; }
  void register_params(ParamStore& store) const;
  // Copy (possibly trained) tensors back from a parameter store.
  void sync_from(const ParamStore& store);

  std::string to_json() const;
  static ConceptVocabulary from_json(const std::string& text);

 private:
  int dim_ = 0;
  OntologySpec ontology_;
  std::vector<std::string> group_names_;           // L+2
  std::vector<std::vector<std::string>> groups_;   // concept names per group
  std::vector<Tensor> embeddings_;                 // per group: |C_g| x d
  Tensor default_embedding_;                       // d
  Tensor property_embeddings_;                     // (L+2) x d
};

}  // namespace nsm
