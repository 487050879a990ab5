#include "nsm/concepts.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsm/rng.hpp"
#include "nsm/serialize.hpp"

using nlohmann::json;

namespace nsm {

OntologySpec OntologySpec::toy_world() {
  OntologySpec o;
  o.objects = {"identity",
               {"cat", "dog", "horse", "bird", "table", "chair", "bed", "sofa", "book", "cup",
                "ball", "box"}};
  o.attributes = {
      {"color", {"red", "blue", "green", "yellow", "white", "black"}},
      {"material", {"wood", "metal", "plastic", "cloth"}},
  };
  o.relations = {"relation", {"on", "under", "near", "holding", "left_of", "right_of"}};
  o.categories = {
      {"animals", {"cat", "dog", "horse", "bird"}},
      {"furniture", {"table", "chair", "bed", "sofa"}},
      {"items", {"book", "cup", "ball", "box"}},
  };
  o.function_words = {"what", "is", "the", "a", "there", "that", "thing", "yes", "no"};
  return o;
}

ConceptVocabulary ConceptVocabulary::build(const OntologySpec& ontology, int dim, uint64_t seed) {
  if (ontology.objects.concepts.empty() || ontology.attributes.empty() ||
      ontology.relations.concepts.empty()) {
    throw ConfigError("ontology needs at least one object, one attribute group, one relation");
  }
  for (const auto& g : ontology.attributes) {
    if (g.concepts.empty()) throw ConfigError("empty attribute group: " + g.name);
  }

  ConceptVocabulary v;
  v.dim_ = dim;
  v.ontology_ = ontology;
  v.group_names_.push_back(ontology.objects.name);
  v.groups_.push_back(ontology.objects.concepts);
  for (const auto& g : ontology.attributes) {
    v.group_names_.push_back(g.name);
    v.groups_.push_back(g.concepts);
  }
  v.group_names_.push_back(ontology.relations.name);
  v.groups_.push_back(ontology.relations.concepts);

  std::set<std::string> seen;
  for (const auto& group : v.groups_) {
    for (const auto& name : group) {
      if (!seen.insert(name).second) throw ConfigError("duplicate concept name: " + name);
    }
  }

  Rng rng(Rng::derive(seed, 0x434f4e43));  // concept embedding stream
  const double sigma = 0.1;
  for (const auto& group : v.groups_) {
    Tensor e = Tensor::zeros({static_cast<int>(group.size()), dim});
    for (double& x : e.data) x = rng.gaussian(0.0, sigma);
    v.embeddings_.push_back(std::move(e));
  }
  v.default_embedding_ = Tensor::zeros({dim});
  for (double& x : v.default_embedding_.data) x = rng.gaussian(0.0, sigma);
  v.property_embeddings_ = Tensor::zeros({v.num_groups(), dim});
  for (double& x : v.property_embeddings_.data) x = rng.gaussian(0.0, sigma);
  return v;
}

int ConceptVocabulary::total_concepts() const {
  int n = 0;
  for (const auto& g : groups_) n += static_cast<int>(g.size());
  return n;
}

std::optional<ConceptId> ConceptVocabulary::find(const std::string& name) const {
  for (size_t g = 0; g < groups_.size(); ++g) {
    for (size_t i = 0; i < groups_[g].size(); ++i) {
      if (groups_[g][i] == name) return ConceptId{static_cast<int>(g), static_cast<int>(i)};
    }
  }
  return std::nullopt;
}

std::optional<int> ConceptVocabulary::find_group(const std::string& group_name) const {
  for (size_t g = 0; g < group_names_.size(); ++g) {
    if (group_names_[g] == group_name) return static_cast<int>(g);
  }
  return std::nullopt;
}

int ConceptVocabulary::flat_index(ConceptId id) const {
  int base = 0;
  for (int g = 0; g < id.group; ++g) base += group_size(g);
  return base + id.index;
}

Tensor ConceptVocabulary::embedding(ConceptId id) const {
  const Tensor& e = embeddings_[static_cast<size_t>(id.group)];
  Tensor out = Tensor::zeros({dim_});
  for (int j = 0; j < dim_; ++j) out(j) = e(id.index, j);
  return out;
}

Tensor ConceptVocabulary::concept_matrix() const {
  Tensor out = Tensor::zeros({total_concepts() + 1, dim_});
  int r = 0;
  for (const Tensor& e : embeddings_) {
    for (int i = 0; i < e.rows(); ++i, ++r) {
      for (int j = 0; j < dim_; ++j) out(r, j) = e(i, j);
    }
  }
  for (int j = 0; j < dim_; ++j) out(r, j) = default_embedding_(j);
  return out;
}

int ConceptVocabulary::load_vector_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vector file: " + path);
  std::string line;
  int line_no = 0;
  int covered = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> values;
    double x;
    while (ss >> x) values.push_back(x);
    auto id = find(token);
    if (!id) continue;
    if (static_cast<int>(values.size()) != dim_) {
      throw ParseError("vector file line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dim_) + " values, got " + std::to_string(values.size()));
    }
    Tensor& e = embeddings_[static_cast<size_t>(id->group)];
    for (int j = 0; j < dim_; ++j) e(id->index, j) = values[static_cast<size_t>(j)];
    ++covered;
  }
  return covered;
}

void ConceptVocabulary::export_vector_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open vector file for writing: " + path);
  for (size_t g = 0; g < groups_.size(); ++g) {
    const Tensor& e = embeddings_[g];
    for (size_t i = 0; i < groups_[g].size(); ++i) {
      out << groups_[g][i];
      for (int j = 0; j < dim_; ++j) out << ' ' << format_double(e(static_cast<int>(i), j));
      out << '\n';
    }
  }
}

void ConceptVocabulary::register_params(ParamStore& store) const {
  for (int g = 0; g < num_groups(); ++g) {
    store.add(group_param(g), embeddings_[static_cast<size_t>(g)]);
  }
  store.add(default_param(), default_embedding_);
  store.add(property_param(), property_embeddings_);
}

void ConceptVocabulary::sync_from(const ParamStore& store) {
  for (int g = 0; g < num_groups(); ++g) {
    embeddings_[static_cast<size_t>(g)] = store.at(group_param(g));
  }
  default_embedding_ = store.at(default_param());
  property_embeddings_ = store.at(property_param());
}

std::string ConceptVocabulary::to_json() const {
  json j;
  j["version"] = 1;
  j["dim"] = dim_;
  json groups = json::array();
  for (size_t g = 0; g < groups_.size(); ++g) {
    json jg;
    jg["name"] = group_names_[g];
    jg["concepts"] = groups_[g];
    jg["embeddings"] = base64_doubles(embeddings_[g].data);
    groups.push_back(std::move(jg));
  }
  j["groups"] = std::move(groups);
  j["default_embedding"] = base64_doubles(default_embedding_.data);
  j["property_embeddings"] = base64_doubles(property_embeddings_.data);
  json cats = json::array();
  for (const auto& [name, members] : ontology_.categories) {
    cats.push_back({{"name", name}, {"members", members}});
  }
  j["categories"] = std::move(cats);
  j["function_words"] = ontology_.function_words;
  return j.dump(2);
}

ConceptVocabulary ConceptVocabulary::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary json: ") + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw ParseError("vocabulary json: unsupported version");
  }
  ConceptVocabulary v;
  v.dim_ = j.at("dim").get<int>();
  for (const auto& jg : j.at("groups")) {
    v.group_names_.push_back(jg.at("name").get<std::string>());
    v.groups_.push_back(jg.at("concepts").get<std::vector<std::string>>());
    std::vector<double> data = doubles_from_base64(jg.at("embeddings").get<std::string>());
    v.embeddings_.push_back(
        Tensor::from({static_cast<int>(v.groups_.back().size()), v.dim_}, std::move(data)));
  }
  if (v.groups_.size() < 3) throw ParseError("vocabulary json: needs at least 3 groups");
  v.default_embedding_ =
      Tensor::from({v.dim_}, doubles_from_base64(j.at("default_embedding").get<std::string>()));
  v.property_embeddings_ = Tensor::from(
      {v.num_groups(), v.dim_}, doubles_from_base64(j.at("property_embeddings").get<std::string>()));

  v.ontology_.objects = {v.group_names_.front(), v.groups_.front()};
  for (size_t g = 1; g + 1 < v.groups_.size(); ++g) {
    v.ontology_.attributes.push_back({v.group_names_[g], v.groups_[g]});
  }
  v.ontology_.relations = {v.group_names_.back(), v.groups_.back()};
  if (j.contains("categories")) {
    for (const auto& jc : j["categories"]) {
      v.ontology_.categories.emplace_back(jc.at("name").get<std::string>(),
                                          jc.at("members").get<std::vector<std::string>>());
    }
  }
  if (j.contains("function_words")) {
    v.ontology_.function_words = j["function_words"].get<std::vector<std::string>>();
  }
  return v;
}

}  // namespace nsm
