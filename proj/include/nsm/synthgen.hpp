// Synthetic benchmark: symbolic scenes, templated compositional questions
// labeled by a symbolic executor, probabilistic graph emission, and the
// content / structure / iid generalization splits.

#pragma once

#include <optional>
#include <map>
#include <string>
#include <vector>

#include "nsm/concepts.hpp"
#include "nsm/instructor.hpp"
#include "nsm/worldgraph.hpp"

namespace nsm {

// Raised by the executor when a select/relate step has no unique resolution.
class AmbiguityError : public ValueError {
 public:
  using ValueError::ValueError;
};

struct SymbolicObject {
  int identity = 0;                 // index into vocab group 0
  std::vector<int> attributes;      // index per attribute group 1..L
  std::array<double, 4> bbox{0, 0, 0, 0};
};

struct SymbolicRelation {
  int src = 0;
  int rel = 0;  // index into the relation group
  int dst = 0;
};

struct SymbolicScene {
  std::vector<SymbolicObject> objects;
  std::vector<SymbolicRelation> relations;
};

// select -> relate* -> query/exists/verify. Intermediate hops carry an
// identity filter so the path stays unique; the last hop of a query is open.
struct Program {
  std::string select_identity;
  std::string select_attr_group;  // optional attribute filter (exists)
  std::string select_attr_value;

  struct Hop {
    std::string rel;
    std::string identity;  // empty = unfiltered (final hop only)
  };
  std::vector<Hop> hops;

  enum class Terminal { Query, Exists, VerifyRel };
  Terminal terminal = Terminal::Query;
  std::string query_group;     // Query: "identity" or an attribute group name
  std::string verify_rel;      // VerifyRel
  std::string verify_subject;  // VerifyRel: identity of the candidate subject
};

struct QuestionRecord {
  std::vector<std::string> text;
  Program program;
  std::string answer;
  int hop_count = 0;
  std::map<int, int> groundings;            // token position -> object index
  std::vector<std::string> ref_identities;  // identity concepts the question refers to
  int template_id = 0;
  int graph_id = 0;
};

struct ExecResult {
  std::string answer;
  std::vector<int> touched;  // object indices visited
};

// Deterministic symbolic evaluation; the ground-truth oracle for labels.
ExecResult execute_program(const SymbolicScene& scene, const ConceptVocabulary& vocab,
                           const Program& program);

inline constexpr int kNumTemplates = 7;
const std::string& template_name(int id);  // attr, rel, rel2, attr_rel, exist, verify_rel, rel3
int template_id_by_name(const std::string& name);  // -1 if unknown
int template_hops(int id);

struct GenConfig {
  int n_objects_min = 3;
  int n_objects_max = 6;
  int max_objects = 50;         // detection cap
  double proximity = 0.15;      // edge rule: both center offsets below this
  double epsilon = 0.1;         // mass taken from the true concept
  int dense_dim = 16;
  int max_retries = 20;
  std::vector<int> templates = {0, 1, 2, 3, 4, 5};
};

// Random scene plus its probabilistic graph. A directed edge exists for an
// ordered pair iff the relative center distance is below `proximity` on both
// axes; emitted distributions put 1-epsilon on the true concept.
std::pair<SymbolicScene, SceneGraph> generate_scene(const ConceptVocabulary& vocab, int n_objects,
                                                    uint64_t seed, const GenConfig& cfg = {});

// Instantiates a template on the scene with a unique answer; nullopt when no
// unique instantiation is found within cfg.max_retries.
std::optional<QuestionRecord> generate_question(const SymbolicScene& scene,
                                                const ConceptVocabulary& vocab, int template_id,
                                                uint64_t seed, const GenConfig& cfg = {});

struct SplitSpec {
  std::string mode = "iid";  // iid | content | structure
  std::vector<std::string> holdout;  // categories (content) or template names (structure)
  double train_fraction = 0.8;
  uint64_t seed = 0;
};

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

Split build_splits(const std::vector<QuestionRecord>& records, const ConceptVocabulary& vocab,
                   const SplitSpec& spec);

struct Dataset {
  ConceptVocabulary vocab;
  TokenTable tokens;
  std::vector<SymbolicScene> scenes;
  std::vector<SceneGraph> graphs;
  std::vector<QuestionRecord> questions;
  Split split;
  SplitSpec split_spec;
};

struct DataGenConfig {
  int n_scenes = 100;
  int n_questions = 1000;
  int dim = 300;
  uint64_t seed = 0;
  GenConfig scene;
  SplitSpec split;
};

// End-to-end generation: vocabulary, token table, scenes, questions, split.
Dataset generate_dataset(const OntologySpec& ontology, const DataGenConfig& cfg);

// Directory layout: vocab.json, tokens.json, scenes.jsonl, graphs.jsonl,
// questions.jsonl, split.json. Deterministic bytes for a fixed dataset.
void save_dataset(const Dataset& data, const std::string& dir);
// Reloads and re-executes every program, throwing if any stored answer
// disagrees with the executor.
Dataset load_dataset(const std::string& dir);

std::string question_to_line(const QuestionRecord& q);
QuestionRecord parse_question_line(const std::string& line, int line_no);

std::string scene_to_line(const SymbolicScene& s);
SymbolicScene parse_scene_line(const std::string& line, int line_no);

}  // namespace nsm
