#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsm/synthgen.hpp"

using namespace nsm;
using nlohmann::json;
namespace fs = std::filesystem;

static ConceptVocabulary toy_vocab(int dim = 8) {
  return ConceptVocabulary::build(OntologySpec::toy_world(), dim, 21);
}

// red cat on blue table
static SymbolicScene cat_on_table(const ConceptVocabulary& v) {
  SymbolicScene s;
  SymbolicObject cat;
  cat.identity = v.find("cat")->index;
  cat.attributes = {v.find("red")->index, v.find("cloth")->index};
  cat.bbox = {0.1, 0.1, 0.1, 0.1};
  SymbolicObject table;
  table.identity = v.find("table")->index;
  table.attributes = {v.find("blue")->index, v.find("wood")->index};
  table.bbox = {0.15, 0.15, 0.1, 0.1};
  s.objects = {cat, table};
  s.relations = {{0, v.find("on")->index, 1}};
  return s;
}

TEST_CASE("executor answers a direct attribute query") {
  ConceptVocabulary v = toy_vocab();
  SymbolicScene s = cat_on_table(v);
  Program p;
  p.select_identity = "cat";
  p.terminal = Program::Terminal::Query;
  p.query_group = "color";
  ExecResult r = execute_program(s, v, p);
  CHECK(r.answer == "red");
  CHECK(r.touched == std::vector<int>{0});
}

TEST_CASE("executor rejects empty and ambiguous selects") {
  ConceptVocabulary v = toy_vocab();
  SymbolicScene s = cat_on_table(v);
  Program p;
  p.select_identity = "dog";
  p.terminal = Program::Terminal::Query;
  p.query_group = "color";
  CHECK_THROWS_AS(execute_program(s, v, p), AmbiguityError);

  SymbolicScene two_cats = s;
  two_cats.objects.push_back(s.objects[0]);
  p.select_identity = "cat";
  CHECK_THROWS_AS(execute_program(two_cats, v, p), AmbiguityError);
}

TEST_CASE("three-hop relate chain matches the recorded manual trace") {
  ConceptVocabulary v = toy_vocab();
  std::ifstream in(std::string(NSM_TEST_DIR) + "/golden/relate_chain.json");
  REQUIRE(in.good());
  json golden = json::parse(in);

  std::ostringstream scene_line;
  scene_line << golden["scene"].dump();
  SymbolicScene scene = parse_scene_line(scene_line.str(), 1);

  Program p;
  p.select_identity = golden["program"]["select"]["identity"].get<std::string>();
  for (const auto& jh : golden["program"]["hops"]) {
    Program::Hop h;
    h.rel = jh.at("rel").get<std::string>();
    if (jh.contains("identity")) h.identity = jh["identity"].get<std::string>();
    p.hops.push_back(h);
  }
  p.terminal = Program::Terminal::Query;
  p.query_group = golden["program"]["query_group"].get<std::string>();

  ExecResult r = execute_program(scene, v, p);
  CHECK(r.answer == golden["expected_answer"].get<std::string>());
  CHECK(r.touched == golden["expected_touched"].get<std::vector<int>>());
}

TEST_CASE("scene generation enforces the proximity edge rule exactly") {
  ConceptVocabulary v = toy_vocab();
  GenConfig cfg;
  bool saw_close_pair = false, saw_far_pair = false;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto [scene, graph] = generate_scene(v, 5, seed, cfg);
    REQUIRE(scene.objects.size() == 5);
    std::set<std::pair<int, int>> edge_set;
    for (const SymbolicRelation& r : scene.relations) edge_set.insert({r.src, r.dst});
    auto center = [&](int i) {
      const auto& b = scene.objects[size_t(i)].bbox;
      return std::array<double, 2>{b[0] + b[2] / 2, b[1] + b[3] / 2};
    };
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        if (i == j) continue;
        const auto ci = center(i), cj = center(j);
        const bool close =
            std::abs(ci[0] - cj[0]) < cfg.proximity && std::abs(ci[1] - cj[1]) < cfg.proximity;
        CHECK(edge_set.count({i, j}) == (close ? 1u : 0u));
        if (close) {
          CHECK(edge_set.count({j, i}) == 1u);  // rule is symmetric in the pair
          saw_close_pair = true;
        } else {
          saw_far_pair = true;
        }
      }
    }
    // Graph mirrors the symbolic relations one to one.
    CHECK(graph.edges.size() == scene.relations.size());
  }
  CHECK(saw_close_pair);
  CHECK(saw_far_pair);
}

TEST_CASE("epsilon zero emits one-hot distributions") {
  ConceptVocabulary v = toy_vocab();
  GenConfig cfg;
  cfg.epsilon = 0.0;
  auto [scene, graph] = generate_scene(v, 4, 9, cfg);
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& dist = graph.nodes[i].property_dists[0];
    for (size_t k = 0; k < dist.size(); ++k) {
      CHECK(dist[k] == (static_cast<int>(k) == scene.objects[i].identity ? 1.0 : 0.0));
    }
  }
  for (size_t e = 0; e < scene.relations.size(); ++e) {
    CHECK(graph.edges[e].relation_dist[size_t(scene.relations[e].rel)] == 1.0);
  }
}

TEST_CASE("epsilon softening keeps distributions normalized") {
  ConceptVocabulary v = toy_vocab();
  auto [scene, graph] = generate_scene(v, 5, 13, {});
  graph.validate(1e-9);
}

TEST_CASE("object cap is enforced") {
  ConceptVocabulary v = toy_vocab();
  CHECK_THROWS_AS(generate_scene(v, 51, 1, {}), ConfigError);
  CHECK_THROWS_AS(generate_scene(v, 0, 1, {}), ConfigError);
}

TEST_CASE("attribute template instantiates as expected on the cat scene") {
  ConceptVocabulary v = toy_vocab();
  SymbolicScene s = cat_on_table(v);
  bool found = false;
  for (uint64_t seed = 0; seed < 100 && !found; ++seed) {
    auto q = generate_question(s, v, 0, seed, {});
    REQUIRE(q.has_value());
    if (q->text == std::vector<std::string>{"what", "color", "is", "the", "cat"}) {
      CHECK(q->answer == "red");
      CHECK(q->hop_count == 0);
      CHECK(q->groundings.at(4) == 0);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("relational questions re-execute to their stored answer") {
  ConceptVocabulary v = toy_vocab();
  int checked = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    auto [scene, graph] = generate_scene(v, 5, seed, {});
    for (int tid = 0; tid < kNumTemplates; ++tid) {
      auto q = generate_question(scene, v, tid, seed * 31 + uint64_t(tid), {});
      if (!q) continue;
      ExecResult r = execute_program(scene, v, q->program);
      CHECK(r.answer == q->answer);
      CHECK(q->hop_count == template_hops(tid));
      ++checked;
    }
  }
  CHECK(checked > 60);
}

TEST_CASE("verify template on a false fact answers no") {
  ConceptVocabulary v = toy_vocab();
  SymbolicScene s = cat_on_table(v);
  bool saw_no = false, saw_yes = false;
  for (uint64_t seed = 0; seed < 60 && !(saw_no && saw_yes); ++seed) {
    auto q = generate_question(s, v, 5, seed, {});
    if (!q) continue;
    CHECK(q->template_id == 5);
    if (q->answer == "no") saw_no = true;
    if (q->answer == "yes") saw_yes = true;
  }
  CHECK(saw_no);
  CHECK(saw_yes);
}

static Dataset small_dataset(const SplitSpec& split, uint64_t seed = 3) {
  DataGenConfig cfg;
  cfg.n_scenes = 30;
  cfg.n_questions = 150;
  cfg.dim = 8;
  cfg.seed = seed;
  cfg.split = split;
  return generate_dataset(OntologySpec::toy_world(), cfg);
}

TEST_CASE("content split keeps held-out categories out of the training set") {
  SplitSpec spec;
  spec.mode = "content";
  spec.holdout = {"animals"};
  Dataset data = small_dataset(spec);
  REQUIRE(data.questions.size() == 150);

  std::set<std::string> animals = {"cat", "dog", "horse", "bird"};
  for (int id : data.split.train) {
    for (const std::string& ref : data.questions[size_t(id)].ref_identities) {
      CHECK(animals.count(ref) == 0);
    }
  }
  CHECK(!data.split.test.empty());
}

TEST_CASE("structure split holds out whole templates") {
  SplitSpec spec;
  spec.mode = "structure";
  spec.holdout = {"rel2"};
  Dataset data = small_dataset(spec);
  for (int id : data.split.train) {
    CHECK(data.questions[size_t(id)].hop_count != 2);
  }
  bool test_has_rel2 = false;
  for (int id : data.split.test) {
    if (data.questions[size_t(id)].template_id == 2) test_has_rel2 = true;
  }
  CHECK(test_has_rel2);
}

TEST_CASE("iid split is deterministic in the seed") {
  SplitSpec spec;  // defaults: iid, 0.8
  Dataset a = small_dataset(spec, 17);
  Dataset b = small_dataset(spec, 17);
  CHECK(a.split.train == b.split.train);
  CHECK(a.split.test == b.split.test);
  CHECK(a.split.train.size() == size_t(0.8 * 150));
}

TEST_CASE("holdout covering everything raises empty-train error") {
  SplitSpec spec;
  spec.mode = "structure";
  spec.holdout = {"attr", "rel", "rel2", "attr_rel", "exist", "verify_rel", "rel3"};
  CHECK_THROWS_AS(small_dataset(spec), ValueError);
}

TEST_CASE("dataset save/load round trip revalidates all answers") {
  SplitSpec spec;
  Dataset data = small_dataset(spec);
  const std::string dir = "synthgen_ds_test";
  save_dataset(data, dir);
  Dataset loaded = load_dataset(dir);
  CHECK(loaded.questions.size() == data.questions.size());
  CHECK(loaded.split.train == data.split.train);
  CHECK(loaded.graphs.size() == data.graphs.size());
  for (size_t i = 0; i < data.graphs.size(); ++i) {
    for (size_t n = 0; n < data.graphs[i].nodes.size(); ++n) {
      CHECK(loaded.graphs[i].nodes[n].property_dists == data.graphs[i].nodes[n].property_dists);
    }
  }

  // Corrupting a stored answer must fail the on-load re-execution.
  {
    std::ifstream in(dir + "/questions.jsonl");
    std::stringstream all;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        json j = json::parse(line);
        j["answer"] = j["answer"].get<std::string>() == "yes" ? "no" : "yes";
        line = j.dump();
        first = false;
      }
      all << line << '\n';
    }
    in.close();
    std::ofstream out(dir + "/questions.jsonl");
    out << all.str();
  }
  CHECK_THROWS_AS(load_dataset(dir), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("dataset generation is byte-deterministic") {
  SplitSpec spec;
  Dataset a = small_dataset(spec, 5);
  Dataset b = small_dataset(spec, 5);
  save_dataset(a, "synthgen_det_a");
  save_dataset(b, "synthgen_det_b");
  for (const char* name :
       {"vocab.json", "tokens.json", "scenes.jsonl", "graphs.jsonl", "questions.jsonl",
        "split.json"}) {
    std::ifstream fa(std::string("synthgen_det_a/") + name, std::ios::binary);
    std::ifstream fb(std::string("synthgen_det_b/") + name, std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(!sa.str().empty());
  }
  fs::remove_all("synthgen_det_a");
  fs::remove_all("synthgen_det_b");
}

TEST_CASE("question records serialize and parse") {
  ConceptVocabulary v = toy_vocab();
  SymbolicScene s = cat_on_table(v);
  auto q = generate_question(s, v, 1, 4, {});
  REQUIRE(q.has_value());
  QuestionRecord parsed = parse_question_line(question_to_line(*q), 1);
  CHECK(parsed.text == q->text);
  CHECK(parsed.answer == q->answer);
  CHECK(parsed.hop_count == q->hop_count);
  CHECK(parsed.groundings == q->groundings);
  CHECK(parsed.ref_identities == q->ref_identities);
}
