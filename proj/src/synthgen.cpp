#include "nsm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsm/rng.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace nsm {

// ---------------------------------------------------------------------------
// Executor
// ---------------------------------------------------------------------------

static std::vector<int> select_objects(const SymbolicScene& scene, const ConceptVocabulary& vocab,
                                       const Program& p) {
  int identity = -1;
  if (!p.select_identity.empty()) {
    auto id = vocab.find(p.select_identity);
    if (!id || id->group != 0) throw ValueError("unknown identity: " + p.select_identity);
    identity = id->index;
  }
  int attr_group = -1, attr_value = -1;
  if (!p.select_attr_group.empty()) {
    auto g = vocab.find_group(p.select_attr_group);
    if (!g || *g < 1 || *g > vocab.attr_groups()) {
      throw ValueError("unknown attribute group: " + p.select_attr_group);
    }
    attr_group = *g;
    auto a = vocab.find(p.select_attr_value);
    if (!a || a->group != attr_group) {
      throw ValueError("attribute " + p.select_attr_value + " not in group " +
                       p.select_attr_group);
    }
    attr_value = a->index;
  }
  std::vector<int> out;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const SymbolicObject& o = scene.objects[i];
    if (identity >= 0 && o.identity != identity) continue;
    if (attr_group >= 0 && o.attributes[static_cast<size_t>(attr_group - 1)] != attr_value) {
      continue;
    }
    out.push_back(static_cast<int>(i));
  }
  return out;
}

// Objects s with relation (s, rel, anchor).
static std::vector<int> subjects_of(const SymbolicScene& scene, int rel, int anchor) {
  std::vector<int> out;
  for (const SymbolicRelation& r : scene.relations) {
    if (r.rel == rel && r.dst == anchor) out.push_back(r.src);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ExecResult execute_program(const SymbolicScene& scene, const ConceptVocabulary& vocab,
                           const Program& p) {
  ExecResult res;
  std::vector<int> matched = select_objects(scene, vocab, p);

  if (p.terminal == Program::Terminal::Exists) {
    res.touched = matched;
    res.answer = matched.empty() ? "no" : "yes";
    return res;
  }
  if (matched.empty()) {
    throw AmbiguityError("select matched no object for identity " + p.select_identity);
  }
  if (matched.size() > 1) {
    throw AmbiguityError("select matched " + std::to_string(matched.size()) +
                         " objects for identity " + p.select_identity);
  }
  int current = matched.front();
  res.touched.push_back(current);

  if (p.terminal == Program::Terminal::VerifyRel) {
    auto rel = vocab.find(p.verify_rel);
    if (!rel || rel->group != vocab.relation_group()) {
      throw ValueError("unknown relation: " + p.verify_rel);
    }
    auto subj_id = vocab.find(p.verify_subject);
    if (!subj_id || subj_id->group != 0) {
      throw ValueError("unknown identity: " + p.verify_subject);
    }
    std::vector<int> subjects;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      if (scene.objects[i].identity == subj_id->index) subjects.push_back(static_cast<int>(i));
    }
    if (subjects.size() != 1) {
      throw AmbiguityError("verify subject " + p.verify_subject + " matched " +
                           std::to_string(subjects.size()) + " objects");
    }
    res.touched.push_back(subjects.front());
    bool found = false;
    for (const SymbolicRelation& r : scene.relations) {
      if (r.src == subjects.front() && r.rel == rel->index && r.dst == current) {
        found = true;
        break;
      }
    }
    res.answer = found ? "yes" : "no";
    return res;
  }

  // Query: walk the hop chain backwards through edge subjects.
  std::vector<int> frontier{current};
  for (size_t h = 0; h < p.hops.size(); ++h) {
    const Program::Hop& hop = p.hops[h];
    auto rel = vocab.find(hop.rel);
    if (!rel || rel->group != vocab.relation_group()) {
      throw ValueError("unknown relation: " + hop.rel);
    }
    std::vector<int> subjects = subjects_of(scene, rel->index, frontier.front());
    if (!hop.identity.empty()) {
      auto want = vocab.find(hop.identity);
      if (!want || want->group != 0) throw ValueError("unknown identity: " + hop.identity);
      std::vector<int> filtered;
      for (int s : subjects) {
        if (scene.objects[static_cast<size_t>(s)].identity == want->index) filtered.push_back(s);
      }
      subjects = std::move(filtered);
    }
    if (subjects.empty()) {
      throw AmbiguityError("hop " + std::to_string(h) + " over '" + hop.rel +
                           "' matched no object");
    }
    const bool last = (h + 1 == p.hops.size());
    if (!last && subjects.size() > 1) {
      throw AmbiguityError("hop " + std::to_string(h) + " over '" + hop.rel + "' matched " +
                           std::to_string(subjects.size()) + " objects");
    }
    frontier = std::move(subjects);
    res.touched.insert(res.touched.end(), frontier.begin(), frontier.end());
  }

  int group = 0;
  if (p.query_group != "identity") {
    auto g = vocab.find_group(p.query_group);
    if (!g) throw ValueError("unknown query group: " + p.query_group);
    group = *g;
  }
  auto concept_of = [&](int obj) {
    const SymbolicObject& o = scene.objects[static_cast<size_t>(obj)];
    int idx = group == 0 ? o.identity : o.attributes[static_cast<size_t>(group - 1)];
    return vocab.concept_name(ConceptId{group, idx});
  };
  res.answer = concept_of(frontier.front());
  for (int obj : frontier) {
    if (concept_of(obj) != res.answer) {
      throw AmbiguityError("query over '" + p.query_group + "' has conflicting answers");
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

static const std::vector<std::string> kTemplateNames = {"attr",  "rel",        "rel2", "attr_rel",
                                                        "exist", "verify_rel", "rel3"};

const std::string& template_name(int id) {
  if (id < 0 || id >= kNumTemplates) throw ValueError("bad template id " + std::to_string(id));
  return kTemplateNames[static_cast<size_t>(id)];
}

int template_id_by_name(const std::string& name) {
  for (int i = 0; i < kNumTemplates; ++i) {
    if (kTemplateNames[static_cast<size_t>(i)] == name) return i;
  }
  return -1;
}

int template_hops(int id) {
  static const int hops[] = {0, 1, 2, 1, 0, 1, 3};
  if (id < 0 || id >= kNumTemplates) throw ValueError("bad template id " + std::to_string(id));
  return hops[id];
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

static std::vector<double> soften(int truth, int n, double eps) {
  std::vector<double> d(static_cast<size_t>(n), 0.0);
  if (n == 1) {
    d[0] = 1.0;
    return d;
  }
  const double rest = eps / (n - 1);
  for (int i = 0; i < n; ++i) d[static_cast<size_t>(i)] = (i == truth) ? 1.0 - eps : rest;
  return d;
}

// Stable per-concept basis for dense features; independent of the scene seed.
static std::vector<double> concept_basis(int flat_index, int dense_dim) {
  Rng rng(Rng::derive(0x44454e53, static_cast<uint64_t>(flat_index)));
  std::vector<double> v(static_cast<size_t>(dense_dim));
  for (double& x : v) x = rng.gaussian(0.0, 1.0);
  return v;
}

std::pair<SymbolicScene, SceneGraph> generate_scene(const ConceptVocabulary& vocab, int n_objects,
                                                    uint64_t seed, const GenConfig& cfg) {
  if (n_objects < 1) throw ConfigError("generate_scene: n_objects must be >= 1");
  if (n_objects > cfg.max_objects) {
    throw ConfigError("generate_scene: n_objects " + std::to_string(n_objects) +
                      " exceeds cap " + std::to_string(cfg.max_objects));
  }
  Rng rng(seed);
  const int n_ident = vocab.group_size(0);
  const int n_rel = vocab.group_size(vocab.relation_group());
  const int n_attr_groups = vocab.attr_groups();

  // Distinct identities when possible, so "the <object>" resolves uniquely.
  std::vector<int> identities(static_cast<size_t>(n_ident));
  for (int i = 0; i < n_ident; ++i) identities[static_cast<size_t>(i)] = i;
  for (int i = n_ident - 1; i > 0; --i) {
    std::swap(identities[static_cast<size_t>(i)], identities[static_cast<size_t>(rng.uniform_int(i + 1))]);
  }

  SymbolicScene scene;
  std::vector<std::array<double, 2>> centers;
  for (int i = 0; i < n_objects; ++i) {
    SymbolicObject obj;
    obj.identity = i < n_ident ? identities[static_cast<size_t>(i)] : rng.uniform_int(n_ident);
    for (int g = 1; g <= n_attr_groups; ++g) {
      obj.attributes.push_back(rng.uniform_int(vocab.group_size(g)));
    }
    const double w = rng.uniform(0.04, 0.10);
    const double h = rng.uniform(0.04, 0.10);
    double cx, cy;
    if (i == 0 || rng.uniform() > 0.85) {
      cx = rng.uniform(0.15, 0.85);
      cy = rng.uniform(0.15, 0.85);
    } else {
      // Cluster near an earlier object so the proximity rule yields edges.
      const auto& base = centers[static_cast<size_t>(rng.uniform_int(i))];
      cx = std::clamp(base[0] + rng.uniform(-0.12, 0.12), 0.06, 0.94);
      cy = std::clamp(base[1] + rng.uniform(-0.12, 0.12), 0.06, 0.94);
    }
    obj.bbox = {cx - w / 2, cy - h / 2, w, h};
    centers.push_back({cx, cy});
    scene.objects.push_back(std::move(obj));
  }

  // Directed edge iff both center offsets are below the proximity fraction.
  for (int i = 0; i < n_objects; ++i) {
    for (int j = 0; j < n_objects; ++j) {
      if (i == j) continue;
      if (std::abs(centers[static_cast<size_t>(i)][0] - centers[static_cast<size_t>(j)][0]) < cfg.proximity &&
          std::abs(centers[static_cast<size_t>(i)][1] - centers[static_cast<size_t>(j)][1]) < cfg.proximity) {
        scene.relations.push_back({i, rng.uniform_int(n_rel), j});
      }
    }
  }

  SceneGraph graph;
  graph.image_size = {1.0, 1.0};
  for (const SymbolicObject& obj : scene.objects) {
    StateNode node;
    node.bbox = obj.bbox;
    node.property_dists.push_back(soften(obj.identity, n_ident, cfg.epsilon));
    for (int g = 1; g <= n_attr_groups; ++g) {
      node.property_dists.push_back(
          soften(obj.attributes[static_cast<size_t>(g - 1)], vocab.group_size(g), cfg.epsilon));
    }
    if (cfg.dense_dim > 0) {
      std::vector<double> dense(static_cast<size_t>(cfg.dense_dim), 0.0);
      auto mix = [&](ConceptId id) {
        std::vector<double> b = concept_basis(vocab.flat_index(id), cfg.dense_dim);
        for (int k = 0; k < cfg.dense_dim; ++k) dense[static_cast<size_t>(k)] += b[static_cast<size_t>(k)];
      };
      mix(ConceptId{0, obj.identity});
      for (int g = 1; g <= n_attr_groups; ++g) {
        mix(ConceptId{g, obj.attributes[static_cast<size_t>(g - 1)]});
      }
      for (double& x : dense) x = x / (1 + n_attr_groups) + rng.gaussian(0.0, 0.05);
      node.dense_features = std::move(dense);
    }
    graph.nodes.push_back(std::move(node));
  }
  for (const SymbolicRelation& r : scene.relations) {
    graph.edges.push_back({r.src, r.dst, soften(r.rel, n_rel, cfg.epsilon)});
  }
  return {std::move(scene), std::move(graph)};
}

// ---------------------------------------------------------------------------
// Question generation
// ---------------------------------------------------------------------------

namespace {

struct SceneIndex {
  std::vector<int> unique_objects;  // objects whose identity appears exactly once
  explicit SceneIndex(const SymbolicScene& scene) {
    std::map<int, int> counts;
    for (const SymbolicObject& o : scene.objects) counts[o.identity]++;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      if (counts[scene.objects[i].identity] == 1) unique_objects.push_back(static_cast<int>(i));
    }
  }
};

int pick(Rng& rng, const std::vector<int>& xs) {
  return xs[static_cast<size_t>(rng.uniform_int(static_cast<int>(xs.size())))];
}

}  // namespace

std::optional<QuestionRecord> generate_question(const SymbolicScene& scene,
                                                const ConceptVocabulary& vocab, int template_id,
                                                uint64_t seed, const GenConfig& cfg) {
  if (template_id < 0 || template_id >= kNumTemplates) {
    throw ValueError("bad template id " + std::to_string(template_id));
  }
  Rng rng(seed);
  SceneIndex index(scene);
  if (index.unique_objects.empty()) return std::nullopt;

  auto identity_name = [&](int obj) {
    return vocab.concept_name(ConceptId{0, scene.objects[static_cast<size_t>(obj)].identity});
  };
  auto rel_name = [&](int r) { return vocab.concept_name(ConceptId{vocab.relation_group(), r}); };

  // Incoming relations whose destination has a unique identity.
  std::vector<SymbolicRelation> anchored;
  for (const SymbolicRelation& r : scene.relations) {
    if (std::count(index.unique_objects.begin(), index.unique_objects.end(), r.dst)) {
      anchored.push_back(r);
    }
  }

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    QuestionRecord q;
    q.template_id = template_id;
    q.hop_count = template_hops(template_id);
    Program& p = q.program;
    try {
      switch (template_id) {
        case 0: {  // "what <g> is the <o>"
          const int obj = pick(rng, index.unique_objects);
          const int g = 1 + rng.uniform_int(vocab.attr_groups());
          p.select_identity = identity_name(obj);
          p.terminal = Program::Terminal::Query;
          p.query_group = vocab.group_name(g);
          q.text = {"what", p.query_group, "is", "the", p.select_identity};
          q.groundings[4] = obj;
          q.ref_identities = {p.select_identity};
          break;
        }
        case 1: {  // "what is <r> the <o>"
          if (anchored.empty()) return std::nullopt;
          const SymbolicRelation r = anchored[static_cast<size_t>(rng.uniform_int(static_cast<int>(anchored.size())))];
          p.select_identity = identity_name(r.dst);
          p.hops.push_back({rel_name(r.rel), ""});
          p.terminal = Program::Terminal::Query;
          p.query_group = "identity";
          q.text = {"what", "is", rel_name(r.rel), "the", p.select_identity};
          q.groundings[4] = r.dst;
          break;
        }
        case 2:    // "what is <r1> the <o1> that is <r2> the <o2>"
        case 6: {  // three-hop variant
          const int want_hops = template_id == 2 ? 2 : 3;
          if (anchored.empty()) return std::nullopt;
          // Build a chain ending at a unique anchor: a_k -r_k-> ... -r_1-> anchor.
          const SymbolicRelation last = anchored[static_cast<size_t>(rng.uniform_int(static_cast<int>(anchored.size())))];
          std::vector<SymbolicRelation> chain{last};
          while (static_cast<int>(chain.size()) < want_hops) {
            std::vector<SymbolicRelation> nexts;
            for (const SymbolicRelation& r : scene.relations) {
              if (r.dst == chain.back().src) nexts.push_back(r);
            }
            if (nexts.empty()) break;
            chain.push_back(nexts[static_cast<size_t>(rng.uniform_int(static_cast<int>(nexts.size())))]);
          }
          if (static_cast<int>(chain.size()) != want_hops) continue;
          // chain[0]: x1 -r-> anchor; chain[k]: x_{k+1} -r-> x_k.
          p.select_identity = identity_name(chain.front().dst);
          for (int h = 0; h < want_hops; ++h) {
            const SymbolicRelation& r = chain[static_cast<size_t>(h)];
            const bool last_hop = h + 1 == want_hops;
            p.hops.push_back({rel_name(r.rel), last_hop ? "" : identity_name(r.src)});
          }
          p.terminal = Program::Terminal::Query;
          p.query_group = "identity";
          // Text reads outermost-first: "what is r_k the x_k ... that is r_1 the anchor".
          q.text = {"what", "is"};
          for (int h = want_hops - 1; h >= 0; --h) {
            const SymbolicRelation& r = chain[static_cast<size_t>(h)];
            if (h != want_hops - 1) {
              q.text.push_back("that");
              q.text.push_back("is");
            }
            q.text.push_back(rel_name(r.rel));
            q.text.push_back("the");
            q.groundings[static_cast<int>(q.text.size())] = r.dst;
            q.text.push_back(identity_name(r.dst));
          }
          break;
        }
        case 3: {  // "what <g> is the thing <r> the <o>"
          if (anchored.empty()) return std::nullopt;
          const SymbolicRelation r = anchored[static_cast<size_t>(rng.uniform_int(static_cast<int>(anchored.size())))];
          const int g = 1 + rng.uniform_int(vocab.attr_groups());
          p.select_identity = identity_name(r.dst);
          p.hops.push_back({rel_name(r.rel), ""});
          p.terminal = Program::Terminal::Query;
          p.query_group = vocab.group_name(g);
          q.text = {"what", p.query_group, "is", "the", "thing",
                    rel_name(r.rel), "the", p.select_identity};
          q.groundings[7] = r.dst;
          break;
        }
        case 4: {  // "is there a <attr> <o>"
          const int obj = rng.uniform_int(static_cast<int>(scene.objects.size()));
          const SymbolicObject& o = scene.objects[static_cast<size_t>(obj)];
          const int g = 1 + rng.uniform_int(vocab.attr_groups());
          const bool want_yes = rng.uniform() < 0.5;
          int attr = o.attributes[static_cast<size_t>(g - 1)];
          if (!want_yes) {
            attr = rng.uniform_int(vocab.group_size(g));  // may still be true; executor decides
          }
          p.select_identity = identity_name(obj);
          p.select_attr_group = vocab.group_name(g);
          p.select_attr_value = vocab.concept_name(ConceptId{g, attr});
          p.terminal = Program::Terminal::Exists;
          q.text = {"is", "there", "a", p.select_attr_value, p.select_identity};
          q.groundings[4] = obj;
          break;
        }
        case 5: {  // "is the <o1> <r> the <o2>"
          if (index.unique_objects.size() < 2) return std::nullopt;
          const int subj = pick(rng, index.unique_objects);
          int anchor = subj;
          while (anchor == subj) anchor = pick(rng, index.unique_objects);
          const bool want_yes = rng.uniform() < 0.5;
          int rel = rng.uniform_int(vocab.group_size(vocab.relation_group()));
          if (want_yes) {
            std::vector<int> rels;
            for (const SymbolicRelation& r : scene.relations) {
              if (r.src == subj && r.dst == anchor) rels.push_back(r.rel);
            }
            if (!rels.empty()) rel = pick(rng, rels);
          }
          p.select_identity = identity_name(anchor);
          p.terminal = Program::Terminal::VerifyRel;
          p.verify_rel = rel_name(rel);
          p.verify_subject = identity_name(subj);
          q.text = {"is", "the", identity_name(subj), rel_name(rel), "the", identity_name(anchor)};
          q.groundings[2] = subj;
          q.groundings[5] = anchor;
          break;
        }
        default:
          return std::nullopt;
      }

      ExecResult res = execute_program(scene, vocab, p);
      q.answer = res.answer;
      q.ref_identities.clear();
      q.ref_identities.push_back(p.select_identity);
      for (const auto& hop : p.hops) {
        if (!hop.identity.empty()) q.ref_identities.push_back(hop.identity);
      }
      if (!p.verify_subject.empty()) q.ref_identities.push_back(p.verify_subject);
      for (int obj : res.touched) {
        const std::string name = identity_name(obj);
        if (std::find(q.ref_identities.begin(), q.ref_identities.end(), name) ==
            q.ref_identities.end()) {
          q.ref_identities.push_back(name);
        }
      }
      return q;
    } catch (const AmbiguityError&) {
      continue;  // resample slots
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

Split build_splits(const std::vector<QuestionRecord>& records, const ConceptVocabulary& vocab,
                   const SplitSpec& spec) {
  Split split;
  if (spec.mode == "iid") {
    std::vector<int> ids(records.size());
    for (size_t i = 0; i < records.size(); ++i) ids[i] = static_cast<int>(i);
    Rng rng(Rng::derive(spec.seed, 0x53504c49));
    for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i) {
      std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(rng.uniform_int(i + 1))]);
    }
    const size_t n_train = static_cast<size_t>(spec.train_fraction * static_cast<double>(ids.size()));
    split.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
    split.test.assign(ids.begin() + static_cast<long>(n_train), ids.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
  } else if (spec.mode == "content") {
    std::set<std::string> held_identities;
    for (const std::string& cat : spec.holdout) {
      bool found = false;
      for (const auto& [name, members] : vocab.ontology().categories) {
        if (name == cat) {
          held_identities.insert(members.begin(), members.end());
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown category in holdout: " + cat);
    }
    for (size_t i = 0; i < records.size(); ++i) {
      bool held = false;
      for (const std::string& ident : records[i].ref_identities) {
        if (held_identities.count(ident)) {
          held = true;
          break;
        }
      }
      (held ? split.test : split.train).push_back(static_cast<int>(i));
    }
  } else if (spec.mode == "structure") {
    std::set<int> held_templates;
    for (const std::string& name : spec.holdout) {
      int id = template_id_by_name(name);
      if (id < 0) throw ConfigError("unknown template in holdout: " + name);
      held_templates.insert(id);
    }
    for (size_t i = 0; i < records.size(); ++i) {
      (held_templates.count(records[i].template_id) ? split.test : split.train)
          .push_back(static_cast<int>(i));
    }
  } else {
    throw ConfigError("unknown split mode: " + spec.mode);
  }
  if (split.train.empty()) throw ValueError("split holdout leaves an empty training set");
  return split;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset generate_dataset(const OntologySpec& ontology, const DataGenConfig& cfg) {
  Dataset data;
  data.vocab = ConceptVocabulary::build(ontology, cfg.dim, cfg.seed);
  data.tokens = build_token_table(data.vocab, cfg.seed);

  Rng scene_size_rng(Rng::derive(cfg.seed, 0x5343454e));
  for (int i = 0; i < cfg.n_scenes; ++i) {
    const int n_objects =
        cfg.scene.n_objects_min +
        scene_size_rng.uniform_int(cfg.scene.n_objects_max - cfg.scene.n_objects_min + 1);
    auto [scene, graph] = generate_scene(data.vocab, n_objects, Rng::derive(cfg.seed, 1000 + static_cast<uint64_t>(i)),
                                         cfg.scene);
    data.scenes.push_back(std::move(scene));
    data.graphs.push_back(std::move(graph));
  }

  const std::vector<int>& templates = cfg.scene.templates;
  int made = 0;
  for (int i = 0; data.questions.size() < static_cast<size_t>(cfg.n_questions); ++i) {
    // Bail out if scenes cannot support the requested templates.
    if (i > cfg.n_questions * 50 && made == 0) {
      throw ValueError("question generation made no progress; check templates vs scenes");
    }
    if (i > cfg.n_questions * 200) break;
    const int scene_id = i % cfg.n_scenes;
    Rng pick_rng(Rng::derive(cfg.seed, 2000000 + static_cast<uint64_t>(i)));
    const int template_id = templates[static_cast<size_t>(pick_rng.uniform_int(static_cast<int>(templates.size())))];
    auto q = generate_question(data.scenes[static_cast<size_t>(scene_id)], data.vocab, template_id,
                               Rng::derive(cfg.seed, 3000000 + static_cast<uint64_t>(i)), cfg.scene);
    if (!q) continue;
    q->graph_id = scene_id;
    data.questions.push_back(std::move(*q));
    ++made;
  }

  SplitSpec split_spec = cfg.split;
  split_spec.seed = cfg.seed;
  data.split = build_splits(data.questions, data.vocab, split_spec);
  data.split_spec = split_spec;
  return data;
}

std::string scene_to_line(const SymbolicScene& s) {
  json j;
  json objs = json::array();
  for (const SymbolicObject& o : s.objects) {
    objs.push_back({{"identity", o.identity},
                    {"attrs", o.attributes},
                    {"bbox", {o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]}}});
  }
  j["objects"] = std::move(objs);
  json rels = json::array();
  for (const SymbolicRelation& r : s.relations) {
    rels.push_back({{"src", r.src}, {"rel", r.rel}, {"dst", r.dst}});
  }
  j["relations"] = std::move(rels);
  return j.dump();
}

SymbolicScene parse_scene_line(const std::string& line, int line_no) {
  json j;
  try {
    j = json::parse(line);
    SymbolicScene s;
    for (const auto& jo : j.at("objects")) {
      SymbolicObject o;
      o.identity = jo.at("identity").get<int>();
      o.attributes = jo.at("attrs").get<std::vector<int>>();
      for (int k = 0; k < 4; ++k) o.bbox[static_cast<size_t>(k)] = jo.at("bbox").at(k).get<double>();
      s.objects.push_back(std::move(o));
    }
    for (const auto& jr : j.at("relations")) {
      s.relations.push_back(
          {jr.at("src").get<int>(), jr.at("rel").get<int>(), jr.at("dst").get<int>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError("scene line " + std::to_string(line_no) + ": " + e.what());
  }
}

static json program_to_json(const Program& p) {
  json j;
  j["select"] = {{"identity", p.select_identity}};
  if (!p.select_attr_group.empty()) {
    j["select"]["attr_group"] = p.select_attr_group;
    j["select"]["attr"] = p.select_attr_value;
  }
  json hops = json::array();
  for (const auto& h : p.hops) {
    json jh = {{"rel", h.rel}};
    if (!h.identity.empty()) jh["identity"] = h.identity;
    hops.push_back(std::move(jh));
  }
  j["hops"] = std::move(hops);
  switch (p.terminal) {
    case Program::Terminal::Query:
      j["terminal"] = "query";
      j["query_group"] = p.query_group;
      break;
    case Program::Terminal::Exists:
      j["terminal"] = "exists";
      break;
    case Program::Terminal::VerifyRel:
      j["terminal"] = "verify_rel";
      j["verify"] = {{"rel", p.verify_rel}, {"subject", p.verify_subject}};
      break;
  }
  return j;
}

static Program program_from_json(const json& j) {
  Program p;
  p.select_identity = j.at("select").at("identity").get<std::string>();
  if (j.at("select").contains("attr_group")) {
    p.select_attr_group = j["select"]["attr_group"].get<std::string>();
    p.select_attr_value = j["select"]["attr"].get<std::string>();
  }
  for (const auto& jh : j.at("hops")) {
    Program::Hop h;
    h.rel = jh.at("rel").get<std::string>();
    if (jh.contains("identity")) h.identity = jh["identity"].get<std::string>();
    p.hops.push_back(std::move(h));
  }
  const std::string term = j.at("terminal").get<std::string>();
  if (term == "query") {
    p.terminal = Program::Terminal::Query;
    p.query_group = j.at("query_group").get<std::string>();
  } else if (term == "exists") {
    p.terminal = Program::Terminal::Exists;
  } else if (term == "verify_rel") {
    p.terminal = Program::Terminal::VerifyRel;
    p.verify_rel = j.at("verify").at("rel").get<std::string>();
    p.verify_subject = j.at("verify").at("subject").get<std::string>();
  } else {
    throw ParseError("unknown terminal kind: " + term);
  }
  return p;
}

std::string question_to_line(const QuestionRecord& q) {
  json j;
  j["graph"] = q.graph_id;
  j["template"] = template_name(q.template_id);
  j["hops"] = q.hop_count;
  j["text"] = q.text;
  j["answer"] = q.answer;
  json gr = json::object();
  for (const auto& [pos, obj] : q.groundings) gr[std::to_string(pos)] = obj;
  j["groundings"] = std::move(gr);
  j["refs"] = q.ref_identities;
  j["program"] = program_to_json(q.program);
  return j.dump();
}

QuestionRecord parse_question_line(const std::string& line, int line_no) {
  try {
    json j = json::parse(line);
    QuestionRecord q;
    q.graph_id = j.at("graph").get<int>();
    q.template_id = template_id_by_name(j.at("template").get<std::string>());
    if (q.template_id < 0) throw ParseError("unknown template name");
    q.hop_count = j.at("hops").get<int>();
    q.text = j.at("text").get<std::vector<std::string>>();
    q.answer = j.at("answer").get<std::string>();
    for (const auto& [pos, obj] : j.at("groundings").items()) {
      q.groundings[std::stoi(pos)] = obj.get<int>();
    }
    q.ref_identities = j.at("refs").get<std::vector<std::string>>();
    q.program = program_from_json(j.at("program"));
    return q;
  } catch (const json::exception& e) {
    throw ParseError("question line " + std::to_string(line_no) + ": " + e.what());
  }
}

void save_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir + "/vocab.json");
    out << data.vocab.to_json() << '\n';
  }
  {
    std::ofstream out(dir + "/tokens.json");
    out << data.tokens.to_json() << '\n';
  }
  {
    std::ofstream out(dir + "/scenes.jsonl");
    for (const SymbolicScene& s : data.scenes) out << scene_to_line(s) << '\n';
  }
  save_graphs(data.graphs, dir + "/graphs.jsonl");
  {
    std::ofstream out(dir + "/questions.jsonl");
    for (const QuestionRecord& q : data.questions) out << question_to_line(q) << '\n';
  }
  {
    json j;
    j["mode"] = data.split_spec.mode;
    j["holdout"] = data.split_spec.holdout;
    j["train_fraction"] = data.split_spec.train_fraction;
    j["seed"] = data.split_spec.seed;
    j["train"] = data.split.train;
    j["test"] = data.split.test;
    std::ofstream out(dir + "/split.json");
    out << j.dump(2) << '\n';
  }
}

static std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset load_dataset(const std::string& dir) {
  Dataset data;
  data.vocab = ConceptVocabulary::from_json(read_file(dir + "/vocab.json"));
  data.tokens = TokenTable::from_json(read_file(dir + "/tokens.json"));
  {
    std::ifstream in(dir + "/scenes.jsonl");
    if (!in) throw ParseError("cannot open " + dir + "/scenes.jsonl");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty()) data.scenes.push_back(parse_scene_line(line, line_no));
    }
  }
  data.graphs = load_graphs(dir + "/graphs.jsonl");
  {
    std::ifstream in(dir + "/questions.jsonl");
    if (!in) throw ParseError("cannot open " + dir + "/questions.jsonl");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty()) data.questions.push_back(parse_question_line(line, line_no));
    }
  }
  if (data.scenes.size() != data.graphs.size()) {
    throw ParseError("dataset: scenes.jsonl and graphs.jsonl disagree on count");
  }
  // Every stored answer must re-execute; groundings must reference real objects.
  for (size_t i = 0; i < data.questions.size(); ++i) {
    const QuestionRecord& q = data.questions[i];
    if (q.graph_id < 0 || q.graph_id >= static_cast<int>(data.scenes.size())) {
      throw ParseError("question " + std::to_string(i) + ": bad graph id");
    }
    const SymbolicScene& scene = data.scenes[static_cast<size_t>(q.graph_id)];
    for (const auto& [pos, obj] : q.groundings) {
      if (pos < 0 || pos >= static_cast<int>(q.text.size()) || obj < 0 ||
          obj >= static_cast<int>(scene.objects.size())) {
        throw ParseError("question " + std::to_string(i) + ": bad grounding " +
                         std::to_string(pos) + "->" + std::to_string(obj));
      }
    }
    ExecResult res = execute_program(scene, data.vocab, q.program);
    if (res.answer != q.answer) {
      throw ParseError("question " + std::to_string(i) + ": stored answer '" + q.answer +
                       "' does not re-execute (got '" + res.answer + "')");
    }
  }
  {
    json j = json::parse(read_file(dir + "/split.json"));
    data.split_spec.mode = j.at("mode").get<std::string>();
    data.split_spec.holdout = j.at("holdout").get<std::vector<std::string>>();
    data.split_spec.train_fraction = j.at("train_fraction").get<double>();
    data.split_spec.seed = j.at("seed").get<uint64_t>();
    data.split.train = j.at("train").get<std::vector<int>>();
    data.split.test = j.at("test").get<std::vector<int>>();
  }
  return data;
}

}  // namespace nsm
