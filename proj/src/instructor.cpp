#include "nsm/instructor.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "nsm/serialize.hpp"

using nlohmann::json;

namespace nsm {

int TokenTable::index(const std::string& token) const {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == token) return static_cast<int>(i);
  }
  return -1;
}

Tensor TokenTable::matrix() const {
  const int d = dim();
  Tensor m = Tensor::zeros({static_cast<int>(tokens.size()), d});
  for (size_t i = 0; i < tokens.size(); ++i) {
    for (int j = 0; j < d; ++j) m(static_cast<int>(i), j) = embeddings[i](j);
  }
  return m;
}

std::string TokenTable::to_json() const {
  json j;
  j["version"] = 1;
  j["dim"] = dim();
  j["tokens"] = tokens;
  std::vector<double> flat;
  flat.reserve(tokens.size() * static_cast<size_t>(dim()));
  for (const Tensor& e : embeddings) flat.insert(flat.end(), e.data.begin(), e.data.end());
  j["embeddings"] = base64_doubles(flat);
  return j.dump(2);
}

TokenTable TokenTable::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("token table json: ") + e.what());
  }
  TokenTable t;
  t.tokens = j.at("tokens").get<std::vector<std::string>>();
  const int d = j.at("dim").get<int>();
  std::vector<double> flat = doubles_from_base64(j.at("embeddings").get<std::string>());
  if (flat.size() != t.tokens.size() * static_cast<size_t>(d)) {
    throw ParseError("token table json: embedding blob size mismatch");
  }
  for (size_t i = 0; i < t.tokens.size(); ++i) {
    std::vector<double> row(flat.begin() + static_cast<long>(i) * d,
                            flat.begin() + static_cast<long>(i + 1) * d);
    t.embeddings.push_back(Tensor::vec(std::move(row)));
  }
  return t;
}

TokenTable build_token_table(const ConceptVocabulary& vocab, uint64_t seed, double tie_noise) {
  TokenTable t;
  Rng rng(Rng::derive(seed, 0x544f4b53));  // token embedding stream
  auto push = [&](const std::string& token) {
    if (t.index(token) >= 0) return;
    t.tokens.push_back(token);
    Tensor e;
    if (auto id = vocab.find(token)) {
      e = vocab.embedding(*id);
      for (double& v : e.data) v += rng.gaussian(0.0, tie_noise);
    } else {
      e = Tensor::zeros({vocab.dim()});
      for (double& v : e.data) v = rng.gaussian(0.0, 0.1);
    }
    t.embeddings.push_back(std::move(e));
  };
  for (const std::string& w : vocab.ontology().function_words) push(w);
  for (int g = 0; g < vocab.num_groups(); ++g) push(vocab.group_name(g));
  for (int g = 0; g < vocab.num_groups(); ++g) {
    for (const std::string& c : vocab.group_concepts(g)) push(c);
  }
  return t;
}

std::vector<std::string> normalize_question(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

TagResult tag_words(Pass& pass, const ConceptVocabulary& vocab,
                    const std::vector<int>& token_ids) {
  if (token_ids.empty()) throw ValueError("tag_words: empty question");
  Tape& t = pass.tape();
  Var emb = pass.param(instructor_params::kWordEmb);
  Var w_tag = pass.param(instructor_params::kTaggerW);

  std::vector<Var> group_vars;
  group_vars.reserve(static_cast<size_t>(vocab.num_groups()));
  for (int g = 0; g < vocab.num_groups(); ++g) {
    group_vars.push_back(pass.param(ConceptVocabulary::group_param(g)));
  }
  Var concepts = t.vstack(group_vars);  // |C| x d
  std::vector<Var> with_default = group_vars;
  with_default.push_back(pass.param(ConceptVocabulary::default_param()));
  Var concepts_full = t.vstack(with_default);  // (|C|+1) x d
  const int n_concepts = vocab.total_concepts();

  TagResult out;
  std::vector<Var> rows;
  rows.reserve(token_ids.size());
  for (int tok : token_ids) {
    Var w = t.row(emb, tok);
    Var u = t.vecmat(w, w_tag);                   // w^T W
    Var dist = t.softmax(t.matvec(concepts_full, u));
    Var blend = t.vecmat(t.slice(dist, 0, n_concepts), concepts);
    Var v = t.add(blend, t.smul(t.elem(dist, n_concepts), w));
    rows.push_back(v);
    out.tag_dists.push_back(t.value(dist).data);
  }
  out.normalized_words = t.vstack(rows);
  return out;
}

Var encode_question(Pass& pass, Var normalized_words) {
  Tape& t = pass.tape();
  const Tensor& v = t.value(normalized_words);
  const int n_words = v.rows();
  const int d = v.cols();
  LstmVars lstm = lease_lstm(pass, instructor_params::kEncoder);
  LstmState s{pass.constant(Tensor::zeros({d})), pass.constant(Tensor::zeros({d}))};
  for (int i = 0; i < n_words; ++i) {
    s = lstm_cell(t.row(normalized_words, i), s, lstm);
  }
  return s.h;
}

DecodeResult decode_instructions(Pass& pass, Var question_summary, Var normalized_words,
                                 int n_instructions) {
  if (n_instructions < 1) throw ValueError("decode_instructions: need at least one step");
  Tape& t = pass.tape();
  const int d = t.value(question_summary).dim(0);
  Var steps = pass.param(instructor_params::kDecoderSteps);
  if (t.value(steps).rows() < n_instructions) {
    throw ConfigError("decoder has " + std::to_string(t.value(steps).rows()) +
                      " step embeddings, need " + std::to_string(n_instructions));
  }
  LstmVars lstm = lease_lstm(pass, instructor_params::kDecoder);
  LstmState s{question_summary, pass.constant(Tensor::zeros({d}))};
  DecodeResult out;
  for (int i = 0; i < n_instructions; ++i) {
    s = lstm_cell(t.row(steps, i), s, lstm);
    Var att = t.softmax(t.matvec(normalized_words, s.h));
    out.instructions.push_back(t.vecmat(att, normalized_words));
    out.word_attention.push_back(t.value(att).data);
  }
  return out;
}

InstructionSequence build_instructions(Pass& pass, const ConceptVocabulary& vocab,
                                       const std::vector<int>& token_ids, int n_instructions) {
  TagResult tagged = tag_words(pass, vocab, token_ids);
  Var q = encode_question(pass, tagged.normalized_words);
  DecodeResult decoded = decode_instructions(pass, q, tagged.normalized_words, n_instructions);
  InstructionSequence seq;
  seq.instructions = std::move(decoded.instructions);
  seq.question_summary = q;
  seq.normalized_words = tagged.normalized_words;
  seq.word_attention = std::move(decoded.word_attention);
  seq.tag_dists = std::move(tagged.tag_dists);
  return seq;
}

void add_instructor_params(ParamStore& store, const TokenTable& tokens, int dim, int max_steps,
                           Rng& rng) {
  store.add(instructor_params::kWordEmb, tokens.matrix());
  store.add(instructor_params::kTaggerW, init_identity(dim));
  add_lstm_params(store, instructor_params::kEncoder, dim, dim, rng);
  add_lstm_params(store, instructor_params::kDecoder, dim, dim, rng);
  store.add(instructor_params::kDecoderSteps, init_gaussian({max_steps, dim}, rng, 0.1));
}

}  // namespace nsm
