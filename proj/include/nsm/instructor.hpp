// Question side of the machine: token embeddings, the concept tagger, the
// LSTM question encoder, and the attention decoder that emits N+1 reasoning
// instructions.

#pragma once

#include <string>
#include <vector>

#include "nsm/concepts.hpp"
#include "nsm/nn.hpp"
#include "nsm/params.hpp"

namespace nsm {

// Embedding table over the closed question token set. Content words are tied
// to their concept embeddings (plus small noise) so tagging is learnable from
// a useful starting point; function words get independent seeded vectors.
struct TokenTable {
  std::vector<std::string> tokens;
  std::vector<Tensor> embeddings;  // each [d]

  int index(const std::string& token) const;  // -1 when unknown
  int dim() const { return embeddings.empty() ? 0 : embeddings.front().dim(0); }
  Tensor matrix() const;  // |tokens| x d

  std::string to_json() const;
  static TokenTable from_json(const std::string& text);
};

TokenTable build_token_table(const ConceptVocabulary& vocab, uint64_t seed,
                             double tie_noise = 0.02);

// Lowercases and strips punctuation, splitting on whitespace.
std::vector<std::string> normalize_question(const std::string& text);

// Parameter names used by this module.
namespace instructor_params {
inline const char* kWordEmb = "words/emb";
inline const char* kTaggerW = "tagger/W";
inline const char* kEncoder = "enc";        // "/wx", "/wh", "/b"
inline const char* kDecoder = "dec";
inline const char* kDecoderSteps = "dec/steps";
}  // namespace instructor_params

struct TagResult {
  Var normalized_words;                        // V: P x d
  std::vector<std::vector<double>> tag_dists;  // per word, over |C|+1 entries
};

// Similarity tagger: P_i = softmax(w_i^T W C) against all concepts plus the
// default embedding; v_i keeps the word itself with weight P_i(default).
TagResult tag_words(Pass& pass, const ConceptVocabulary& vocab,
                    const std::vector<int>& token_ids);

// LSTM over the normalized words; returns the final hidden state q.
Var encode_question(Pass& pass, Var normalized_words);

struct DecodeResult {
  std::vector<Var> instructions;                   // n_instructions of them
  std::vector<std::vector<double>> word_attention; // per step, over P words
};

// Recurrent decoder initialized from q (hidden=q, cell=0), fed a learned
// per-step embedding; r_i = softmax(h_i V^T) V.
DecodeResult decode_instructions(Pass& pass, Var question_summary, Var normalized_words,
                                 int n_instructions);

struct InstructionSequence {
  std::vector<Var> instructions;  // r_0 .. r_N
  Var question_summary;           // q
  Var normalized_words;           // V
  std::vector<std::vector<double>> word_attention;
  std::vector<std::vector<double>> tag_dists;
};

// tag -> encode -> decode, n_instructions = N+1.
InstructionSequence build_instructions(Pass& pass, const ConceptVocabulary& vocab,
                                       const std::vector<int>& token_ids, int n_instructions);

// Registers tagger/encoder/decoder/word parameters.
void add_instructor_params(ParamStore& store, const TokenTable& tokens, int dim, int max_steps,
                           Rng& rng);

}  // namespace nsm
