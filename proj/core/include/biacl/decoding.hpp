#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biacl/dictionary.hpp"
#include "biacl/model.hpp"
#include "biacl/vocab.hpp"

namespace biacl {

// The lexical constraints attached to one hypothesis. `met` flags are
// re-derived from the full token sequence (a phrase counts as met when it
// appears as a contiguous subsequence anywhere), so accidental satisfaction
// is credited too.
struct ConstraintSet {
  std::vector<std::vector<int>> phrases;
  std::vector<bool> met;
  int in_progress_phrase = -1;  // unmet phrase some suffix is extending
  int in_progress_pos = 0;      // matched prefix length of that phrase

  static ConstraintSet of(std::vector<std::vector<int>> phrase_list);

  int64_t total_tokens() const;
  int64_t met_tokens() const;
  // Tokens of met phrases plus the matched prefix of the in-progress
  // phrase; the bank key used by the search, so partially emitted phrases
  // are protected from raw-score competition.
  int64_t covered_tokens() const { return met_tokens() + in_progress_pos; }
  bool all_met() const;
  bool empty() const { return phrases.empty(); }

  // Recomputes met flags (monotone: already-met phrases stay met) and the
  // in-progress marker from the produced tokens.
  void update(const std::vector<int>& tokens);
};

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;
  ConstraintSet constraints;
};

// Anything that can score the next token given the tokens produced so far.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int64_t vocab_size() const = 0;
  virtual int eos_id() const = 0;
  // Log-probabilities (normalized) over the vocabulary for the next token.
  virtual std::vector<double> next_logprobs(const std::vector<int>& produced) = 0;
};

// Scores continuations with a bound translation model: the source sentence
// is encoded once, each step decodes the produced prefix plus a placeholder
// slot and reads the last logits row.
class ModelStepScorer : public StepScorer {
 public:
  ModelStepScorer(const Model& model, Graph& g, const std::vector<int>& source,
                  int src_lang, int tgt_lang, int eos);

  int64_t vocab_size() const override { return vocab_size_; }
  int eos_id() const override { return eos_; }
  std::vector<double> next_logprobs(const std::vector<int>& produced) override;

 private:
  BoundModel bound_;
  HiddenSeq memory_;
  int tgt_lang_;
  int eos_;
  int64_t vocab_size_;
};

struct SearchResult {
  std::vector<int> tokens;  // content tokens; the end marker is implicit
  double score = 0.0;       // sum of token log-probs including the end marker
};

// Beam search forced to satisfy every constraint phrase. Candidates are
// bucketed by covered constraint tokens; the best of every nonempty bank
// keeps a guaranteed slot (most-covered bank first) and the remaining beam
// is filled by global score, so constraint progress is never starved. The
// end marker is only available once all constraints are met. Output length
// is at most max_len - 1 content tokens plus the end marker.
SearchResult constrained_beam_search(StepScorer& scorer,
                                     const ConstraintSet& constraints,
                                     int64_t beam, int64_t max_len);

// One constraint phrase per distinct sentence token that has a dictionary
// entry: the first-listed translation, encoded to ids. Duplicate phrases
// are collapsed. Order follows first occurrence in the sentence.
ConstraintSet build_constraints(const std::vector<int>& sentence,
                                const Vocabulary& vocab,
                                const BilingualDictionary& dict);

struct PseudoParallelPair {
  std::vector<int> target;  // the real monolingual sentence
  std::vector<int> source;  // the generated pseudo-source
  double score = 0.0;
};

// Generates a pseudo-source for x_t by constrained beam search against the
// model's current parameters: encode with tgt_lang, decode with src_lang,
// constraints from the tgt->src dictionary.
PseudoParallelPair generate_pseudo_source(const Model& model,
                                          const std::vector<int>& x_t,
                                          int tgt_lang, int src_lang,
                                          const Vocabulary& vocab,
                                          const BilingualDictionary& dict,
                                          int64_t beam, int64_t max_len);

// True when `phrase` occurs contiguously inside `tokens`.
bool contains_phrase(const std::vector<int>& tokens,
                     const std::vector<int>& phrase);

}  // namespace biacl
