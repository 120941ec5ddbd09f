#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "biacl/data.hpp"
#include "biacl/dictionary.hpp"
#include "biacl/model.hpp"
#include "biacl/training.hpp"
#include "biacl/vocab.hpp"

namespace biacl {

// Parameters of the synthetic two-language world used by the end-to-end
// experiment: two vocabularies of `content_types` word types related by a
// deterministic word-for-word mapping, Zipf-distributed token frequencies,
// and a partial dictionary.
struct WorldConfig {
  int64_t content_types = 98;   // word types per language
  int64_t dict_types = 88;      // types that get a dictionary entry
  int64_t anchor_top = 20;      // most frequent types always covered
  int64_t train_sentences = 5000;
  int64_t heldout_sentences = 200;
  int64_t warm_pairs = 48;      // parallel pairs for the warm start
  int64_t min_len = 3;
  int64_t max_len = 10;
  // The warm start is deliberately partial: its pairs draw only on the
  // `warm_types` most frequent word types (0 = no restriction), so the
  // supervised model converges on that slice and the remaining types can
  // only be acquired from the dictionary during the monolingual phase.
  int64_t warm_types = 40;
  int64_t warm_min_len = 3;
  int64_t warm_max_len = 10;
  // Full-vocabulary monolingual sentences per language for the copy task of
  // the warm start. Like a pretrained base model, the warm model knows every
  // word monolingually; only the cross-lingual pairings are missing.
  int64_t copy_sentences = 1000;
  double zipf_exponent = 1.0;
  // When set, the L1 rendering of a sentence is the word-for-word mapping
  // in reverse order: the two languages disagree on word order, so getting
  // the source-side order right requires more than per-token substitution.
  bool reversed_order = true;
  uint64_t seed = 1;

  void validate() const;
};

// A generated world. Language 1 is the pseudo-source side (the model
// learns to translate L1 -> L2); the monolingual training data is all L2.
struct SyntheticWorld {
  Vocabulary vocab;  // specials + both languages' word types
  int l1 = 0;
  int l2 = 0;
  BilingualDictionary dict{0, 0};  // L2 word -> L1 word, partial
  MonolingualCorpus train_mono;    // L2 sentences, token ids
  std::vector<std::vector<int>> test_source;  // held-out L1 inputs
  std::vector<std::string> test_reference;    // aligned L2 references
  // Small parallel set (L1 ids, L2 ids) for supervised warm starting.
  std::vector<std::pair<std::vector<int>, std::vector<int>>> warm_pairs;
  // Full-vocabulary monolingual sentences for the warm copy task.
  std::vector<std::vector<int>> copy_l1;
  std::vector<std::vector<int>> copy_l2;
};

// Builds the world deterministically from `wc.seed`: samples sentences by
// Zipf-weighted types and uniform lengths, keeps train / held-out / warm
// sets mutually disjoint and duplicate-free, and covers `dict_types` word
// types (always including the `anchor_top` most frequent ones).
SyntheticWorld make_synthetic_world(const WorldConfig& wc);

// Two-phase supervised warm start, deterministic (fixed batch order,
// decoupled-weight-decay Adam). Phase 1 trains same-language copying on the
// full-vocabulary monolingual sentences for `copy_epochs`, giving every word
// type a live embedding. Phase 2 trains bidirectional translation on the
// warm pairs for `pair_epochs`, interleaving a slice of the copy task so the
// types absent from the pairs stay alive.
void warm_start(Model& model, const SyntheticWorld& world, double lr,
                int64_t copy_epochs, int64_t pair_epochs, int64_t batch_size);

// Beam-decodes a translation of `source` (no lexical constraints).
std::vector<int> translate(const Model& model, const std::vector<int>& source,
                           int src_lang, int tgt_lang, int eos, int64_t beam);

struct SystemEval {
  double bleu = 0.0;
  double i1_enc = 0.0;
  double i2_enc = 0.0;
  double i1_dec = 0.0;
  double i2_dec = 0.0;
};

// Held-out corpus BLEU (add-one smoothed) of beam-decoded translations.
double evaluate_bleu(const Model& model, const SyntheticWorld& world,
                     int64_t beam);

// BLEU plus encoder- and decoder-side isotropy of pooled hidden states
// sampled over the held-out inputs.
SystemEval evaluate_system(const Model& model, const SyntheticWorld& world,
                           int64_t beam, int64_t isotropy_samples,
                           uint64_t seed);

struct ExperimentConfig {
  WorldConfig world;
  TrainConfig train;  // shared verbatim by both trained systems
  int64_t d_model = 16;
  int64_t layers = 1;
  int64_t heads = 2;
  int64_t model_max_len = 16;
  uint64_t model_seed = 11;
  double warm_lr = 3e-3;
  int64_t warm_copy_epochs = 20;
  int64_t warm_epochs = 150;
  int64_t warm_batch = 8;
  int64_t eval_beam = 2;
  int64_t isotropy_samples = 128;
  uint64_t eval_seed = 5;

  void validate() const;
};

struct SystemRun {
  std::string name;
  SystemEval eval;
  TrainResult training;  // empty for the warm start row
};

struct ExperimentResult {
  SystemRun warm;     // after supervised warm start only
  SystemRun full;     // composite objective, constrained-search pairs
  SystemRun lexicon;  // word-for-word substitution baseline
  std::vector<std::string> results_tsv;  // header + one row per system
};

// Header + rows: system, pair, BLEU, I1_enc, I2_enc, I1_dec, I2_dec.
std::vector<std::string> results_table(const std::vector<SystemRun>& runs,
                                       const std::string& pair_label);

// World -> warm start -> both trained systems -> evaluations, all from the
// seeds recorded in `ec`. Both systems start from the same warm weights and
// train with the same configuration; only pseudo-source construction
// differs.
ExperimentResult run_experiment(const ExperimentConfig& ec);

// "ae_bkd+ae_fwd+cl_bkd+cl_fwd" style label of the enabled components.
std::string ablation_mask_label(const AblationMask& mask);

// All 15 non-empty on/off combinations of the four loss components, in
// binary counting order (ae_bkd is the lowest bit); the full composite is
// last.
std::vector<AblationMask> all_ablation_masks();

struct AblationGridResult {
  std::vector<uint64_t> seeds;
  std::vector<AblationMask> masks;
  std::vector<std::vector<double>> bleu;  // [seed index][mask index]
  std::vector<std::string> table;         // TSV: mask label + one BLEU column per seed
  int64_t full_mask_wins = 0;  // seeds where the full composite ties or tops all masks
};

// For each seed: rebuild the world / model / warm start with seed-derived
// randomness, then train every mask from the same warm weights and record
// held-out BLEU. `base` supplies the (typically reduced) scale.
AblationGridResult run_ablation_grid(const ExperimentConfig& base,
                                     const std::vector<uint64_t>& seeds);

}  // namespace biacl
