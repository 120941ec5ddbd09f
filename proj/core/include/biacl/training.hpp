#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "biacl/data.hpp"
#include "biacl/decoding.hpp"
#include "biacl/model.hpp"

namespace biacl {

struct TrainConfig {
  double lambda = 0.7;         // weight between reconstruction and contrastive terms
  double tau = 0.1;            // contrastive temperature
  double eps_neg = 0.5;        // norm of the adversarial (negative) perturbation
  double eps_pos = 1.0;        // per-position norm of the similarity-preserving (positive) perturbation
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  int64_t epochs = 3;
  int64_t beam = 4;
  int64_t batch_size = 8;
  double phi = 0.9;            // curriculum coverage threshold
  uint64_t seed = 1;

  // Checks every field and reports all violations in one exception message.
  void validate() const;
};

// key=value text, '#' comments and blank lines allowed. Unknown keys, bad
// numbers and invariant violations are all collected and reported together.
TrainConfig parse_train_config(const std::vector<std::string>& lines);
TrainConfig load_train_config(const std::string& path);
std::string train_config_text(const TrainConfig& cfg);

// Which of the four loss terms participate in the objective.
struct AblationMask {
  bool ae_bkd = true;
  bool ae_fwd = true;
  bool cl_bkd = true;
  bool cl_fwd = true;
  bool any() const { return ae_bkd || ae_fwd || cl_bkd || cl_fwd; }
};

struct LossReport {
  double ae_bkd = 0.0;
  double ae_fwd = 0.0;
  double cl_bkd = 0.0;
  double cl_fwd = 0.0;
  double l_star = 0.0;
  int64_t skipped = 0;  // pairs dropped (generation failed or length guard)
};

// lambda*(ae_bkd + ae_fwd) + (1-lambda)*(cl_bkd + cl_fwd), evaluated in
// exactly that association so it reproduces the graph's scalar bit for bit.
// Non-finite inputs are rejected naming the offending component.
double composite_loss(double ae_bkd, double ae_fwd, double cl_bkd,
                      double cl_fwd, double lambda);

// Decoupled-weight-decay Adam. Moment state is keyed by parameter index and
// created lazily on the first step.
class AdamW {
 public:
  explicit AdamW(double lr, double weight_decay = 0.01, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

  void step(std::vector<Parameter>& params,
            const std::map<int64_t, Tensor>& grads);
  int64_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<int64_t, Tensor> m_, v_;
};

struct AeBackward {
  Value loss;    // token-mean prediction loss of the source tokens plus end marker
  Value states;  // decoder states, consumed by the forward half
};

// Teacher-forced reconstruction of `source` from the target-side memory.
AeBackward backward_ae_loss(const BoundModel& bound, const HiddenSeq& target_memory,
                            const std::vector<int>& source, int src_lang, int eos);

// Re-encodes the backward decoder states as if they were a source sentence
// and scores the reconstruction of `target` from them; gradients flow
// through `bkd_states` back into the backward half.
Value forward_ae_loss(const BoundModel& bound, const Value& bkd_states,
                      const std::vector<int>& target, int tgt_lang, int src_lang,
                      int eos);

// Gradient of the token-mean teacher-forced log-likelihood with respect to
// the memory states (scratch computation; the live graph is untouched).
// h_states: [len, d_model] encoder-side memory, enc_lang its conditioning tag.
Tensor loglik_grad(const Model& model, const Tensor& h_states, int enc_lang,
                   int dec_lang, const std::vector<int>& teacher);

// Adversarial direction: delta = -eps_neg * g / ||g||_2 for g the
// log-likelihood gradient, so moving to H + delta lowers the likelihood.
// ||delta||_2 = eps_neg; a vanishing gradient falls back to a seeded random
// direction of the same norm.
Tensor negative_delta(const Tensor& loglik_g, double eps_neg,
                      uint64_t fallback_seed);

// H + delta on H's graph. The perturbation enters as a constant, so
// gradients flow into H but not into the construction of delta.
HiddenSeq make_negative(const HiddenSeq& h, const Tensor& loglik_g,
                        double eps_neg, uint64_t fallback_seed);

// Similarity-preserving perturbation: zeta starts as a seeded random sequence
// with norm eps_pos per position, takes one backtracked gradient-descent step
// on KL(frozen dist at h || dist at h+zeta) over the teacher-forced decode,
// and is renormalized per position. The returned zeta never has higher KL
// than its random initialization (the step is rejected otherwise) and keeps
// norm eps_pos at every position. eps_pos = 0 yields the zero perturbation.
// kl_init/kl_final, when given, receive the KL at initialization and at the
// returned value.
Tensor positive_perturbation(const Model& model, const Tensor& h_states,
                             int enc_lang, int dec_lang,
                             const std::vector<int>& teacher, double eps_pos,
                             uint64_t seed, double* kl_init = nullptr,
                             double* kl_final = nullptr);

// H + zeta on H's graph (zeta constant). eps_pos = 0 returns h unchanged.
HiddenSeq make_positive(const Model& model, const HiddenSeq& h, int dec_lang,
                        const std::vector<int>& teacher, double eps_pos,
                        uint64_t seed);

// Mean over anchors of  -cos(anchor_i, positive_i)/tau
//                       + log sum_j exp(cos(anchor_i, negative_j)/tau).
// All inputs are pooled [d_model] vectors on one graph; every anchor is
// scored against the whole negative set. The positive term is excluded from
// the denominator, so the loss can be negative.
Value contrastive_batch_loss(const std::vector<Value>& anchors,
                             const std::vector<Value>& positives,
                             const std::vector<Value>& negatives, double tau);

// How a batch obtains its pseudo-sources: constrained beam search against the
// current parameters, or word-for-word lexicon substitution. Everything else
// about the training step is shared.
enum class PairSource { kConstrainedSearch, kLexicon };

struct TrainResult {
  std::vector<LossReport> step_reports;   // one per batch; all-skipped batches report zeros
  std::vector<LossReport> epoch_reports;  // component means per epoch, skips summed
  std::vector<std::string> log_lines;     // per-step TSV: step, five losses, skipped
  int64_t steps = 0;                      // optimizer steps actually taken
  int64_t skipped_pairs = 0;
};

// Trains the model in place on target-side monolingual data. Sentences are
// ordered by dictionary coverage (threshold cfg.phi), cut into batches, and
// each batch regenerates its pseudo-sources by constrained beam search
// against the current parameters before one optimizer step on the masked
// composite objective. Deterministic for a fixed seed. An all-off mask
// leaves the parameters untouched and performs no work.
TrainResult train(Model& model, const MonolingualCorpus& target_corpus,
                  const Vocabulary& vocab, const BilingualDictionary& dict,
                  int src_lang, const TrainConfig& cfg, const AblationMask& mask,
                  PairSource source = PairSource::kConstrainedSearch);

}  // namespace biacl
