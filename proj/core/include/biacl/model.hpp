#pragma once

#include <string>
#include <vector>

#include "biacl/autodiff.hpp"
#include "biacl/tensor.hpp"

namespace biacl {

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 32;
  int64_t layers = 2;
  int64_t heads = 2;
  int64_t max_len = 64;
  std::vector<int> language_tags;  // token ids usable for conditioning

  void validate() const;
  bool is_language_tag(int id) const;
};

struct Parameter {
  std::string name;
  Tensor value;
};

/// Encoder output (or any [length, d_model] hidden sequence) living on a
/// graph, together with the language tag it was conditioned on.
struct HiddenSeq {
  Value states;  // [length, d_model]
  int lang = -1;
  int64_t length() const { return states.tensor().rows(); }
};

struct DecodeResult {
  Value states;  // [teacher_len, d_model] final-layer decoder vectors
  Value logits;  // [teacher_len, vocab]
};

class Model;

/// Model forward passes expressed on one graph. Binding copies the current
/// parameter values onto the graph as leaves; gradients for them come back
/// from Graph::backward keyed by parameter index.
class BoundModel {
 public:
  /// Encode token ids conditioned on a language tag. The tag token is
  /// prepended, so the output has tokens.size() + 1 positions.
  HiddenSeq encode(const std::vector<int>& tokens, int lang) const;

  /// Same pipeline over raw input vectors [len, d_model] instead of token
  /// embeddings; gradients flow into `vectors`. encode() is exactly
  /// encode_soft over the embedded rows.
  HiddenSeq encode_soft(const Value& vectors, int lang) const;

  /// Teacher-forced decode: input row t is the tag (t = 0) or teacher token
  /// t-1, so logits row t is the distribution for teacher position t.
  /// Self-attention is causal; all memory positions are visible.
  DecodeResult decode(const HiddenSeq& memory, int lang, const std::vector<int>& teacher) const;

  /// Last logits row of decode(memory, lang, prefix): the next-token
  /// distribution after prefix[0..n-2] (row n-1 cannot see prefix[n-1]).
  Tensor step_logits(const HiddenSeq& memory, int lang, const std::vector<int>& prefix) const;

  const Value& param(size_t index) const { return values_[index]; }
  Graph& graph() const { return *g_; }

 private:
  friend class Model;
  const Model* model_ = nullptr;
  Graph* g_ = nullptr;
  std::vector<Value> values_;  // aligned with Model::params()
};

/// Tiny transformer encoder-decoder with tied input/output embeddings,
/// sinusoidal position encodings and language-tag conditioning.
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  BoundModel bind(Graph& g) const;

  /// Binary checkpoint: magic "BIACL1", little-endian u64 config fields and
  /// tensor dims, little-endian f64 payloads in parameter-registration order.
  void save(const std::string& path) const;
  static Model load(const std::string& path);

  /// First `len` rows of the sinusoidal position table.
  Tensor position_rows(int64_t len) const;

 private:
  Model() = default;
  void build_params(uint64_t seed);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  Tensor pos_;  // [max_len, d_model]
};

}  // namespace biacl
