#pragma once

#include <array>
#include <deque>
#include <map>
#include <vector>

#include "biacl/tensor.hpp"

namespace biacl {

class Graph;

/// Operation vocabulary of the reverse-mode engine. Attribute-free ops can
/// also be reached through the generic apply() dispatcher.
enum class OpKind {
  kLeaf,           // differentiable input (parameter or free leaf)
  kConstant,       // non-differentiable input
  kMatMul,         // [m,k] x [k,n] -> [m,n]
  kTranspose,      // [m,n] -> [n,m]
  kAdd,            // elementwise; second input may be a [n] row against [m,n]
  kMul,            // elementwise; same broadcast rule as kAdd
  kScale,          // x * c for a compile-time constant c
  kExp,            // elementwise
  kLog,            // elementwise
  kSilu,           // elementwise x * sigmoid(x)
  kSoftmax,        // row-wise over the last dimension of a rank-2 input
  kLogSoftmax,     // row-wise
  kLayerNorm,      // (x[m,n], gain[n], bias[n]) -> [m,n]
  kEmbedding,      // (table[v,d]; ids) -> [len,d]
  kConcatRows,     // ([p,n], [q,n]) -> [p+q,n]
  kConcatCols,     // ([m,p], [m,q]) -> [m,p+q]
  kSliceCols,      // x[m,n], [lo,hi) -> [m,hi-lo]
  kMeanRows,       // [m,n] -> [n], mean over positions
  kL2Norm,         // any shape -> scalar Euclidean norm
  kCrossEntropy,   // (logits[m,v]; integer targets) -> scalar token-mean
  kKlDivergence,   // (p_logits[m,v], q_logits[m,v]) -> scalar row-mean KL(p||q)
  kCosine,         // (u[d], v[d]) -> scalar cosine similarity
};

const char* op_name(OpKind k);

/// Lightweight handle to a node on a Graph. Values are only meaningful while
/// the owning Graph is alive and has not been reset.
class Value {
 public:
  Value() = default;
  Value(Graph* g, int id) : g_(g), id_(id) {}

  const Tensor& tensor() const;
  std::vector<int64_t> shape() const;
  bool valid() const { return g_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Graph* graph() const { return g_; }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

/// Define-by-run tape. Nodes are appended in execution order, which is also a
/// topological order, so the backward sweep is a single reverse pass. The
/// graph is rebuilt per step by the callers; reset() keeps allocated capacity.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::array<int, 3> in{-1, -1, -1};
    Tensor value;
    Tensor grad;               // adjoint, populated by backward()
    bool grad_live = false;    // whether grad holds real data for this sweep
    int64_t param_id = -1;     // >= 0 marks a parameter leaf
    std::vector<int64_t> iattr;  // ids / targets / slice bounds
    double dattr = 0.0;          // scale factor or epsilon
  };

  /// Differentiable leaf carrying a parameter id; backward() reports its
  /// gradient in the returned map (all-zero when unreachable from the loss).
  Value parameter(Tensor t, int64_t param_id);
  /// Differentiable leaf without a parameter id (perturbations, probes).
  Value leaf(Tensor t);
  /// Non-differentiable input.
  Value constant(Tensor t);

  /// Reverse-mode sweep from a scalar loss. Returns parameter-id -> gradient
  /// for every parameter leaf registered on this graph. Adjoints of all other
  /// nodes remain readable through grad() until the next backward()/reset().
  std::map<int64_t, Tensor> backward(const Value& loss);

  /// Adjoint of any node after backward(); zeros if the node was unreachable.
  Tensor grad(const Value& v) const;

  void reset();
  size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  // Internal: append a node, run its forward kernel, enforce finiteness.
  Value emit(Node n);

 private:
  // deque: node addresses stay stable while the graph grows, so references
  // returned by Value::tensor() remain valid until reset()
  std::deque<Node> nodes_;
};

// ---- op builders ----------------------------------------------------------

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value add(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double c);
Value vexp(const Value& a);
Value vlog(const Value& a);
Value silu(const Value& a);
Value softmax(const Value& a);
Value log_softmax(const Value& a);
Value layer_norm(const Value& x, const Value& gain, const Value& bias);
Value embedding(const Value& table, const std::vector<int>& ids);
Value concat_rows(const Value& a, const Value& b);
Value concat_cols(const Value& a, const Value& b);
Value slice_cols(const Value& a, int64_t lo, int64_t hi);
Value mean_rows(const Value& a);
Value l2_norm(const Value& a);
Value cross_entropy(const Value& logits, const std::vector<int>& targets);
Value kl_divergence(const Value& p_logits, const Value& q_logits);
Value cosine_similarity(const Value& u, const Value& v);

/// softmax(q kT / sqrt(d) [+ causal mask]) v, composed from primitive ops so
/// its gradient follows from theirs. q:[m,d] k:[n,d] v:[n,d] -> [m,d].
Value scaled_dot_attention(const Value& q, const Value& k, const Value& v, bool causal);

/// Generic dispatcher over the op vocabulary for ops whose inputs are plain
/// tensors. Integer-carrying ops (embedding lookup, cross-entropy) take their
/// ids/targets as a trailing rank-1 Value holding integral floats.
Value apply(OpKind kind, const std::vector<Value>& inputs);

}  // namespace biacl
