#include "biacl/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace biacl {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSilu: return "silu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kL2Norm: return "l2_norm";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kKlDivergence: return "kl_divergence";
    case OpKind::kCosine: return "cosine_similarity";
  }
  return "?";
}

const Tensor& Value::tensor() const {
  if (!valid()) throw std::logic_error("Value::tensor on an empty handle");
  return g_->node(id_).value;
}

std::vector<int64_t> Value::shape() const { return tensor().shape; }

namespace {

[[noreturn]] void shape_error(OpKind k, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op_name(k)) + ": shape mismatch " +
                              shape_str(a.shape) + " vs " + shape_str(b.shape));
}

[[noreturn]] void shape_error(OpKind k, const Tensor& a, const char* need) {
  throw std::invalid_argument(std::string(op_name(k)) + ": got " + shape_str(a.shape) +
                              ", need " + need);
}

void require_rank2(OpKind k, const Tensor& t) {
  if (t.rank() != 2) shape_error(k, t, "a rank-2 tensor");
}

// true when b may broadcast as a row over a: a [m,n], b [n]
bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.cols();
}

// numerically safe row-wise log-softmax into out (same shape as in)
void log_softmax_rows(const Tensor& x, Tensor& out) {
  int64_t m = x.rows(), n = x.cols();
  for (int64_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += std::exp(x.at(i, j) - mx);
    double lse = mx + std::log(s);
    for (int64_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) - lse;
  }
}

}  // namespace

Value Graph::parameter(Tensor t, int64_t param_id) {
  if (param_id < 0) throw std::invalid_argument("parameter id must be >= 0");
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(t);
  n.param_id = param_id;
  return emit(std::move(n));
}

Value Graph::leaf(Tensor t) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(t);
  return emit(std::move(n));
}

Value Graph::constant(Tensor t) {
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(t);
  return emit(std::move(n));
}

void Graph::reset() { nodes_.clear(); }

namespace {

// Forward kernels. Each computes node.value from its inputs; shape checking
// happens in the builders before emit().
void forward_matmul(const Tensor& a, const Tensor& b, Tensor& c) {
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  c = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i * k)];
    double* crow = &c.data[static_cast<size_t>(i * n)];
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = &b.data[static_cast<size_t>(p * n)];
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Value Graph::emit(Node n) {
  const Tensor* in0 = n.in[0] >= 0 ? &nodes_[static_cast<size_t>(n.in[0])].value : nullptr;
  const Tensor* in1 = n.in[1] >= 0 ? &nodes_[static_cast<size_t>(n.in[1])].value : nullptr;
  const Tensor* in2 = n.in[2] >= 0 ? &nodes_[static_cast<size_t>(n.in[2])].value : nullptr;

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      if (!n.value.all_finite())
        throw std::invalid_argument(std::string(op_name(n.kind)) + ": non-finite input rejected");
      break;
    case OpKind::kMatMul:
      forward_matmul(*in0, *in1, n.value);
      break;
    case OpKind::kTranspose: {
      int64_t m = in0->rows(), c = in0->cols();
      n.value = Tensor::zeros({c, m});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) n.value.at(j, i) = in0->at(i, j);
      break;
    }
    case OpKind::kAdd: {
      n.value = *in0;
      if (in0->same_shape(*in1)) {
        for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += in1->data[i];
      } else {  // row broadcast
        int64_t m = in0->rows(), c = in0->cols();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) n.value.at(i, j) += in1->at(j);
      }
      break;
    }
    case OpKind::kMul: {
      n.value = *in0;
      if (in0->same_shape(*in1)) {
        for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= in1->data[i];
      } else {
        int64_t m = in0->rows(), c = in0->cols();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) n.value.at(i, j) *= in1->at(j);
      }
      break;
    }
    case OpKind::kScale: {
      n.value = *in0;
      for (double& x : n.value.data) x *= n.dattr;
      break;
    }
    case OpKind::kExp: {
      n.value = *in0;
      for (double& x : n.value.data) x = std::exp(x);
      break;
    }
    case OpKind::kLog: {
      n.value = *in0;
      for (double& x : n.value.data) x = std::log(x);
      break;
    }
    case OpKind::kSilu: {
      n.value = *in0;
      for (double& x : n.value.data) x = x / (1.0 + std::exp(-x));
      break;
    }
    case OpKind::kSoftmax: {
      n.value = Tensor::zeros(in0->shape);
      log_softmax_rows(*in0, n.value);
      for (double& x : n.value.data) x = std::exp(x);
      break;
    }
    case OpKind::kLogSoftmax: {
      n.value = Tensor::zeros(in0->shape);
      log_softmax_rows(*in0, n.value);
      break;
    }
    case OpKind::kLayerNorm: {
      const Tensor& x = *in0;
      const Tensor& g = *in1;
      const Tensor& b = *in2;
      int64_t m = x.rows(), c = x.cols();
      n.value = Tensor::zeros({m, c});
      for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          double d = x.at(i, j) - mu;
          var += d * d;
        }
        var /= static_cast<double>(c);
        double r = 1.0 / std::sqrt(var + n.dattr);
        for (int64_t j = 0; j < c; ++j)
          n.value.at(i, j) = (x.at(i, j) - mu) * r * g.at(j) + b.at(j);
      }
      break;
    }
    case OpKind::kEmbedding: {
      const Tensor& tb = *in0;
      int64_t len = static_cast<int64_t>(n.iattr.size()), d = tb.cols();
      n.value = Tensor::zeros({len, d});
      for (int64_t i = 0; i < len; ++i) {
        int64_t id = n.iattr[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j) n.value.at(i, j) = tb.at(id, j);
      }
      break;
    }
    case OpKind::kConcatRows: {
      int64_t p = in0->rows(), q = in1->rows(), c = in0->cols();
      n.value = Tensor::zeros({p + q, c});
      std::copy(in0->data.begin(), in0->data.end(), n.value.data.begin());
      std::copy(in1->data.begin(), in1->data.end(),
                n.value.data.begin() + static_cast<int64_t>(p * c));
      break;
    }
    case OpKind::kConcatCols: {
      int64_t m = in0->rows(), p = in0->cols(), q = in1->cols();
      n.value = Tensor::zeros({m, p + q});
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < p; ++j) n.value.at(i, j) = in0->at(i, j);
        for (int64_t j = 0; j < q; ++j) n.value.at(i, p + j) = in1->at(i, j);
      }
      break;
    }
    case OpKind::kSliceCols: {
      int64_t lo = n.iattr[0], hi = n.iattr[1];
      int64_t m = in0->rows();
      n.value = Tensor::zeros({m, hi - lo});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = lo; j < hi; ++j) n.value.at(i, j - lo) = in0->at(i, j);
      break;
    }
    case OpKind::kMeanRows: {
      int64_t m = in0->rows(), c = in0->cols();
      n.value = Tensor::zeros({c});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) n.value.at(j) += in0->at(i, j);
      for (double& x : n.value.data) x /= static_cast<double>(m);
      break;
    }
    case OpKind::kL2Norm:
      n.value = Tensor::scalar(in0->l2());
      break;
    case OpKind::kCrossEntropy: {
      const Tensor& lg = *in0;
      Tensor lsm = Tensor::zeros(lg.shape);
      log_softmax_rows(lg, lsm);
      double s = 0.0;
      for (size_t i = 0; i < n.iattr.size(); ++i)
        s -= lsm.at(static_cast<int64_t>(i), n.iattr[i]);
      n.value = Tensor::scalar(s / static_cast<double>(n.iattr.size()));
      break;
    }
    case OpKind::kKlDivergence: {
      const Tensor& pl = *in0;
      const Tensor& ql = *in1;
      int64_t m = pl.rows(), c = pl.cols();
      Tensor lp = Tensor::zeros(pl.shape), lq = Tensor::zeros(ql.shape);
      log_softmax_rows(pl, lp);
      log_softmax_rows(ql, lq);
      double s = 0.0;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j)
          s += std::exp(lp.at(i, j)) * (lp.at(i, j) - lq.at(i, j));
      n.value = Tensor::scalar(s / static_cast<double>(m));
      break;
    }
    case OpKind::kCosine: {
      double nu = in0->l2(), nv = in1->l2();
      if (nu == 0.0 || nv == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm input");
      n.value = Tensor::scalar(in0->dot(*in1) / (nu * nv));
      break;
    }
  }

  if (n.kind != OpKind::kLeaf && n.kind != OpKind::kConstant && !n.value.all_finite())
    throw std::invalid_argument(std::string(op_name(n.kind)) + ": produced non-finite values");

  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int>(nodes_.size()) - 1);
}

namespace {

void accumulate(Graph::Node& dst, const Tensor& g) {
  if (!dst.grad_live) {
    dst.grad = Tensor::zeros(dst.value.shape);
    dst.grad_live = true;
  }
  for (size_t i = 0; i < g.data.size(); ++i) dst.grad.data[i] += g.data[i];
}

}  // namespace

std::map<int64_t, Tensor> Graph::backward(const Value& loss) {
  if (!loss.valid() || loss.graph() != this)
    throw std::invalid_argument("backward: loss does not belong to this graph");
  if (!loss.tensor().is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.tensor().shape));

  for (Node& n : nodes_) n.grad_live = false;

  Node& root = nodes_[static_cast<size_t>(loss.id())];
  root.grad = Tensor::full(root.value.shape, 1.0);
  root.grad_live = true;

  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) continue;
    const Tensor& gy = n.grad;
    Node* a = n.in[0] >= 0 ? &nodes_[static_cast<size_t>(n.in[0])] : nullptr;
    Node* b = n.in[1] >= 0 ? &nodes_[static_cast<size_t>(n.in[1])] : nullptr;
    Node* c = n.in[2] >= 0 ? &nodes_[static_cast<size_t>(n.in[2])] : nullptr;

    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul: {
        // dA = dC * B^T ; dB = A^T * dC
        const Tensor& A = a->value;
        const Tensor& B = b->value;
        int64_t m = A.rows(), k = A.cols(), nn = B.cols();
        Tensor da = Tensor::zeros(A.shape);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < nn; ++j) {
            double gv = gy.at(i, j);
            for (int64_t p = 0; p < k; ++p) da.at(i, p) += gv * B.at(p, j);
          }
        accumulate(*a, da);
        Tensor db = Tensor::zeros(B.shape);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double av = A.at(i, p);
            for (int64_t j = 0; j < nn; ++j) db.at(p, j) += av * gy.at(i, j);
          }
        accumulate(*b, db);
        break;
      }
      case OpKind::kTranspose: {
        Tensor da = Tensor::zeros(a->value.shape);
        for (int64_t i = 0; i < gy.rows(); ++i)
          for (int64_t j = 0; j < gy.cols(); ++j) da.at(j, i) = gy.at(i, j);
        accumulate(*a, da);
        break;
      }
      case OpKind::kAdd: {
        accumulate(*a, gy);
        if (a->value.same_shape(b->value)) {
          accumulate(*b, gy);
        } else {
          Tensor db = Tensor::zeros(b->value.shape);
          for (int64_t i = 0; i < gy.rows(); ++i)
            for (int64_t j = 0; j < gy.cols(); ++j) db.at(j) += gy.at(i, j);
          accumulate(*b, db);
        }
        break;
      }
      case OpKind::kMul: {
        if (a->value.same_shape(b->value)) {
          Tensor da = gy;
          for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= b->value.data[i];
          accumulate(*a, da);
          Tensor db = gy;
          for (size_t i = 0; i < db.data.size(); ++i) db.data[i] *= a->value.data[i];
          accumulate(*b, db);
        } else {
          Tensor da = gy;
          for (int64_t i = 0; i < da.rows(); ++i)
            for (int64_t j = 0; j < da.cols(); ++j) da.at(i, j) *= b->value.at(j);
          accumulate(*a, da);
          Tensor db = Tensor::zeros(b->value.shape);
          for (int64_t i = 0; i < gy.rows(); ++i)
            for (int64_t j = 0; j < gy.cols(); ++j) db.at(j) += gy.at(i, j) * a->value.at(i, j);
          accumulate(*b, db);
        }
        break;
      }
      case OpKind::kScale: {
        Tensor da = gy;
        for (double& x : da.data) x *= n.dattr;
        accumulate(*a, da);
        break;
      }
      case OpKind::kExp: {
        Tensor da = gy;
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= n.value.data[i];
        accumulate(*a, da);
        break;
      }
      case OpKind::kLog: {
        Tensor da = gy;
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] /= a->value.data[i];
        accumulate(*a, da);
        break;
      }
      case OpKind::kSilu: {
        Tensor da = gy;
        for (size_t i = 0; i < da.data.size(); ++i) {
          double x = a->value.data[i];
          double s = 1.0 / (1.0 + std::exp(-x));
          da.data[i] *= s * (1.0 + x * (1.0 - s));
        }
        accumulate(*a, da);
        break;
      }
      case OpKind::kSoftmax: {
        // dx = y * (dy - sum(dy * y)) per row
        const Tensor& y = n.value;
        Tensor da = Tensor::zeros(y.shape);
        for (int64_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (int64_t j = 0; j < y.cols(); ++j) dot += gy.at(i, j) * y.at(i, j);
          for (int64_t j = 0; j < y.cols(); ++j)
            da.at(i, j) = y.at(i, j) * (gy.at(i, j) - dot);
        }
        accumulate(*a, da);
        break;
      }
      case OpKind::kLogSoftmax: {
        // dx = dy - softmax(x) * sum(dy) per row
        const Tensor& y = n.value;
        Tensor da = Tensor::zeros(y.shape);
        for (int64_t i = 0; i < y.rows(); ++i) {
          double s = 0.0;
          for (int64_t j = 0; j < y.cols(); ++j) s += gy.at(i, j);
          for (int64_t j = 0; j < y.cols(); ++j)
            da.at(i, j) = gy.at(i, j) - std::exp(y.at(i, j)) * s;
        }
        accumulate(*a, da);
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = a->value;
        const Tensor& g = b->value;
        int64_t m = x.rows(), cc = x.cols();
        double inv_c = 1.0 / static_cast<double>(cc);
        Tensor da = Tensor::zeros(x.shape);
        Tensor dg = Tensor::zeros(g.shape);
        Tensor db = Tensor::zeros(g.shape);
        for (int64_t i = 0; i < m; ++i) {
          double mu = 0.0;
          for (int64_t j = 0; j < cc; ++j) mu += x.at(i, j);
          mu *= inv_c;
          double var = 0.0;
          for (int64_t j = 0; j < cc; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
          }
          var *= inv_c;
          double r = 1.0 / std::sqrt(var + n.dattr);
          double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (int64_t j = 0; j < cc; ++j) {
            double xh = (x.at(i, j) - mu) * r;
            double dxh = gy.at(i, j) * g.at(j);
            dg.at(j) += gy.at(i, j) * xh;
            db.at(j) += gy.at(i, j);
            m1 += dxh;
            m2 += dxh * xh;
          }
          m1 *= inv_c;
          m2 *= inv_c;
          for (int64_t j = 0; j < cc; ++j) {
            double xh = (x.at(i, j) - mu) * r;
            double dxh = gy.at(i, j) * g.at(j);
            da.at(i, j) = r * (dxh - m1 - xh * m2);
          }
        }
        accumulate(*a, da);
        accumulate(*b, dg);
        accumulate(*c, db);
        break;
      }
      case OpKind::kEmbedding: {
        Tensor dt = Tensor::zeros(a->value.shape);
        int64_t d = a->value.cols();
        for (size_t i = 0; i < n.iattr.size(); ++i) {
          int64_t id2 = n.iattr[i];
          for (int64_t j = 0; j < d; ++j)
            dt.at(id2, j) += gy.at(static_cast<int64_t>(i), j);
        }
        accumulate(*a, dt);
        break;
      }
      case OpKind::kConcatRows: {
        int64_t p = a->value.rows(), cc = a->value.cols();
        Tensor da = Tensor::zeros(a->value.shape);
        Tensor db = Tensor::zeros(b->value.shape);
        std::copy(gy.data.begin(), gy.data.begin() + static_cast<int64_t>(p * cc), da.data.begin());
        std::copy(gy.data.begin() + static_cast<int64_t>(p * cc), gy.data.end(), db.data.begin());
        accumulate(*a, da);
        accumulate(*b, db);
        break;
      }
      case OpKind::kConcatCols: {
        int64_t m = a->value.rows(), p = a->value.cols(), q = b->value.cols();
        Tensor da = Tensor::zeros(a->value.shape);
        Tensor db = Tensor::zeros(b->value.shape);
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t j = 0; j < p; ++j) da.at(i, j) = gy.at(i, j);
          for (int64_t j = 0; j < q; ++j) db.at(i, j) = gy.at(i, p + j);
        }
        accumulate(*a, da);
        accumulate(*b, db);
        break;
      }
      case OpKind::kSliceCols: {
        int64_t lo = n.iattr[0], hi = n.iattr[1];
        Tensor da = Tensor::zeros(a->value.shape);
        for (int64_t i = 0; i < gy.rows(); ++i)
          for (int64_t j = lo; j < hi; ++j) da.at(i, j) = gy.at(i, j - lo);
        accumulate(*a, da);
        break;
      }
      case OpKind::kMeanRows: {
        int64_t m = a->value.rows(), cc = a->value.cols();
        double inv_m = 1.0 / static_cast<double>(m);
        Tensor da = Tensor::zeros(a->value.shape);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < cc; ++j) da.at(i, j) = gy.at(j) * inv_m;
        accumulate(*a, da);
        break;
      }
      case OpKind::kL2Norm: {
        double y = n.value.at(0);
        Tensor da = Tensor::zeros(a->value.shape);
        if (y > 0.0) {
          double s = gy.at(0) / y;
          for (size_t i = 0; i < da.data.size(); ++i) da.data[i] = a->value.data[i] * s;
        }
        accumulate(*a, da);
        break;
      }
      case OpKind::kCrossEntropy: {
        const Tensor& lg = a->value;
        Tensor lsm = Tensor::zeros(lg.shape);
        log_softmax_rows(lg, lsm);
        double s = gy.at(0) / static_cast<double>(n.iattr.size());
        Tensor da = Tensor::zeros(lg.shape);
        for (size_t i = 0; i < n.iattr.size(); ++i) {
          int64_t r = static_cast<int64_t>(i);
          for (int64_t j = 0; j < lg.cols(); ++j)
            da.at(r, j) = std::exp(lsm.at(r, j)) * s;
          da.at(r, n.iattr[i]) -= s;
        }
        accumulate(*a, da);
        break;
      }
      case OpKind::kKlDivergence: {
        const Tensor& pl = a->value;
        const Tensor& ql = b->value;
        int64_t m = pl.rows(), cc = pl.cols();
        Tensor lp = Tensor::zeros(pl.shape), lq = Tensor::zeros(ql.shape);
        log_softmax_rows(pl, lp);
        log_softmax_rows(ql, lq);
        double s = gy.at(0) / static_cast<double>(m);
        Tensor da = Tensor::zeros(pl.shape);
        Tensor db = Tensor::zeros(ql.shape);
        for (int64_t i = 0; i < m; ++i) {
          double kl_row = 0.0;
          for (int64_t j = 0; j < cc; ++j)
            kl_row += std::exp(lp.at(i, j)) * (lp.at(i, j) - lq.at(i, j));
          for (int64_t j = 0; j < cc; ++j) {
            double P = std::exp(lp.at(i, j));
            double Q = std::exp(lq.at(i, j));
            da.at(i, j) = P * ((lp.at(i, j) - lq.at(i, j)) - kl_row) * s;
            db.at(i, j) = (Q - P) * s;
          }
        }
        accumulate(*a, da);
        accumulate(*b, db);
        break;
      }
      case OpKind::kCosine: {
        const Tensor& u = a->value;
        const Tensor& v = b->value;
        double nu = u.l2(), nv = v.l2();
        double cval = n.value.at(0);
        double g0 = gy.at(0);
        Tensor du = Tensor::zeros(u.shape);
        Tensor dv = Tensor::zeros(v.shape);
        for (size_t i = 0; i < u.data.size(); ++i) {
          du.data[i] = g0 * (v.data[i] / (nu * nv) - cval * u.data[i] / (nu * nu));
          dv.data[i] = g0 * (u.data[i] / (nu * nv) - cval * v.data[i] / (nv * nv));
        }
        accumulate(*a, du);
        accumulate(*b, dv);
        break;
      }
    }
  }

  std::map<int64_t, Tensor> grads;
  for (Node& n : nodes_) {
    if (n.param_id < 0) continue;
    grads.emplace(n.param_id, n.grad_live ? n.grad : Tensor::zeros(n.value.shape));
  }
  return grads;
}

Tensor Graph::grad(const Value& v) const {
  if (!v.valid() || v.graph() != this)
    throw std::invalid_argument("grad: value does not belong to this graph");
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  return n.grad_live ? n.grad : Tensor::zeros(n.value.shape);
}

// ---- builders --------------------------------------------------------------

namespace {

Graph* common_graph(const Value& a, const Value& b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph())
    throw std::invalid_argument("op inputs must live on the same graph");
  return a.graph();
}

Value emit1(OpKind k, const Value& a, std::vector<int64_t> iattr = {}, double dattr = 0.0) {
  Graph::Node n;
  n.kind = k;
  n.in[0] = a.id();
  n.iattr = std::move(iattr);
  n.dattr = dattr;
  return a.graph()->emit(std::move(n));
}

Value emit2(OpKind k, const Value& a, const Value& b, double dattr = 0.0) {
  common_graph(a, b);
  Graph::Node n;
  n.kind = k;
  n.in[0] = a.id();
  n.in[1] = b.id();
  n.dattr = dattr;
  return a.graph()->emit(std::move(n));
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
    shape_error(OpKind::kMatMul, ta, tb);
  return emit2(OpKind::kMatMul, a, b);
}

Value transpose(const Value& a) {
  require_rank2(OpKind::kTranspose, a.tensor());
  return emit1(OpKind::kTranspose, a);
}

Value add(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb) && !row_broadcast(ta, tb)) shape_error(OpKind::kAdd, ta, tb);
  return emit2(OpKind::kAdd, a, b);
}

Value mul(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb) && !row_broadcast(ta, tb)) shape_error(OpKind::kMul, ta, tb);
  return emit2(OpKind::kMul, a, b);
}

Value scale(const Value& a, double c) { return emit1(OpKind::kScale, a, {}, c); }
Value vexp(const Value& a) { return emit1(OpKind::kExp, a); }
Value vlog(const Value& a) { return emit1(OpKind::kLog, a); }
Value silu(const Value& a) { return emit1(OpKind::kSilu, a); }

Value softmax(const Value& a) {
  require_rank2(OpKind::kSoftmax, a.tensor());
  return emit1(OpKind::kSoftmax, a);
}

Value log_softmax(const Value& a) {
  require_rank2(OpKind::kLogSoftmax, a.tensor());
  return emit1(OpKind::kLogSoftmax, a);
}

Value layer_norm(const Value& x, const Value& gain, const Value& bias) {
  const Tensor& tx = x.tensor();
  require_rank2(OpKind::kLayerNorm, tx);
  if (gain.tensor().rank() != 1 || gain.tensor().shape[0] != tx.cols())
    shape_error(OpKind::kLayerNorm, tx, gain.tensor());
  if (bias.tensor().rank() != 1 || bias.tensor().shape[0] != tx.cols())
    shape_error(OpKind::kLayerNorm, tx, bias.tensor());
  common_graph(x, gain);
  common_graph(x, bias);
  Graph::Node n;
  n.kind = OpKind::kLayerNorm;
  n.in[0] = x.id();
  n.in[1] = gain.id();
  n.in[2] = bias.id();
  n.dattr = 1e-5;
  return x.graph()->emit(std::move(n));
}

Value embedding(const Value& table, const std::vector<int>& ids) {
  const Tensor& tb = table.tensor();
  require_rank2(OpKind::kEmbedding, tb);
  if (ids.empty()) throw std::invalid_argument("embedding: empty id sequence");
  std::vector<int64_t> iattr;
  iattr.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= tb.rows())
      throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                  " out of range for table " + shape_str(tb.shape));
    iattr.push_back(id);
  }
  return emit1(OpKind::kEmbedding, table, std::move(iattr));
}

Value concat_rows(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
    shape_error(OpKind::kConcatRows, ta, tb);
  return emit2(OpKind::kConcatRows, a, b);
}

Value concat_cols(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows())
    shape_error(OpKind::kConcatCols, ta, tb);
  return emit2(OpKind::kConcatCols, a, b);
}

Value slice_cols(const Value& a, int64_t lo, int64_t hi) {
  const Tensor& ta = a.tensor();
  require_rank2(OpKind::kSliceCols, ta);
  if (lo < 0 || hi > ta.cols() || lo >= hi)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + ") for " + shape_str(ta.shape));
  return emit1(OpKind::kSliceCols, a, {lo, hi});
}

Value mean_rows(const Value& a) {
  require_rank2(OpKind::kMeanRows, a.tensor());
  return emit1(OpKind::kMeanRows, a);
}

Value l2_norm(const Value& a) { return emit1(OpKind::kL2Norm, a); }

Value cross_entropy(const Value& logits, const std::vector<int>& targets) {
  const Tensor& lg = logits.tensor();
  require_rank2(OpKind::kCrossEntropy, lg);
  if (static_cast<int64_t>(targets.size()) != lg.rows())
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets against logits " + shape_str(lg.shape));
  std::vector<int64_t> iattr;
  iattr.reserve(targets.size());
  for (int t : targets) {
    if (t < 0 || t >= lg.cols())
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                  " out of range for logits " + shape_str(lg.shape));
    iattr.push_back(t);
  }
  return emit1(OpKind::kCrossEntropy, logits, std::move(iattr));
}

Value kl_divergence(const Value& p_logits, const Value& q_logits) {
  const Tensor& tp = p_logits.tensor();
  const Tensor& tq = q_logits.tensor();
  require_rank2(OpKind::kKlDivergence, tp);
  if (!tp.same_shape(tq)) shape_error(OpKind::kKlDivergence, tp, tq);
  return emit2(OpKind::kKlDivergence, p_logits, q_logits);
}

Value cosine_similarity(const Value& u, const Value& v) {
  const Tensor& tu = u.tensor();
  const Tensor& tv = v.tensor();
  if (tu.rank() != 1 || !tu.same_shape(tv)) shape_error(OpKind::kCosine, tu, tv);
  return emit2(OpKind::kCosine, u, v);
}

Value scaled_dot_attention(const Value& q, const Value& k, const Value& v, bool causal) {
  const Tensor& tq = q.tensor();
  const Tensor& tk = k.tensor();
  const Tensor& tv = v.tensor();
  if (tq.rank() != 2 || tk.rank() != 2 || tq.cols() != tk.cols())
    shape_error(OpKind::kMatMul, tq, tk);
  if (tv.rank() != 2 || tv.rows() != tk.rows()) shape_error(OpKind::kMatMul, tk, tv);

  Value scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(tq.cols())));
  if (causal) {
    if (tq.rows() != tk.rows())
      throw std::invalid_argument("scaled_dot_attention: causal mask needs square scores, got " +
                                  shape_str(tq.shape) + " vs " + shape_str(tk.shape));
    // large finite penalty; exp() underflows to exactly 0 for masked slots
    Tensor mask = Tensor::zeros({tq.rows(), tk.rows()});
    for (int64_t i = 0; i < tq.rows(); ++i)
      for (int64_t j = i + 1; j < tk.rows(); ++j) mask.at(i, j) = -1e9;
    scores = add(scores, q.graph()->constant(std::move(mask)));
  }
  return matmul(softmax(scores), v);
}

Value apply(OpKind kind, const std::vector<Value>& inputs) {
  auto need = [&](size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
  };
  auto as_ints = [](const Value& v) {
    const Tensor& t = v.tensor();
    std::vector<int> out;
    out.reserve(t.data.size());
    for (double x : t.data) {
      if (x != std::floor(x))
        throw std::invalid_argument("apply: expected integral values, got non-integer");
      out.push_back(static_cast<int>(x));
    }
    return out;
  };

  switch (kind) {
    case OpKind::kMatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kTranspose: need(1); return transpose(inputs[0]);
    case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpKind::kMul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::kExp: need(1); return vexp(inputs[0]);
    case OpKind::kLog: need(1); return vlog(inputs[0]);
    case OpKind::kSilu: need(1); return silu(inputs[0]);
    case OpKind::kSoftmax: need(1); return softmax(inputs[0]);
    case OpKind::kLogSoftmax: need(1); return log_softmax(inputs[0]);
    case OpKind::kLayerNorm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2]);
    case OpKind::kEmbedding: need(2); return embedding(inputs[0], as_ints(inputs[1]));
    case OpKind::kConcatRows: need(2); return concat_rows(inputs[0], inputs[1]);
    case OpKind::kConcatCols: need(2); return concat_cols(inputs[0], inputs[1]);
    case OpKind::kMeanRows: need(1); return mean_rows(inputs[0]);
    case OpKind::kL2Norm: need(1); return l2_norm(inputs[0]);
    case OpKind::kCrossEntropy: need(2); return cross_entropy(inputs[0], as_ints(inputs[1]));
    case OpKind::kKlDivergence: need(2); return kl_divergence(inputs[0], inputs[1]);
    case OpKind::kCosine: need(2); return cosine_similarity(inputs[0], inputs[1]);
    default:
      throw std::invalid_argument(std::string("apply: ") + op_name(kind) +
                                  " is not reachable through the generic dispatcher");
  }
}

}  // namespace biacl
