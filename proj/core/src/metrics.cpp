#include "biacl/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "biacl/decoding.hpp"
#include "biacl/vocab.hpp"

namespace biacl {

namespace {

// n-grams of `toks` joined with an unprintable separator, counted.
std::unordered_map<std::string, int64_t> ngram_counts(
    const std::vector<std::string>& toks, size_t n) {
  std::unordered_map<std::string, int64_t> counts;
  if (toks.size() < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (size_t k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += toks[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, bool smooth) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument(
        "corpus_bleu: hypothesis and reference counts differ");
  if (references.empty())
    throw std::invalid_argument("corpus_bleu: empty corpus");

  constexpr size_t kMaxOrder = 4;
  int64_t clipped[kMaxOrder] = {0, 0, 0, 0};
  int64_t total[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;

  for (size_t i = 0; i < hypotheses.size(); ++i) {
    std::vector<std::string> h = split_tokens(hypotheses[i]);
    std::vector<std::string> r = split_tokens(references[i]);
    hyp_len += static_cast<int64_t>(h.size());
    ref_len += static_cast<int64_t>(r.size());
    for (size_t n = 1; n <= kMaxOrder; ++n) {
      auto hc = ngram_counts(h, n);
      auto rc = ngram_counts(r, n);
      for (const auto& [gram, count] : hc) {
        auto it = rc.find(gram);
        if (it != rc.end()) clipped[n - 1] += std::min(count, it->second);
      }
      if (h.size() >= n)
        total[n - 1] += static_cast<int64_t>(h.size() - n + 1);
    }
  }

  if (hyp_len == 0) return 0.0;

  double log_precision_sum = 0.0;
  for (size_t n = 0; n < kMaxOrder; ++n) {
    double p;
    if (smooth) {
      p = static_cast<double>(clipped[n] + 1) /
          static_cast<double>(total[n] + 1);
    } else {
      if (clipped[n] == 0 || total[n] == 0) return 0.0;
      p = static_cast<double>(clipped[n]) / static_cast<double>(total[n]);
    }
    log_precision_sum += std::log(p);
  }

  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

std::vector<double> partition_values(const Tensor& w) {
  if (w.rank() != 2)
    throw std::invalid_argument("partition_values: matrix must be rank 2, got " +
                                shape_str(w.shape));
  if (!w.all_finite())
    throw std::invalid_argument("partition_values: matrix has non-finite values");
  const int64_t n = w.rows();
  const int64_t d = w.cols();

  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t a = 0; a < d; ++a)
      for (int64_t b = 0; b < d; ++b) m(a, b) += w.at(i, a) * w.at(i, b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("partition_values: eigendecomposition failed");

  std::vector<double> z(d);
  for (int64_t j = 0; j < d; ++j) {
    Eigen::VectorXd s = solver.eigenvectors().col(j);
    double z_pos = 0.0, z_neg = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int64_t a = 0; a < d; ++a) dot += s(a) * w.at(i, a);
      z_pos += std::exp(dot);
      z_neg += std::exp(-dot);
    }
    double value;
    if (z_pos > z_neg) {
      value = z_pos;
    } else if (z_neg > z_pos) {
      value = z_neg;
    } else {
      // tie: orient so the largest-magnitude component is positive
      int64_t arg = 0;
      for (int64_t a = 1; a < d; ++a)
        if (std::abs(s(a)) > std::abs(s(arg))) arg = a;
      value = s(arg) >= 0.0 ? z_pos : z_neg;
    }
    if (!std::isfinite(value))
      throw std::runtime_error(
          "partition_values: partition function overflowed; row norms too "
          "large");
    z[j] = value;
  }
  return z;
}

double isotropy_i1(const Tensor& w) {
  std::vector<double> z = partition_values(w);
  auto [mn, mx] = std::minmax_element(z.begin(), z.end());
  return *mn / *mx;
}

double isotropy_i2(const Tensor& w) {
  std::vector<double> z = partition_values(w);
  double mean = std::accumulate(z.begin(), z.end(), 0.0) /
                static_cast<double>(z.size());
  double ss = 0.0;
  for (double v : z) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (static_cast<double>(z.size()) * mean * mean));
}

namespace {

std::vector<int64_t> sample_indices(int64_t count, int64_t n, uint64_t seed) {
  std::vector<int64_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  if (count <= n) return idx;
  Rng rng(Rng::mix({seed, 0x5a3c9e77u}));
  for (int64_t i = 0; i < n; ++i) {
    int64_t j = rng.uniform_int(i, count - 1);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()),
                              static_cast<int64_t>(rows[0].size())});
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      out.at(static_cast<int64_t>(i), static_cast<int64_t>(j)) = rows[i][j];
  return out;
}

std::vector<double> mean_over_rows(const Tensor& states) {
  std::vector<double> pooled(states.cols(), 0.0);
  for (int64_t i = 0; i < states.rows(); ++i)
    for (int64_t j = 0; j < states.cols(); ++j) pooled[j] += states.at(i, j);
  for (double& v : pooled) v /= static_cast<double>(states.rows());
  return pooled;
}

}  // namespace

Tensor sample_encoder_states(const Model& model,
                             const std::vector<std::vector<int>>& sentences,
                             int lang, int64_t n, uint64_t seed) {
  if (sentences.empty())
    throw std::invalid_argument("sample_encoder_states: no sentences");
  std::vector<int64_t> idx =
      sample_indices(static_cast<int64_t>(sentences.size()), n, seed);
  std::vector<std::vector<double>> rows;
  rows.reserve(idx.size());
  for (int64_t i : idx) {
    Graph g;
    BoundModel bm = model.bind(g);
    HiddenSeq h = bm.encode(sentences[i], lang);
    rows.push_back(mean_over_rows(h.states.tensor()));
  }
  return stack_rows(rows);
}

Tensor sample_decoder_states(const Model& model,
                             const std::vector<std::vector<int>>& sentences,
                             int src_lang, int dec_lang, int eos_id, int64_t n,
                             uint64_t seed) {
  if (sentences.empty())
    throw std::invalid_argument("sample_decoder_states: no sentences");
  std::vector<int64_t> idx =
      sample_indices(static_cast<int64_t>(sentences.size()), n, seed);
  std::vector<std::vector<double>> rows;
  rows.reserve(idx.size());
  for (int64_t i : idx) {
    Graph g;
    ModelStepScorer scorer(model, g, sentences[i], src_lang, dec_lang, eos_id);
    SearchResult r = constrained_beam_search(scorer, ConstraintSet::of({}), 1,
                                             model.config().max_len);
    Graph g2;
    BoundModel bm = model.bind(g2);
    HiddenSeq mem = bm.encode(sentences[i], src_lang);
    std::vector<int> teacher = r.tokens;
    teacher.push_back(eos_id);
    DecodeResult dec = bm.decode(mem, dec_lang, teacher);
    rows.push_back(mean_over_rows(dec.states.tensor()));
  }
  return stack_rows(rows);
}

}  // namespace biacl
