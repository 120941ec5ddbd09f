#include <cmath>
#include <stdexcept>

#include "biacl/metrics.hpp"
#include "biacl/vocab.hpp"
#include "doctest.h"

using namespace biacl;

namespace {

Tensor from_rows(const std::vector<std::vector<double>>& rows) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(rows.size()),
                            static_cast<int64_t>(rows[0].size())});
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      t.at(static_cast<int64_t>(i), static_cast<int64_t>(j)) = rows[i][j];
  return t;
}

// Product of Givens rotations: a deterministic orthogonal matrix.
Tensor givens_product(int64_t d, const std::vector<std::tuple<int, int, double>>& rotations) {
  Tensor q = Tensor::zeros({d, d});
  for (int64_t i = 0; i < d; ++i) q.at(i, i) = 1.0;
  for (const auto& [a, b, theta] : rotations) {
    double c = std::cos(theta), s = std::sin(theta);
    for (int64_t r = 0; r < d; ++r) {
      double xa = q.at(r, a), xb = q.at(r, b);
      q.at(r, a) = c * xa - s * xb;
      q.at(r, b) = s * xa + c * xb;
    }
  }
  return q;
}

Tensor matmul_small(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("corpus bleu: identity scores 100") {
  std::vector<std::string> c1 = {"the cat sat on the mat and purred loudly"};
  CHECK(corpus_bleu(c1, c1) == doctest::Approx(100.0).epsilon(1e-12));
  std::vector<std::string> c2 = {"a b c d e", "f g h i j k", "l m n o p q r"};
  CHECK(corpus_bleu(c2, c2) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("corpus bleu: zero overlap scores 0") {
  CHECK(corpus_bleu({"a b c d"}, {"e f g h"}) == 0.0);
}

TEST_CASE("corpus bleu: any zero precision zeroes the unsmoothed score") {
  // unigram overlap exists but no common bigram
  CHECK(corpus_bleu({"the dog barks often here"}, {"often here the barks dog"}) >= 0.0);
  CHECK(corpus_bleu({"a x b y c z d w"}, {"a q b r c s d t"}) == 0.0);
}

TEST_CASE("corpus bleu matches an independent hand computation") {
  // Hand derivation, per sentence pair (hypothesis | reference):
  //   1. "the cat sat on the mat" | same           (6 tokens, all match)
  //   2. "a quick brown fox" | "the quick brown fox"
  //   3. "hello world" | "hello there world"
  // Unigrams: totals 6+4+2=12, clipped 6 + 3 ("a" misses) + 2 = 11.
  // Bigrams:  totals 5+3+1=9,  clipped 5 + 2 ("a quick" misses) + 0 = 7.
  // Trigrams: totals 4+2+0=6,  clipped 4 + 1 ("quick brown fox") + 0 = 5.
  // 4-grams:  totals 3+1+0=4,  clipped 3 + 0 + 0 = 3.
  // Lengths: hypothesis 12, reference 13 -> BP = exp(1 - 13/12).
  std::vector<std::string> hyp = {"the cat sat on the mat", "a quick brown fox",
                                  "hello world"};
  std::vector<std::string> ref = {"the cat sat on the mat",
                                  "the quick brown fox", "hello there world"};
  double expected = 100.0 * std::exp(1.0 - 13.0 / 12.0) *
                    std::pow((11.0 / 12.0) * (7.0 / 9.0) * (5.0 / 6.0) * (3.0 / 4.0),
                             0.25);
  CHECK(expected == doctest::Approx(75.17017130032082).epsilon(1e-12));
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("corpus bleu: brevity penalty only punishes short hypotheses") {
  // same n-gram stats, longer hypothesis -> no penalty
  double exact = corpus_bleu({"a b c d e"}, {"a b c d e"});
  double longer = corpus_bleu({"a b c d e f"}, {"a b c d e"});
  double shorter = corpus_bleu({"a b c d"}, {"a b c d e"});
  CHECK(exact == doctest::Approx(100.0));
  CHECK(longer < 100.0);   // precision loss, not BP
  CHECK(shorter < 100.0);  // BP kicks in
  CHECK(shorter < corpus_bleu({"a b c d"}, {"a b c d"}));
}

TEST_CASE("corpus bleu input validation and range") {
  CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), std::invalid_argument);
  CHECK_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);

  Rng rng(5);
  std::vector<std::string> words = {"u", "v", "w", "x", "y"};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::string> h, r;
    for (int i = 0; i < 4; ++i) {
      std::string hs, rs;
      for (int k = 0; k < 6; ++k) {
        hs += (k ? " " : "") + words[rng.uniform_int(0, 4)];
        rs += (k ? " " : "") + words[rng.uniform_int(0, 4)];
      }
      h.push_back(hs);
      r.push_back(rs);
    }
    double plain = corpus_bleu(h, r);
    double smoothed = corpus_bleu(h, r, true);
    CHECK(plain >= 0.0);
    CHECK(plain <= 100.0);
    CHECK(smoothed >= 0.0);
    CHECK(smoothed <= 100.0);
  }
}

TEST_CASE("corpus bleu smoothing rescues zero precisions") {
  std::vector<std::string> h = {"a x b y"};
  std::vector<std::string> r = {"a q b r"};
  CHECK(corpus_bleu(h, r) == 0.0);
  CHECK(corpus_bleu(h, r, true) > 0.0);
}

TEST_CASE("partition values on the symmetric plus-minus basis matrix") {
  // rows e1, -e1, e2, -e2: for either eigenvector direction s = +-e_k,
  // Z = e^1 + e^-1 + e^0 + e^0 = 2 cosh(1) + 2, independent of sign.
  Tensor w = from_rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  std::vector<double> z = partition_values(w);
  REQUIRE(z.size() == 2);
  CHECK(z[0] == doctest::Approx(5.086161269630487).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(5.086161269630487).epsilon(1e-12));
  CHECK(isotropy_i1(w) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(isotropy_i2(w) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("partition values on the degenerate repeated-row matrix") {
  // rows e1, e1: W^T W = diag(2, 0); ascending eigenvalues put e2 first.
  // Z(e2) = 2 e^0 = 2 either sign; Z(e1) = 2e (the larger orientation).
  Tensor w = from_rows({{1, 0}, {1, 0}});
  std::vector<double> z = partition_values(w);
  REQUIRE(z.size() == 2);
  CHECK(z[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(2.0 * 2.718281828459045).epsilon(1e-12));
  // I1 = 2 / 2e = 1/e; I2 = (e-1)/(e+1)
  CHECK(isotropy_i1(w) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
  CHECK(isotropy_i2(w) == doctest::Approx(0.46211715726000974).epsilon(1e-12));
}

TEST_CASE("partition values in one dimension") {
  Tensor w = from_rows({{0.0}});
  std::vector<double> z = partition_values(w);
  REQUIRE(z.size() == 1);
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(isotropy_i1(w) == doctest::Approx(1.0));
  CHECK(isotropy_i2(w) == doctest::Approx(0.0));
}

TEST_CASE("isotropy bounds hold on random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    Tensor w = random_normal(rng, {12, 5});
    double i1 = isotropy_i1(w);
    double i2 = isotropy_i2(w);
    CHECK(i1 > 0.0);
    CHECK(i1 <= 1.0 + 1e-15);
    CHECK(i2 >= 0.0);
  }
}

TEST_CASE("isotropy is invariant under right rotation") {
  Rng rng(13);
  Tensor w = random_normal(rng, {10, 4});
  Tensor q = givens_product(
      4, {{0, 1, 0.7}, {1, 2, -1.3}, {2, 3, 2.1}, {0, 3, 0.4}, {1, 3, -0.9}});
  // sanity: q is orthogonal
  Tensor qtq = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < 4; ++k) acc += q.at(k, i) * q.at(k, j);
      qtq.at(i, j) = acc;
    }
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j)
      CHECK(qtq.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));

  Tensor wq = matmul_small(w, q);
  CHECK(isotropy_i1(wq) == doctest::Approx(isotropy_i1(w)).epsilon(1e-8));
  CHECK(isotropy_i2(wq) == doctest::Approx(isotropy_i2(w)).epsilon(1e-8));
}

TEST_CASE("isotropy is invariant under row permutation") {
  Rng rng(17);
  Tensor w = random_normal(rng, {8, 3});
  std::vector<int64_t> perm = {5, 2, 7, 0, 3, 6, 1, 4};
  Tensor wp = Tensor::zeros({8, 3});
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 3; ++j) wp.at(i, j) = w.at(perm[i], j);
  CHECK(isotropy_i1(wp) == doctest::Approx(isotropy_i1(w)).epsilon(1e-12));
  CHECK(isotropy_i2(wp) == doctest::Approx(isotropy_i2(w)).epsilon(1e-12));
}

TEST_CASE("partition values reject bad input") {
  CHECK_THROWS_AS(partition_values(Tensor::zeros({3})), std::invalid_argument);
  Tensor huge = from_rows({{1000.0}, {2.0}});
  CHECK_THROWS_AS(partition_values(huge), std::runtime_error);  // exp overflow
}

TEST_CASE("sampled state matrices: shapes, determinism, subsampling") {
  Vocabulary v = Vocabulary::from_tokens(
      {"<unk>", "<eos>", "l1", "l2", "a", "b", "c", "d", "x", "y", "z", "w"});
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int64_t>(v.size());
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 12;
  cfg.language_tags = {v.id_of("l1"), v.id_of("l2")};
  Model model(cfg, 31);

  std::vector<std::vector<int>> sentences = {
      v.encode("a b c"), v.encode("b d"), v.encode("c c a d"), v.encode("d")};

  Tensor enc = sample_encoder_states(model, sentences, v.id_of("l1"), 128, 7);
  CHECK(enc.shape == std::vector<int64_t>{4, 8});  // corpus smaller than n
  CHECK(enc.all_finite());

  Tensor enc2 = sample_encoder_states(model, sentences, v.id_of("l1"), 2, 7);
  CHECK(enc2.shape == std::vector<int64_t>{2, 8});

  Tensor one = sample_encoder_states(model, {v.encode("a")}, v.id_of("l1"));
  CHECK(one.shape == std::vector<int64_t>{1, 8});

  Tensor dec = sample_decoder_states(model, sentences, v.id_of("l1"),
                                     v.id_of("l2"), v.eos_id(), 3, 5);
  CHECK(dec.shape == std::vector<int64_t>{3, 8});
  CHECK(dec.all_finite());

  // fixed seed -> identical matrices
  Tensor dec_again = sample_decoder_states(model, sentences, v.id_of("l1"),
                                           v.id_of("l2"), v.eos_id(), 3, 5);
  REQUIRE(dec.data.size() == dec_again.data.size());
  for (size_t i = 0; i < dec.data.size(); ++i)
    CHECK(dec.data[i] == dec_again.data[i]);

  CHECK_THROWS_AS(sample_encoder_states(model, {}, v.id_of("l1")),
                  std::invalid_argument);

  // the isotropy pipeline runs end to end on model states
  double i1 = isotropy_i1(enc);
  double i2 = isotropy_i2(enc);
  CHECK(i1 > 0.0);
  CHECK(i1 <= 1.0);
  CHECK(i2 >= 0.0);
}
