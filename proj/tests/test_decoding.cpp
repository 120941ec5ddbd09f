#include <cmath>
#include <functional>
#include <optional>

#include "biacl/decoding.hpp"
#include "biacl/errors.hpp"
#include "doctest.h"

using namespace biacl;

namespace {

// Same total order the search uses; duplicated here so the reference
// implementations are independent of the code under test.
bool ref_better(double score_a, const std::vector<int>& tok_a, double score_b,
                const std::vector<int>& tok_b) {
  if (score_a != score_b) return score_a > score_b;
  if (tok_a.size() != tok_b.size()) return tok_a.size() < tok_b.size();
  return tok_a < tok_b;
}

struct UniformScorer : StepScorer {
  int64_t vocab;
  int eos;
  UniformScorer(int64_t v, int e) : vocab(v), eos(e) {}
  int64_t vocab_size() const override { return vocab; }
  int eos_id() const override { return eos; }
  std::vector<double> next_logprobs(const std::vector<int>&) override {
    return std::vector<double>(vocab, -std::log(static_cast<double>(vocab)));
  }
};

// A deterministic pure function of the produced prefix with rich structure.
struct HashScorer : StepScorer {
  int64_t vocab;
  int eos;
  uint64_t seed;
  HashScorer(int64_t v, int e, uint64_t s) : vocab(v), eos(e), seed(s) {}
  int64_t vocab_size() const override { return vocab; }
  int eos_id() const override { return eos; }
  std::vector<double> next_logprobs(const std::vector<int>& produced) override {
    uint64_t h = seed;
    for (int t : produced) h = Rng::mix({h, static_cast<uint64_t>(t) + 1});
    std::vector<double> lp(vocab);
    double mx = -1e300;
    for (int64_t v = 0; v < vocab; ++v) {
      Rng r(Rng::mix({h, static_cast<uint64_t>(v) + 1000}));
      lp[v] = r.uniform(-2.0, 2.0);
      mx = std::max(mx, lp[v]);
    }
    double lse = 0.0;
    for (double x : lp) lse += std::exp(x - mx);
    lse = mx + std::log(lse);
    for (double& x : lp) x -= lse;
    return lp;
  }
};

struct ExhaustiveBest {
  std::vector<int> tokens;
  double score = 0.0;
  bool found = false;
};

// Enumerates every content sequence of length <= max_len - 1 (end marker
// appended implicitly), accumulating log-probs in the same left-to-right
// order as the search so scores are comparable bit for bit.
ExhaustiveBest exhaustive_best(StepScorer& s,
                               const std::vector<std::vector<int>>& phrases,
                               int64_t max_len) {
  ExhaustiveBest best;
  std::vector<int> prefix;
  std::function<void(double)> dfs = [&](double score) {
    std::vector<double> lp = s.next_logprobs(prefix);
    bool all = true;
    for (const auto& p : phrases) all = all && contains_phrase(prefix, p);
    if (all) {
      double total = score + lp[s.eos_id()];
      if (!best.found || ref_better(total, prefix, best.score, best.tokens))
        best = {prefix, total, true};
    }
    if (static_cast<int64_t>(prefix.size()) < max_len - 1) {
      for (int64_t v = 0; v < s.vocab_size(); ++v) {
        if (static_cast<int>(v) == s.eos_id()) continue;
        prefix.push_back(static_cast<int>(v));
        dfs(score + lp[v]);
        prefix.pop_back();
      }
    }
  };
  dfs(0.0);
  return best;
}

// Ordinary beam search (no constraints), written independently.
SearchResult plain_beam(StepScorer& s, int64_t beam, int64_t max_len) {
  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
  };
  auto cmp = [](const Hyp& a, const Hyp& b) {
    return ref_better(a.score, a.tokens, b.score, b.tokens);
  };
  std::vector<Hyp> live(1);
  std::vector<Hyp> finished;
  while (!live.empty()) {
    std::vector<Hyp> cands;
    for (const Hyp& h : live) {
      std::vector<double> lp = s.next_logprobs(h.tokens);
      finished.push_back({h.tokens, h.score + lp[s.eos_id()]});
      if (static_cast<int64_t>(h.tokens.size()) < max_len - 1) {
        for (int64_t v = 0; v < s.vocab_size(); ++v) {
          if (static_cast<int>(v) == s.eos_id()) continue;
          Hyp c = h;
          c.tokens.push_back(static_cast<int>(v));
          c.score += lp[v];
          cands.push_back(std::move(c));
        }
      }
    }
    std::sort(cands.begin(), cands.end(), cmp);
    if (static_cast<int64_t>(cands.size()) > beam) cands.resize(beam);
    live = std::move(cands);
  }
  const Hyp* best = &finished[0];
  for (const Hyp& h : finished)
    if (cmp(h, *best)) best = &h;
  return {best->tokens, best->score};
}

}  // namespace

TEST_CASE("constraint set bookkeeping") {
  ConstraintSet cs = ConstraintSet::of({{2, 3}, {5}});
  CHECK(cs.total_tokens() == 3);
  CHECK(cs.met_tokens() == 0);
  CHECK(!cs.all_met());

  cs.update({7, 2});
  CHECK(cs.met == std::vector<bool>{false, false});
  CHECK(cs.in_progress_phrase == 0);  // trailing 2 is a prefix of [2,3]
  CHECK(cs.in_progress_pos == 1);
  CHECK(cs.covered_tokens() == 1);  // partial phrase progress counts

  cs.update({7, 2, 3});
  CHECK(cs.met == std::vector<bool>{true, false});
  CHECK(cs.met_tokens() == 2);
  CHECK(cs.covered_tokens() == 2);
  CHECK(cs.in_progress_phrase == -1);

  cs.update({7, 2, 3, 5});
  CHECK(cs.all_met());
  CHECK(cs.met_tokens() == 3);

  // met flags never revert even if the suffix changes
  cs.update({9});
  CHECK(cs.all_met());

  CHECK_THROWS_AS(ConstraintSet::of({{1}, {}}), std::invalid_argument);
}

TEST_CASE("accidental satisfaction is credited by the substring scan") {
  ConstraintSet cs = ConstraintSet::of({{4, 4}});
  cs.update({1, 4});
  CHECK(!cs.all_met());
  cs.update({1, 4, 4});  // appeared without being deliberately targeted
  CHECK(cs.all_met());
}

TEST_CASE("contains_phrase") {
  CHECK(contains_phrase({1, 2, 3, 4}, {2, 3}));
  CHECK(contains_phrase({1, 2, 3}, {1, 2, 3}));
  CHECK(!contains_phrase({1, 2, 3}, {3, 2}));
  CHECK(!contains_phrase({1}, {1, 1}));
  CHECK(contains_phrase({1}, {}));  // empty phrase matches trivially
}

TEST_CASE("uniform-logit toy: constrained result contains the phrase and matches enumeration") {
  UniformScorer s(5, 0);
  ConstraintSet cs = ConstraintSet::of({{2, 3}});
  SearchResult r = constrained_beam_search(s, cs, 4, 5);
  CHECK(contains_phrase(r.tokens, {2, 3}));

  ExhaustiveBest oracle = exhaustive_best(s, {{2, 3}}, 5);
  REQUIRE(oracle.found);
  CHECK(r.tokens == oracle.tokens);
  CHECK(r.score == oracle.score);  // exact: same accumulation order
  CHECK(r.tokens == std::vector<int>{2, 3});
}

TEST_CASE("full-width beam equals exhaustive enumeration on random scorers") {
  std::vector<std::vector<std::vector<int>>> constraint_cases = {
      {},              // unconstrained
      {{2, 3}},        // one two-token phrase
      {{4}, {2}},      // two singletons
      {{2, 3}, {4}},   // mixed, three tokens total
  };
  for (uint64_t seed = 1; seed <= 4; ++seed) {
    for (const auto& phrases : constraint_cases) {
      HashScorer s(5, 0, seed);
      SearchResult r =
          constrained_beam_search(s, ConstraintSet::of(phrases), 100000, 5);
      ExhaustiveBest oracle = exhaustive_best(s, phrases, 5);
      REQUIRE(oracle.found);
      CHECK(r.tokens == oracle.tokens);
      CHECK(r.score == oracle.score);
      for (const auto& p : phrases) CHECK(contains_phrase(r.tokens, p));
    }
  }
}

TEST_CASE("empty constraint set reduces to ordinary beam search") {
  for (uint64_t seed = 10; seed < 16; ++seed) {
    for (int64_t beam : {1, 2, 3, 8}) {
      HashScorer a(6, 1, seed), b(6, 1, seed);
      SearchResult ours = constrained_beam_search(a, ConstraintSet::of({}), beam, 6);
      SearchResult ref = plain_beam(b, beam, 6);
      CHECK(ours.tokens == ref.tokens);
      CHECK(ours.score == ref.score);
    }
  }
}

TEST_CASE("constraint satisfaction holds across randomized cases") {
  for (uint64_t seed = 20; seed < 32; ++seed) {
    HashScorer s(6, 0, seed);
    std::vector<std::vector<int>> phrases = {{2}, {3, 4}};
    SearchResult r =
        constrained_beam_search(s, ConstraintSet::of(phrases), 4, 8);
    for (const auto& p : phrases) CHECK(contains_phrase(r.tokens, p));
  }
}

TEST_CASE("enlarging the beam never lowers the returned score on model scorers") {
  Vocabulary v = Vocabulary::from_tokens(
      {"<unk>", "<eos>", "l1", "l2", "a", "b", "c", "d", "x", "y", "z", "w"});
  std::vector<std::vector<std::vector<int>>> cases = {
      {{v.id_of("x")}, {v.id_of("y"), v.id_of("z")}},
      {{v.id_of("w")}},
  };
  for (uint64_t seed = 1; seed <= 8; ++seed) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int64_t>(v.size());
    cfg.d_model = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_len = 16;
    cfg.language_tags = {v.id_of("l1"), v.id_of("l2")};
    Model model(cfg, seed);
    for (const auto& phrases : cases) {
      double prev = -1e300;
      for (int64_t beam : {1, 2, 4, 8, 32}) {
        Graph g;
        ModelStepScorer s(model, g, v.encode("a b c"), v.id_of("l1"),
                          v.id_of("l2"), v.eos_id());
        double sc =
            constrained_beam_search(s, ConstraintSet::of(phrases), beam, 10)
                .score;
        CHECK(sc >= prev - 1e-12);
        prev = std::max(prev, sc);
      }
    }
  }
}

TEST_CASE("static infeasibility reports the deficit") {
  UniformScorer s(8, 0);
  // six constraint tokens, budget four
  ConstraintSet cs = ConstraintSet::of({{1, 2, 3}, {4, 5, 1}});
  try {
    constrained_beam_search(s, cs, 4, 4);
    FAIL("expected unsatisfiable error");
  } catch (const UnsatisfiableError& e) {
    CHECK(e.constraint_tokens == 6);
    CHECK(e.max_len == 4);
    std::string msg = e.what();
    CHECK(msg.find("deficit 3") != std::string::npos);
  }
  CHECK_THROWS_AS(constrained_beam_search(s, cs, 0, 12), std::invalid_argument);
}

TEST_CASE("a tight budget is still solved when the bank guarantee protects progress") {
  // Exactly enough room for both phrases back to back; beam 1 must thread
  // the needle via the guaranteed most-covered slot.
  UniformScorer s(5, 0);
  ConstraintSet cs = ConstraintSet::of({{2, 2}, {3, 3}});
  SearchResult r = constrained_beam_search(s, cs, 1, 5);
  CHECK(contains_phrase(r.tokens, {2, 2}));
  CHECK(contains_phrase(r.tokens, {3, 3}));
  CHECK(r.tokens.size() == 4);
}

TEST_CASE("runtime dead ends raise the same unsatisfiable error") {
  // A phrase containing the end-marker id can never be emitted as content,
  // so the static precondition passes but the search exhausts its budget.
  UniformScorer s(5, 0);
  ConstraintSet cs = ConstraintSet::of({{0}});
  try {
    constrained_beam_search(s, cs, 2, 3);
    FAIL("expected unsatisfiable error");
  } catch (const UnsatisfiableError& e) {
    CHECK(e.constraint_tokens == 1);
    CHECK(e.max_len == 3);
    CHECK(std::string(e.what()).find("no constraint-satisfying completion") !=
          std::string::npos);
  }
}

TEST_CASE("search is deterministic") {
  HashScorer a(6, 0, 7), b(6, 0, 7);
  ConstraintSet cs = ConstraintSet::of({{2, 3}});
  SearchResult r1 = constrained_beam_search(a, cs, 3, 6);
  SearchResult r2 = constrained_beam_search(b, cs, 3, 6);
  CHECK(r1.tokens == r2.tokens);
  CHECK(r1.score == r2.score);
}

TEST_CASE("build_constraints picks first translations for distinct covered tokens") {
  Vocabulary v = Vocabulary::from_tokens(
      {"<unk>", "<eos>", "t1", "t2", "t3", "s1", "s2", "s9"});
  BilingualDictionary d(0, 1);
  d.add("t1", "s1");
  d.add("t1", "s2");  // second sense ignored by the tie-break
  d.add("t3", "s9");

  ConstraintSet cs = build_constraints(v.encode("t1 t2 t3"), v, d);
  REQUIRE(cs.phrases.size() == 2);
  CHECK(cs.phrases[0] == std::vector<int>{v.id_of("s1")});
  CHECK(cs.phrases[1] == std::vector<int>{v.id_of("s9")});

  // no coverage -> empty set
  CHECK(build_constraints(v.encode("t2 t2"), v, d).empty());

  // multi-token target phrase stays one contiguous constraint
  BilingualDictionary d2(0, 1);
  d2.add("t1", "s1 s2");
  ConstraintSet cs2 = build_constraints(v.encode("t1"), v, d2);
  REQUIRE(cs2.phrases.size() == 1);
  CHECK(cs2.phrases[0] == std::vector<int>{v.id_of("s1"), v.id_of("s2")});

  // repeated tokens and identical phrases collapse
  BilingualDictionary d3(0, 1);
  d3.add("t1", "s1");
  d3.add("t2", "s1");
  ConstraintSet cs3 = build_constraints(v.encode("t1 t1 t2"), v, d3);
  CHECK(cs3.phrases.size() == 1);
}

TEST_CASE("generate_pseudo_source: containment, purity, reduction, errors") {
  Vocabulary v = Vocabulary::from_tokens(
      {"<unk>", "<eos>", "l1", "l2", "a", "b", "c", "d", "x", "y", "z", "w"});
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int64_t>(v.size());
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 16;
  cfg.language_tags = {v.id_of("l1"), v.id_of("l2")};
  Model model(cfg, 99);

  BilingualDictionary dict(v.id_of("l1"), v.id_of("l2"));
  dict.add("a", "x");
  dict.add("b", "y z");

  std::vector<int> x_t = v.encode("a b c");
  std::vector<Tensor> before;
  for (const auto& p : model.params()) before.push_back(p.value);

  PseudoParallelPair pair = generate_pseudo_source(
      model, x_t, v.id_of("l1"), v.id_of("l2"), v, dict, 3, 10);
  CHECK(pair.target == x_t);
  CHECK(contains_phrase(pair.source, {v.id_of("x")}));
  CHECK(contains_phrase(pair.source, {v.id_of("y"), v.id_of("z")}));
  CHECK(pair.score < 0.0);

  // generation does not touch parameters
  for (size_t i = 0; i < before.size(); ++i) {
    const Tensor& now = model.params()[i].value;
    REQUIRE(now.data.size() == before[i].data.size());
    for (size_t k = 0; k < now.data.size(); ++k)
      CHECK(now.data[k] == before[i].data[k]);
  }

  // repeated generation is deterministic
  PseudoParallelPair again = generate_pseudo_source(
      model, x_t, v.id_of("l1"), v.id_of("l2"), v, dict, 3, 10);
  CHECK(again.source == pair.source);
  CHECK(again.score == pair.score);

  // empty dictionary coverage falls back to plain beam output
  BilingualDictionary empty_dict(v.id_of("l1"), v.id_of("l2"));
  PseudoParallelPair free_pair = generate_pseudo_source(
      model, x_t, v.id_of("l1"), v.id_of("l2"), v, empty_dict, 3, 10);
  Graph g;
  ModelStepScorer scorer(model, g, x_t, v.id_of("l1"), v.id_of("l2"), v.eos_id());
  SearchResult unconstrained =
      constrained_beam_search(scorer, ConstraintSet::of({}), 3, 10);
  CHECK(free_pair.source == unconstrained.tokens);
  CHECK(free_pair.score == unconstrained.score);

  CHECK_THROWS_AS(generate_pseudo_source(model, {}, v.id_of("l1"), v.id_of("l2"),
                                         v, dict, 3, 10),
                  std::invalid_argument);
  // requested budget beyond the model's window
  CHECK_THROWS_AS(generate_pseudo_source(model, x_t, v.id_of("l1"),
                                         v.id_of("l2"), v, dict, 3, 64),
                  std::invalid_argument);
  // budget smaller than the constraints propagates the unsatisfiable error
  CHECK_THROWS_AS(generate_pseudo_source(model, x_t, v.id_of("l1"),
                                         v.id_of("l2"), v, dict, 3, 3),
                  UnsatisfiableError);
}

TEST_CASE("model scorer emits normalized distributions") {
  Vocabulary v = Vocabulary::from_tokens(
      {"<unk>", "<eos>", "l1", "l2", "a", "b", "c", "d", "x", "y", "z", "w"});
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int64_t>(v.size());
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 16;
  cfg.language_tags = {v.id_of("l1"), v.id_of("l2")};
  Model model(cfg, 123);

  Graph g;
  ModelStepScorer scorer(model, g, v.encode("a b"), v.id_of("l1"),
                         v.id_of("l2"), v.eos_id());
  std::vector<double> lp0 = scorer.next_logprobs({});
  REQUIRE(static_cast<int64_t>(lp0.size()) == cfg.vocab_size);
  double total = 0.0;
  for (double x : lp0) total += std::exp(x);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));

  std::vector<double> lp1 = scorer.next_logprobs({v.id_of("x")});
  CHECK(lp1 != lp0);
}
