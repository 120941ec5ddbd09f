#include "biacl/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "biacl/errors.hpp"

namespace biacl {

namespace {

// Total order on hypotheses: higher score, then shorter, then
// lexicographically smaller tokens. Makes every selection deterministic.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

// Keeps at most `beam` candidates. When over budget, the beam is divided
// into per-bank quotas (banks keyed by covered constraint tokens): every
// nonempty bank gets an even share, the remainder going to the
// most-covered banks first, so each bucket holds at least one slot when
// the beam allows and per-bank width grows with the beam. Quotas a bank
// cannot fill are released to the globally best leftover candidates.
std::vector<Hypothesis> select_beam(std::vector<Hypothesis> candidates,
                                    int64_t beam) {
  if (static_cast<int64_t>(candidates.size()) <= beam) {
    std::sort(candidates.begin(), candidates.end(), better);
    return candidates;
  }
  std::map<int64_t, std::vector<size_t>, std::greater<>> banks;
  for (size_t i = 0; i < candidates.size(); ++i)
    banks[candidates[i].constraints.covered_tokens()].push_back(i);
  for (auto& [key, idx] : banks) {
    (void)key;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return better(candidates[a], candidates[b]);
    });
  }

  const int64_t nbanks = static_cast<int64_t>(banks.size());
  int64_t share = beam / nbanks;
  int64_t remainder = beam % nbanks;

  std::vector<char> taken(candidates.size(), 0);
  std::vector<size_t> picked;
  for (const auto& [key, idx] : banks) {
    (void)key;
    int64_t quota = share + (remainder > 0 ? 1 : 0);
    if (remainder > 0) --remainder;
    for (size_t k = 0; k < idx.size() && quota > 0; ++k, --quota) {
      taken[idx[k]] = 1;
      picked.push_back(idx[k]);
    }
  }
  std::vector<size_t> rest;
  for (size_t i = 0; i < candidates.size(); ++i)
    if (!taken[i]) rest.push_back(i);
  std::sort(rest.begin(), rest.end(), [&](size_t a, size_t b) {
    return better(candidates[a], candidates[b]);
  });
  for (size_t i : rest) {
    if (static_cast<int64_t>(picked.size()) == beam) break;
    picked.push_back(i);
  }

  std::vector<Hypothesis> selected;
  selected.reserve(picked.size());
  for (size_t i : picked) selected.push_back(std::move(candidates[i]));
  std::sort(selected.begin(), selected.end(), better);
  return selected;
}

}  // namespace

bool contains_phrase(const std::vector<int>& tokens,
                     const std::vector<int>& phrase) {
  return std::search(tokens.begin(), tokens.end(), phrase.begin(),
                     phrase.end()) != tokens.end();
}

ConstraintSet ConstraintSet::of(std::vector<std::vector<int>> phrase_list) {
  for (const auto& p : phrase_list)
    if (p.empty())
      throw std::invalid_argument("constraint phrases must be nonempty");
  ConstraintSet cs;
  cs.phrases = std::move(phrase_list);
  cs.met.assign(cs.phrases.size(), false);
  return cs;
}

int64_t ConstraintSet::total_tokens() const {
  int64_t n = 0;
  for (const auto& p : phrases) n += static_cast<int64_t>(p.size());
  return n;
}

int64_t ConstraintSet::met_tokens() const {
  int64_t n = 0;
  for (size_t i = 0; i < phrases.size(); ++i)
    if (met[i]) n += static_cast<int64_t>(phrases[i].size());
  return n;
}

bool ConstraintSet::all_met() const {
  for (bool m : met)
    if (!m) return false;
  return true;
}

void ConstraintSet::update(const std::vector<int>& tokens) {
  if (met.size() != phrases.size()) met.assign(phrases.size(), false);
  for (size_t i = 0; i < phrases.size(); ++i)
    if (!met[i] && contains_phrase(tokens, phrases[i])) met[i] = true;

  // The in-progress marker: the longest sequence of trailing tokens that is
  // a proper prefix of some unmet phrase (ties: lowest phrase index).
  in_progress_phrase = -1;
  in_progress_pos = 0;
  for (size_t i = 0; i < phrases.size(); ++i) {
    if (met[i]) continue;
    const auto& p = phrases[i];
    size_t limit = std::min(p.size() - 1, tokens.size());
    for (size_t len = limit; len > static_cast<size_t>(in_progress_pos); --len) {
      if (std::equal(p.begin(), p.begin() + len, tokens.end() - len)) {
        in_progress_phrase = static_cast<int>(i);
        in_progress_pos = static_cast<int>(len);
        break;
      }
    }
  }
}

ModelStepScorer::ModelStepScorer(const Model& model, Graph& g,
                                 const std::vector<int>& source, int src_lang,
                                 int tgt_lang, int eos)
    : bound_(model.bind(g)),
      memory_(bound_.encode(source, src_lang)),
      tgt_lang_(tgt_lang),
      eos_(eos),
      vocab_size_(model.config().vocab_size) {}

std::vector<double> ModelStepScorer::next_logprobs(
    const std::vector<int>& produced) {
  std::vector<int> prefix = produced;
  prefix.push_back(eos_);  // placeholder for the slot being predicted
  Tensor row = bound_.step_logits(memory_, tgt_lang_, prefix);
  double mx = *std::max_element(row.data.begin(), row.data.end());
  double lse = 0.0;
  for (double x : row.data) lse += std::exp(x - mx);
  lse = mx + std::log(lse);
  std::vector<double> out(row.data.begin(), row.data.end());
  for (double& x : out) x -= lse;
  return out;
}

SearchResult constrained_beam_search(StepScorer& scorer,
                                     const ConstraintSet& constraints,
                                     int64_t beam, int64_t max_len) {
  if (beam < 1)
    throw std::invalid_argument("constrained_beam_search: beam must be >= 1");
  for (const auto& p : constraints.phrases)
    if (p.empty())
      throw std::invalid_argument("constraint phrases must be nonempty");

  const int64_t need = constraints.total_tokens() + 1;
  if (max_len < need) {
    std::ostringstream msg;
    msg << "unsatisfiable constraints: " << constraints.total_tokens()
        << " constraint tokens plus the end marker need " << need
        << " positions, but max_len is " << max_len << " (deficit "
        << (need - max_len) << ")";
    throw UnsatisfiableError(constraints.total_tokens(), max_len, msg.str());
  }

  const int eos = scorer.eos_id();
  const int64_t vocab = scorer.vocab_size();

  Hypothesis root;
  root.constraints = ConstraintSet::of(constraints.phrases);
  root.constraints.update(root.tokens);

  std::vector<Hypothesis> live = {std::move(root)};
  std::vector<Hypothesis> finished;

  while (!live.empty()) {
    std::vector<Hypothesis> candidates;
    for (Hypothesis& h : live) {
      std::vector<double> lp = scorer.next_logprobs(h.tokens);
      if (static_cast<int64_t>(lp.size()) != vocab)
        throw std::logic_error("scorer returned a wrong-sized distribution");
      // the end marker is only an option once every constraint is met
      if (h.constraints.all_met()) {
        Hypothesis done = h;
        done.score += lp[eos];
        finished.push_back(std::move(done));
      }
      if (static_cast<int64_t>(h.tokens.size()) < max_len - 1) {
        for (int64_t v = 0; v < vocab; ++v) {
          if (v == eos) continue;
          Hypothesis child = h;
          child.tokens.push_back(static_cast<int>(v));
          child.score += lp[v];
          child.constraints.update(child.tokens);
          candidates.push_back(std::move(child));
        }
      }
    }
    live = select_beam(std::move(candidates), beam);
  }

  if (finished.empty()) {
    std::ostringstream msg;
    msg << "no constraint-satisfying completion found: "
        << constraints.total_tokens()
        << " constraint tokens within max_len " << max_len;
    throw UnsatisfiableError(constraints.total_tokens(), max_len, msg.str());
  }
  const Hypothesis* best = &finished[0];
  for (const Hypothesis& h : finished)
    if (better(h, *best)) best = &h;
  return {best->tokens, best->score};
}

ConstraintSet build_constraints(const std::vector<int>& sentence,
                                const Vocabulary& vocab,
                                const BilingualDictionary& dict) {
  std::vector<std::vector<int>> phrases;
  std::unordered_set<int> seen_tokens;
  std::set<std::vector<int>> seen_phrases;
  for (int id : sentence) {
    if (!seen_tokens.insert(id).second) continue;
    const std::vector<std::string>& tr = dict.translations(vocab.token(id));
    if (tr.empty()) continue;
    std::vector<int> phrase = vocab.encode(tr.front());
    if (phrase.empty()) continue;
    if (!seen_phrases.insert(phrase).second) continue;
    phrases.push_back(std::move(phrase));
  }
  return ConstraintSet::of(std::move(phrases));
}

PseudoParallelPair generate_pseudo_source(const Model& model,
                                          const std::vector<int>& x_t,
                                          int tgt_lang, int src_lang,
                                          const Vocabulary& vocab,
                                          const BilingualDictionary& dict,
                                          int64_t beam, int64_t max_len) {
  if (x_t.empty())
    throw std::invalid_argument(
        "generate_pseudo_source: sentence must be nonempty");
  if (max_len > model.config().max_len)
    throw std::invalid_argument(
        "generate_pseudo_source: max_len exceeds the model's max_len");
  ConstraintSet cs = build_constraints(x_t, vocab, dict);
  Graph g;
  ModelStepScorer scorer(model, g, x_t, tgt_lang, src_lang, vocab.eos_id());
  SearchResult r = constrained_beam_search(scorer, cs, beam, max_len);
  return {x_t, r.tokens, r.score};
}

}  // namespace biacl
