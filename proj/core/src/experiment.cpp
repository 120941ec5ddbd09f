#include "biacl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "biacl/autodiff.hpp"
#include "biacl/decoding.hpp"
#include "biacl/metrics.hpp"

namespace biacl {

namespace {

std::string word_name(char prefix, int64_t rank) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%03lld", prefix,
                static_cast<long long>(rank + 1));
  return std::string(buf);
}

// Draws type ranks with probability proportional to 1/(rank+1)^s.
class ZipfSampler {
 public:
  ZipfSampler(int64_t n, double s) : cum_(static_cast<size_t>(n)) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      total += 1.0 / std::pow(static_cast<double>(i + 1), s);
      cum_[static_cast<size_t>(i)] = total;
    }
  }

  int64_t draw(Rng& rng) const {
    double u = rng.uniform(0.0, cum_.back());
    auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    if (it == cum_.end()) --it;
    return it - cum_.begin();
  }

 private:
  std::vector<double> cum_;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return std::string(buf);
}

}  // namespace

void WorldConfig::validate() const {
  std::vector<std::string> problems;
  if (content_types < 1) problems.push_back("content_types must be >= 1");
  if (dict_types < 1 || dict_types > content_types)
    problems.push_back("dict_types must be in [1, content_types]");
  if (anchor_top < 0 || anchor_top > dict_types)
    problems.push_back("anchor_top must be in [0, dict_types]");
  if (train_sentences < 1) problems.push_back("train_sentences must be >= 1");
  if (heldout_sentences < 1)
    problems.push_back("heldout_sentences must be >= 1");
  if (warm_pairs < 0) problems.push_back("warm_pairs must be >= 0");
  if (min_len < 1) problems.push_back("min_len must be >= 1");
  if (max_len < min_len) problems.push_back("max_len must be >= min_len");
  if (warm_min_len < 1) problems.push_back("warm_min_len must be >= 1");
  if (warm_max_len < warm_min_len)
    problems.push_back("warm_max_len must be >= warm_min_len");
  if (warm_types < 0 || warm_types > content_types)
    problems.push_back("warm_types must be in [0, content_types]");
  if (copy_sentences < 0) problems.push_back("copy_sentences must be >= 0");
  if (!(zipf_exponent >= 0.0))
    problems.push_back("zipf_exponent must be >= 0");
  if (!problems.empty()) {
    std::string msg = "invalid world config: " + problems.front();
    for (size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
    throw std::invalid_argument(msg);
  }
}

void ExperimentConfig::validate() const {
  world.validate();
  train.validate();
  std::vector<std::string> problems;
  if (d_model < 1) problems.push_back("d_model must be >= 1");
  if (layers < 1) problems.push_back("layers must be >= 1");
  if (heads < 1) problems.push_back("heads must be >= 1");
  if (world.max_len + 2 > model_max_len)
    problems.push_back("model_max_len must be at least world max_len + 2");
  if (!(warm_lr > 0.0)) problems.push_back("warm_lr must be > 0");
  if (warm_copy_epochs < 0)
    problems.push_back("warm_copy_epochs must be >= 0");
  if (warm_epochs < 0) problems.push_back("warm_epochs must be >= 0");
  if (warm_batch < 1) problems.push_back("warm_batch must be >= 1");
  if (eval_beam < 1) problems.push_back("eval_beam must be >= 1");
  if (isotropy_samples < 2)
    problems.push_back("isotropy_samples must be >= 2");
  if (!problems.empty()) {
    std::string msg = "invalid experiment config: " + problems.front();
    for (size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
    throw std::invalid_argument(msg);
  }
}

SyntheticWorld make_synthetic_world(const WorldConfig& wc) {
  wc.validate();
  Rng rng(wc.seed);

  std::vector<std::string> tokens = {Vocabulary::kUnk, Vocabulary::kEos,
                                     "<L1>", "<L2>"};
  for (int64_t r = 0; r < wc.content_types; ++r)
    tokens.push_back(word_name('a', r));
  for (int64_t r = 0; r < wc.content_types; ++r)
    tokens.push_back(word_name('b', r));

  SyntheticWorld w;
  w.vocab = Vocabulary::from_tokens(tokens);
  w.l1 = w.vocab.require("<L1>");
  w.l2 = w.vocab.require("<L2>");

  // Dictionary coverage: the `anchor_top` most frequent types always, the
  // rest of the budget by a seeded shuffle of the remaining ranks.
  std::vector<int64_t> covered;
  for (int64_t r = 0; r < wc.anchor_top; ++r) covered.push_back(r);
  std::vector<int64_t> rest;
  for (int64_t r = wc.anchor_top; r < wc.content_types; ++r) rest.push_back(r);
  for (size_t i = rest.size(); i > 1; --i) {
    int64_t j = rng.uniform_int(0, static_cast<int64_t>(i) - 1);
    std::swap(rest[i - 1], rest[static_cast<size_t>(j)]);
  }
  for (int64_t k = 0; k < wc.dict_types - wc.anchor_top; ++k)
    covered.push_back(rest[static_cast<size_t>(k)]);

  w.dict = BilingualDictionary(w.l2, w.l1);
  for (int64_t r : covered) w.dict.add(word_name('b', r), word_name('a', r));

  ZipfSampler zipf(wc.content_types, wc.zipf_exponent);
  int64_t warm_types =
      wc.warm_types == 0 ? wc.content_types : wc.warm_types;
  ZipfSampler warm_zipf(warm_types, wc.zipf_exponent);
  auto sample_ranks = [&rng](const ZipfSampler& s, int64_t lo, int64_t hi) {
    int64_t len = rng.uniform_int(lo, hi);
    std::vector<int64_t> ranks(static_cast<size_t>(len));
    for (auto& r : ranks) r = s.draw(rng);
    return ranks;
  };
  auto to_line = [](const std::vector<int64_t>& ranks, char prefix) {
    std::string line;
    for (size_t i = 0; i < ranks.size(); ++i) {
      if (i) line += ' ';
      line += word_name(prefix, ranks[i]);
    }
    return line;
  };

  std::unordered_set<std::string> seen;
  auto sample_distinct = [&](int64_t count, const ZipfSampler& s, int64_t lo,
                             int64_t hi) {
    std::vector<std::vector<int64_t>> out;
    int64_t attempts = 0;
    int64_t budget = count * 1000 + 1000;
    while (static_cast<int64_t>(out.size()) < count) {
      if (++attempts > budget)
        throw std::runtime_error(
            "synthetic world: could not sample enough distinct sentences; "
            "increase type count or length range");
      std::vector<int64_t> ranks = sample_ranks(s, lo, hi);
      std::string line = to_line(ranks, 'b');
      if (seen.insert(line).second) out.push_back(std::move(ranks));
    }
    return out;
  };

  std::vector<std::vector<int64_t>> train =
      sample_distinct(wc.train_sentences, zipf, wc.min_len, wc.max_len);
  std::vector<std::vector<int64_t>> held =
      sample_distinct(wc.heldout_sentences, zipf, wc.min_len, wc.max_len);
  std::vector<std::vector<int64_t>> warm = sample_distinct(
      wc.warm_pairs, warm_zipf, wc.warm_min_len, wc.warm_max_len);
  // Independent draws per language so the copy corpora are not mutual
  // translations; they exist to expose every word type monolingually.
  std::vector<std::vector<int64_t>> copy_a =
      sample_distinct(wc.copy_sentences, zipf, wc.min_len, wc.max_len);
  std::vector<std::vector<int64_t>> copy_b =
      sample_distinct(wc.copy_sentences, zipf, wc.min_len, wc.max_len);

  std::vector<std::string> train_lines;
  train_lines.reserve(train.size());
  for (const auto& ranks : train) train_lines.push_back(to_line(ranks, 'b'));
  w.train_mono = encode_corpus(train_lines, w.vocab, w.l2, "synthetic");

  auto ids_of = [&](const std::vector<int64_t>& ranks, char prefix) {
    std::vector<int> ids;
    ids.reserve(ranks.size());
    for (int64_t r : ranks) ids.push_back(w.vocab.require(word_name(prefix, r)));
    return ids;
  };
  auto source_of = [&](const std::vector<int64_t>& ranks) {
    std::vector<int> ids = ids_of(ranks, 'a');
    if (wc.reversed_order) std::reverse(ids.begin(), ids.end());
    return ids;
  };
  for (const auto& ranks : held) {
    w.test_source.push_back(source_of(ranks));
    w.test_reference.push_back(to_line(ranks, 'b'));
  }
  for (const auto& ranks : warm)
    w.warm_pairs.emplace_back(source_of(ranks), ids_of(ranks, 'b'));
  for (const auto& ranks : copy_a) w.copy_l1.push_back(source_of(ranks));
  for (const auto& ranks : copy_b) w.copy_l2.push_back(ids_of(ranks, 'b'));
  return w;
}

void warm_start(Model& model, const SyntheticWorld& world, double lr,
                int64_t copy_epochs, int64_t pair_epochs, int64_t batch_size) {
  if (!(lr > 0.0)) throw std::invalid_argument("warm start lr must be > 0");
  if (batch_size < 1)
    throw std::invalid_argument("warm start batch size must be >= 1");

  int eos = world.vocab.eos_id();
  // Fresh optimizer state per phase, as when fine-tuning a pretrained model.
  AdamW opt(lr);

  auto apply = [&](Graph& g, Value total) {
    std::map<int64_t, Tensor> grads = g.backward(total);
    for (const auto& [pid, gt] : grads) {
      (void)pid;
      if (!gt.all_finite())
        throw std::runtime_error("warm start diverged: non-finite gradient");
    }
    opt.step(model.params(), grads);
  };

  // Language-alternating view of the copy corpora.
  std::vector<std::pair<const std::vector<int>*, int>> copies;
  size_t na = world.copy_l1.size();
  size_t nb = world.copy_l2.size();
  copies.reserve(na + nb);
  for (size_t i = 0; i < std::max(na, nb); ++i) {
    if (i < na) copies.emplace_back(&world.copy_l1[i], world.l1);
    if (i < nb) copies.emplace_back(&world.copy_l2[i], world.l2);
  }

  // Rows of the tied embedding that phase 2 must not touch: everything the
  // parallel pairs train, plus specials and language tags.
  std::vector<bool> frozen_row(static_cast<size_t>(world.vocab.size()), false);
  frozen_row[static_cast<size_t>(world.vocab.unk_id())] = true;
  frozen_row[static_cast<size_t>(eos)] = true;
  frozen_row[static_cast<size_t>(world.l1)] = true;
  frozen_row[static_cast<size_t>(world.l2)] = true;
  for (const auto& pr : world.warm_pairs) {
    for (int id : pr.first) frozen_row[static_cast<size_t>(id)] = true;
    for (int id : pr.second) frozen_row[static_cast<size_t>(id)] = true;
  }
  int64_t embed_idx = -1;
  for (size_t i = 0; i < model.params().size(); ++i)
    if (model.params()[i].name == "embed")
      embed_idx = static_cast<int64_t>(i);
  if (embed_idx < 0)
    throw std::runtime_error("warm start: model has no embedding table");

  // One copy pass that updates only the embedding rows of word types the
  // warm pairs never mention, leaving the rest of the model frozen.
  auto graft_pass = [&](AdamW& graft_opt) {
    int64_t n = static_cast<int64_t>(copies.size());
    int64_t d = model.params()[static_cast<size_t>(embed_idx)].value.shape[1];
    for (int64_t begin = 0; begin < n; begin += batch_size) {
      int64_t end = std::min(n, begin + batch_size);
      Graph g;
      BoundModel bound = model.bind(g);
      Value total;
      bool first = true;
      for (int64_t i = begin; i < end; ++i) {
        const auto& [sent, lang] = copies[static_cast<size_t>(i)];
        std::vector<int> teacher = *sent;
        teacher.push_back(eos);
        Value ce = cross_entropy(
            bound.decode(bound.encode(*sent, lang), lang, teacher).logits,
            teacher);
        total = first ? ce : add(total, ce);
        first = false;
      }
      total = scale(total, 1.0 / static_cast<double>(end - begin));
      std::map<int64_t, Tensor> grads = g.backward(total);
      auto it = grads.find(embed_idx);
      if (it == grads.end()) continue;
      if (!it->second.all_finite())
        throw std::runtime_error("warm start diverged: non-finite gradient");
      for (size_t row = 0; row < frozen_row.size(); ++row)
        if (frozen_row[row])
          for (int64_t k = 0; k < d; ++k)
            it->second.data[row * static_cast<size_t>(d) +
                            static_cast<size_t>(k)] = 0.0;
      std::map<int64_t, Tensor> embed_only;
      embed_only.emplace(embed_idx, std::move(it->second));
      graft_opt.step(model.params(), embed_only);
    }
  };

  auto pair_pass = [&]() {
    int64_t n = static_cast<int64_t>(world.warm_pairs.size());
    for (int64_t begin = 0; begin < n; begin += batch_size) {
      int64_t end = std::min(n, begin + batch_size);
      Graph g;
      BoundModel bound = model.bind(g);
      Value total;
      bool first = true;
      for (int64_t i = begin; i < end; ++i) {
        const auto& pr = world.warm_pairs[static_cast<size_t>(i)];
        std::vector<int> fwd_teacher = pr.second;
        fwd_teacher.push_back(eos);
        Value fwd_ce = cross_entropy(
            bound.decode(bound.encode(pr.first, world.l1), world.l2,
                         fwd_teacher)
                .logits,
            fwd_teacher);
        std::vector<int> bkd_teacher = pr.first;
        bkd_teacher.push_back(eos);
        Value bkd_ce = cross_entropy(
            bound.decode(bound.encode(pr.second, world.l2), world.l1,
                         bkd_teacher)
                .logits,
            bkd_teacher);
        Value ce = add(fwd_ce, bkd_ce);
        total = first ? ce : add(total, ce);
        first = false;
      }
      total = scale(total, 0.5 / static_cast<double>(end - begin));
      apply(g, total);
    }
  };

  // Phase 1: bidirectional translation on the warm pairs, mirroring a
  // multilingual base.
  if (!world.warm_pairs.empty())
    for (int64_t epoch = 0; epoch < pair_epochs; ++epoch) pair_pass();

  // Phase 2: vocabulary grafting. Same-language reconstruction of the copy
  // corpora trains only the embedding rows of word types absent from the
  // pairs, with the rest of the model frozen. Like a pretrained base model,
  // the warm model then knows every word type monolingually without
  // disturbing what the pairs taught. (Order and freezing both matter:
  // copy-training the whole model before the pairs installs an identity
  // attractor that stalls translation learning, and running it unfrozen
  // afterwards rips the model out of the translation basin.)
  if (copy_epochs > 0 && !copies.empty()) {
    AdamW graft_opt(lr);
    for (int64_t epoch = 0; epoch < copy_epochs; ++epoch)
      graft_pass(graft_opt);
  }
}

std::vector<int> translate(const Model& model, const std::vector<int>& source,
                           int src_lang, int tgt_lang, int eos, int64_t beam) {
  Graph g;
  ModelStepScorer scorer(model, g, source, src_lang, tgt_lang, eos);
  SearchResult res = constrained_beam_search(scorer, ConstraintSet::of({}),
                                             beam, model.config().max_len);
  return res.tokens;
}

double evaluate_bleu(const Model& model, const SyntheticWorld& world,
                     int64_t beam) {
  std::vector<std::string> hyps;
  hyps.reserve(world.test_source.size());
  for (const auto& src : world.test_source)
    hyps.push_back(world.vocab.decode(
        translate(model, src, world.l1, world.l2, world.vocab.eos_id(), beam)));
  return corpus_bleu(hyps, world.test_reference, /*smooth=*/true);
}

SystemEval evaluate_system(const Model& model, const SyntheticWorld& world,
                           int64_t beam, int64_t isotropy_samples,
                           uint64_t seed) {
  SystemEval ev;
  ev.bleu = evaluate_bleu(model, world, beam);
  Tensor enc = sample_encoder_states(model, world.test_source, world.l1,
                                     isotropy_samples, seed);
  Tensor dec = sample_decoder_states(model, world.test_source, world.l1,
                                     world.l2, world.vocab.eos_id(),
                                     isotropy_samples, seed);
  ev.i1_enc = isotropy_i1(enc);
  ev.i2_enc = isotropy_i2(enc);
  ev.i1_dec = isotropy_i1(dec);
  ev.i2_dec = isotropy_i2(dec);
  return ev;
}

std::vector<std::string> results_table(const std::vector<SystemRun>& runs,
                                       const std::string& pair_label) {
  std::vector<std::string> lines;
  lines.push_back("system\tpair\tBLEU\tI1_enc\tI2_enc\tI1_dec\tI2_dec");
  for (const auto& run : runs) {
    lines.push_back(run.name + "\t" + pair_label + "\t" +
                    fmt("%.4f", run.eval.bleu) + "\t" +
                    fmt("%.6f", run.eval.i1_enc) + "\t" +
                    fmt("%.6f", run.eval.i2_enc) + "\t" +
                    fmt("%.6f", run.eval.i1_dec) + "\t" +
                    fmt("%.6f", run.eval.i2_dec));
  }
  return lines;
}

ExperimentResult run_experiment(const ExperimentConfig& ec) {
  ec.validate();
  SyntheticWorld world = make_synthetic_world(ec.world);

  ModelConfig mc;
  mc.vocab_size = world.vocab.size();
  mc.d_model = ec.d_model;
  mc.layers = ec.layers;
  mc.heads = ec.heads;
  mc.max_len = ec.model_max_len;
  mc.language_tags = {world.l1, world.l2};

  Model model(mc, ec.model_seed);
  warm_start(model, world, ec.warm_lr, ec.warm_copy_epochs, ec.warm_epochs,
             ec.warm_batch);

  ExperimentResult out;
  out.warm.name = "warm_start";
  out.warm.eval = evaluate_system(model, world, ec.eval_beam,
                                  ec.isotropy_samples, ec.eval_seed);

  AblationMask full_mask;  // all components enabled
  Model full_model = model;
  out.full.name = "bi_acl";
  out.full.training =
      train(full_model, world.train_mono, world.vocab, world.dict, world.l1,
            ec.train, full_mask, PairSource::kConstrainedSearch);
  out.full.eval = evaluate_system(full_model, world, ec.eval_beam,
                                  ec.isotropy_samples, ec.eval_seed);

  Model lex_model = model;
  out.lexicon.name = "syn_lexicon";
  out.lexicon.training =
      train(lex_model, world.train_mono, world.vocab, world.dict, world.l1,
            ec.train, full_mask, PairSource::kLexicon);
  out.lexicon.eval = evaluate_system(lex_model, world, ec.eval_beam,
                                     ec.isotropy_samples, ec.eval_seed);

  out.results_tsv =
      results_table({out.warm, out.full, out.lexicon}, "L1-L2");
  return out;
}

std::string ablation_mask_label(const AblationMask& mask) {
  std::vector<std::string> parts;
  if (mask.ae_bkd) parts.push_back("ae_bkd");
  if (mask.ae_fwd) parts.push_back("ae_fwd");
  if (mask.cl_bkd) parts.push_back("cl_bkd");
  if (mask.cl_fwd) parts.push_back("cl_fwd");
  if (parts.empty()) return "none";
  std::string label = parts.front();
  for (size_t i = 1; i < parts.size(); ++i) label += "+" + parts[i];
  return label;
}

std::vector<AblationMask> all_ablation_masks() {
  std::vector<AblationMask> masks;
  for (int m = 1; m <= 15; ++m) {
    AblationMask mask;
    mask.ae_bkd = (m & 1) != 0;
    mask.ae_fwd = (m & 2) != 0;
    mask.cl_bkd = (m & 4) != 0;
    mask.cl_fwd = (m & 8) != 0;
    masks.push_back(mask);
  }
  return masks;
}

AblationGridResult run_ablation_grid(const ExperimentConfig& base,
                                     const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablation grid needs seeds");
  base.validate();

  AblationGridResult out;
  out.seeds = seeds;
  out.masks = all_ablation_masks();

  for (uint64_t s : seeds) {
    ExperimentConfig ec = base;
    ec.world.seed = Rng::mix({s, 0xA1});
    ec.model_seed = Rng::mix({s, 0xA2});
    ec.train.seed = Rng::mix({s, 0xA3});
    ec.eval_seed = Rng::mix({s, 0xA4});

    SyntheticWorld world = make_synthetic_world(ec.world);
    ModelConfig mc;
    mc.vocab_size = world.vocab.size();
    mc.d_model = ec.d_model;
    mc.layers = ec.layers;
    mc.heads = ec.heads;
    mc.max_len = ec.model_max_len;
    mc.language_tags = {world.l1, world.l2};

    Model warm_model(mc, ec.model_seed);
    warm_start(warm_model, world, ec.warm_lr, ec.warm_copy_epochs,
               ec.warm_epochs, ec.warm_batch);

    std::vector<double> row;
    row.reserve(out.masks.size());
    for (const AblationMask& mask : out.masks) {
      Model trained = warm_model;
      train(trained, world.train_mono, world.vocab, world.dict, world.l1,
            ec.train, mask, PairSource::kConstrainedSearch);
      row.push_back(evaluate_bleu(trained, world, ec.eval_beam));
    }
    double top = *std::max_element(row.begin(), row.end());
    if (row.back() >= top) ++out.full_mask_wins;
    out.bleu.push_back(std::move(row));
  }

  std::string header = "mask";
  for (uint64_t s : seeds) header += "\tseed_" + std::to_string(s);
  out.table.push_back(header);
  for (size_t mi = 0; mi < out.masks.size(); ++mi) {
    std::string line = ablation_mask_label(out.masks[mi]);
    for (size_t si = 0; si < seeds.size(); ++si)
      line += "\t" + fmt("%.4f", out.bleu[si][mi]);
    out.table.push_back(line);
  }
  return out;
}

}  // namespace biacl
