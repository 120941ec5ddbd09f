#include "biacl/training.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "biacl/autodiff.hpp"
#include "biacl/baseline.hpp"
#include "biacl/errors.hpp"

namespace biacl {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_invariant_errors(const TrainConfig& c, std::vector<std::string>& errs) {
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0))
    errs.push_back("lambda must be in [0, 1], got " + num_str(c.lambda));
  if (!(c.tau > 0.0)) errs.push_back("tau must be positive, got " + num_str(c.tau));
  if (!(c.eps_neg > 0.0 && c.eps_neg <= 1.0))
    errs.push_back("eps_neg must be in (0, 1], got " + num_str(c.eps_neg));
  if (!(c.eps_pos >= 0.0))
    errs.push_back("eps_pos must be non-negative, got " + num_str(c.eps_pos));
  if (!(c.learning_rate > 0.0))
    errs.push_back("learning_rate must be positive, got " + num_str(c.learning_rate));
  if (!(c.weight_decay >= 0.0))
    errs.push_back("weight_decay must be non-negative, got " + num_str(c.weight_decay));
  if (c.epochs < 1) errs.push_back("epochs must be at least 1, got " + std::to_string(c.epochs));
  if (c.beam < 1) errs.push_back("beam must be at least 1, got " + std::to_string(c.beam));
  if (c.batch_size < 1)
    errs.push_back("batch_size must be at least 1, got " + std::to_string(c.batch_size));
  if (!(c.phi >= 0.0 && c.phi <= 1.0))
    errs.push_back("phi must be in [0, 1], got " + num_str(c.phi));
}

[[noreturn]] void throw_config_errors(const std::vector<std::string>& errs) {
  std::string msg = "invalid training config: ";
  for (size_t i = 0; i < errs.size(); ++i) {
    if (i) msg += "; ";
    msg += errs[i];
  }
  throw std::invalid_argument(msg);
}

uint64_t u64(int64_t v) { return static_cast<uint64_t>(v); }

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  append_invariant_errors(*this, errs);
  if (!errs.empty()) throw_config_errors(errs);
}

TrainConfig parse_train_config(const std::vector<std::string>& lines) {
  TrainConfig cfg;
  std::vector<std::string> errs;
  std::set<std::string> seen;
  for (size_t n = 0; n < lines.size(); ++n) {
    std::string line = trim(lines[n]);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      errs.push_back("line " + std::to_string(n + 1) + ": expected key=value, got '" + line + "'");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (seen.count(key)) {
      errs.push_back("duplicate key '" + key + "'");
      continue;
    }
    seen.insert(key);

    auto as_double = [&](double& out) {
      try {
        size_t used = 0;
        double v = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument("trailing");
        out = v;
      } catch (const std::exception&) {
        errs.push_back("key '" + key + "': cannot parse number '" + val + "'");
      }
    };
    auto as_int = [&](int64_t& out) {
      try {
        size_t used = 0;
        long long v = std::stoll(val, &used);
        if (used != val.size()) throw std::invalid_argument("trailing");
        out = v;
      } catch (const std::exception&) {
        errs.push_back("key '" + key + "': cannot parse integer '" + val + "'");
      }
    };

    if (key == "lambda") as_double(cfg.lambda);
    else if (key == "tau") as_double(cfg.tau);
    else if (key == "eps_neg") as_double(cfg.eps_neg);
    else if (key == "eps_pos") as_double(cfg.eps_pos);
    else if (key == "learning_rate") as_double(cfg.learning_rate);
    else if (key == "weight_decay") as_double(cfg.weight_decay);
    else if (key == "epochs") as_int(cfg.epochs);
    else if (key == "beam") as_int(cfg.beam);
    else if (key == "batch_size") as_int(cfg.batch_size);
    else if (key == "phi") as_double(cfg.phi);
    else if (key == "seed") {
      try {
        size_t used = 0;
        unsigned long long v = std::stoull(val, &used);
        if (used != val.size()) throw std::invalid_argument("trailing");
        cfg.seed = v;
      } catch (const std::exception&) {
        errs.push_back("key 'seed': cannot parse integer '" + val + "'");
      }
    } else {
      errs.push_back("unknown key '" + key + "'");
    }
  }
  append_invariant_errors(cfg, errs);
  if (!errs.empty()) throw_config_errors(errs);
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(read_lines(path));
}

std::string train_config_text(const TrainConfig& c) {
  std::string s;
  s += "lambda=" + num_str(c.lambda) + "\n";
  s += "tau=" + num_str(c.tau) + "\n";
  s += "eps_neg=" + num_str(c.eps_neg) + "\n";
  s += "eps_pos=" + num_str(c.eps_pos) + "\n";
  s += "learning_rate=" + num_str(c.learning_rate) + "\n";
  s += "weight_decay=" + num_str(c.weight_decay) + "\n";
  s += "epochs=" + std::to_string(c.epochs) + "\n";
  s += "beam=" + std::to_string(c.beam) + "\n";
  s += "batch_size=" + std::to_string(c.batch_size) + "\n";
  s += "phi=" + num_str(c.phi) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  return s;
}

double composite_loss(double ae_bkd, double ae_fwd, double cl_bkd,
                      double cl_fwd, double lambda) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string("composite loss: component ") + name +
                                  " is not finite");
  };
  check(ae_bkd, "ae_bkd");
  check(ae_fwd, "ae_fwd");
  check(cl_bkd, "cl_bkd");
  check(cl_fwd, "cl_fwd");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("composite loss: lambda must be in [0, 1]");
  return lambda * (ae_bkd + ae_fwd) + (1.0 - lambda) * (cl_bkd + cl_fwd);
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("optimizer: weight decay must be non-negative");
}

void AdamW::step(std::vector<Parameter>& params,
                 const std::map<int64_t, Tensor>& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(static_cast<int64_t>(i));
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    Tensor& p = params[i].value;
    if (!g.same_shape(p))
      throw std::invalid_argument("optimizer: gradient shape " + shape_str(g.shape) +
                                  " does not match parameter " + params[i].name);
    Tensor& m = m_.try_emplace(static_cast<int64_t>(i), Tensor::zeros(p.shape)).first->second;
    Tensor& v = v_.try_emplace(static_cast<int64_t>(i), Tensor::zeros(p.shape)).first->second;
    for (size_t k = 0; k < p.data.size(); ++k) {
      double gk = g.data[k];
      m.data[k] = beta1_ * m.data[k] + (1.0 - beta1_) * gk;
      v.data[k] = beta2_ * v.data[k] + (1.0 - beta2_) * gk * gk;
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      p.data[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.data[k]);
    }
  }
}

AeBackward backward_ae_loss(const BoundModel& bound, const HiddenSeq& target_memory,
                            const std::vector<int>& source, int src_lang, int eos) {
  std::vector<int> teacher = source;
  teacher.push_back(eos);
  DecodeResult dec = bound.decode(target_memory, src_lang, teacher);
  return AeBackward{cross_entropy(dec.logits, teacher), dec.states};
}

Value forward_ae_loss(const BoundModel& bound, const Value& bkd_states,
                      const std::vector<int>& target, int tgt_lang, int src_lang,
                      int eos) {
  std::vector<int> teacher = target;
  teacher.push_back(eos);
  HiddenSeq mem = bound.encode_soft(bkd_states, src_lang);
  DecodeResult dec = bound.decode(mem, tgt_lang, teacher);
  return cross_entropy(dec.logits, teacher);
}

Tensor loglik_grad(const Model& model, const Tensor& h_states, int enc_lang,
                   int dec_lang, const std::vector<int>& teacher) {
  Graph g;
  BoundModel bound = model.bind(g);
  Value h = g.leaf(h_states);
  HiddenSeq mem{h, enc_lang};
  DecodeResult dec = bound.decode(mem, dec_lang, teacher);
  Value nll = cross_entropy(dec.logits, teacher);
  g.backward(nll);
  Tensor grad = g.grad(h);
  for (double& x : grad.data) x = -x;  // mean log-likelihood is the negated loss
  return grad;
}

Tensor negative_delta(const Tensor& loglik_g, double eps_neg, uint64_t fallback_seed) {
  if (!(eps_neg > 0.0)) throw std::invalid_argument("negative perturbation: eps_neg must be positive");
  double norm = loglik_g.l2();
  Tensor delta;
  if (norm < 1e-12) {
    Rng rng(fallback_seed ? fallback_seed : 1);
    delta = random_normal(rng, loglik_g.shape);
    norm = delta.l2();
  } else {
    delta = loglik_g;
  }
  double s = -eps_neg / norm;
  for (double& x : delta.data) x *= s;
  return delta;
}

HiddenSeq make_negative(const HiddenSeq& h, const Tensor& loglik_g,
                        double eps_neg, uint64_t fallback_seed) {
  Tensor delta = negative_delta(loglik_g, eps_neg, fallback_seed);
  Graph* g = h.states.graph();
  return HiddenSeq{add(h.states, g->constant(delta)), h.lang};
}

namespace {

// Rescales every row of `t` to norm `target`; rows with vanishing norm take
// the corresponding row of `fallback` (already at the target norm).
void renorm_rows(Tensor& t, double target, const Tensor& fallback) {
  int64_t rows = t.rows(), cols = t.cols();
  for (int64_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (int64_t c = 0; c < cols; ++c) sq += t.at(r, c) * t.at(r, c);
    double norm = std::sqrt(sq);
    if (norm < 1e-300) {
      for (int64_t c = 0; c < cols; ++c) t.at(r, c) = fallback.at(r, c);
    } else {
      double s = target / norm;
      for (int64_t c = 0; c < cols; ++c) t.at(r, c) *= s;
    }
  }
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

Tensor positive_perturbation(const Model& model, const Tensor& h_states,
                             int enc_lang, int dec_lang,
                             const std::vector<int>& teacher, double eps_pos,
                             uint64_t seed, double* kl_init, double* kl_final) {
  if (!(eps_pos >= 0.0))
    throw std::invalid_argument("positive perturbation: eps_pos must be non-negative");
  if (eps_pos == 0.0) {
    if (kl_init) *kl_init = 0.0;
    if (kl_final) *kl_final = 0.0;
    return Tensor::zeros(h_states.shape);
  }

  // Reference distribution at the unperturbed states, held fixed below.
  Tensor p_logits;
  {
    Graph g;
    BoundModel bound = model.bind(g);
    HiddenSeq mem{g.constant(h_states), enc_lang};
    p_logits = bound.decode(mem, dec_lang, teacher).logits.tensor();
  }

  auto kl_at = [&](const Tensor& zeta) {
    Graph g;
    BoundModel bound = model.bind(g);
    HiddenSeq mem{g.constant(add_tensors(h_states, zeta)), enc_lang};
    DecodeResult dec = bound.decode(mem, dec_lang, teacher);
    return kl_divergence(g.constant(p_logits), dec.logits).tensor().at(0);
  };

  Rng rng(seed ? seed : 1);
  Tensor zeta0 = random_normal(rng, h_states.shape);
  {
    // Deterministic stand-in for the (practically impossible) zero row.
    Tensor axis = Tensor::zeros(h_states.shape);
    for (int64_t r = 0; r < axis.rows(); ++r) axis.at(r, 0) = eps_pos;
    renorm_rows(zeta0, eps_pos, axis);
  }

  // KL and its gradient with respect to the perturbation at the initial point.
  double kl0;
  Tensor grad;
  {
    Graph g;
    BoundModel bound = model.bind(g);
    Value z = g.leaf(zeta0);
    HiddenSeq mem{add(g.constant(h_states), z), enc_lang};
    DecodeResult dec = bound.decode(mem, dec_lang, teacher);
    Value kl = kl_divergence(g.constant(p_logits), dec.logits);
    kl0 = kl.tensor().at(0);
    g.backward(kl);
    grad = g.grad(z);
  }
  if (kl_init) *kl_init = kl0;

  // One descent step, backtracked until it does not increase the divergence;
  // the rescaling back onto the per-position sphere happens before the
  // acceptance check so the guarantee holds for the returned value.
  for (double eta = 1.0; eta >= 1.0 / 32.0 - 1e-15; eta *= 0.5) {
    Tensor cand = zeta0;
    for (size_t i = 0; i < cand.data.size(); ++i) cand.data[i] -= eta * grad.data[i];
    renorm_rows(cand, eps_pos, zeta0);
    double klc = kl_at(cand);
    if (klc <= kl0) {
      if (kl_final) *kl_final = klc;
      return cand;
    }
  }
  if (kl_final) *kl_final = kl0;
  return zeta0;
}

HiddenSeq make_positive(const Model& model, const HiddenSeq& h, int dec_lang,
                        const std::vector<int>& teacher, double eps_pos,
                        uint64_t seed) {
  if (eps_pos == 0.0) return h;
  Tensor zeta = positive_perturbation(model, h.states.tensor(), h.lang, dec_lang,
                                      teacher, eps_pos, seed);
  Graph* g = h.states.graph();
  return HiddenSeq{add(h.states, g->constant(zeta)), h.lang};
}

Value contrastive_batch_loss(const std::vector<Value>& anchors,
                             const std::vector<Value>& positives,
                             const std::vector<Value>& negatives, double tau) {
  if (anchors.empty()) throw std::invalid_argument("contrastive loss: empty batch");
  if (anchors.size() != positives.size())
    throw std::invalid_argument("contrastive loss: " + std::to_string(anchors.size()) +
                                " anchors but " + std::to_string(positives.size()) +
                                " positives");
  if (negatives.empty()) throw std::invalid_argument("contrastive loss: no negatives");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive loss: tau must be positive");

  Value total;
  bool has_total = false;
  for (size_t i = 0; i < anchors.size(); ++i) {
    Value loss_i = scale(cosine_similarity(anchors[i], positives[i]), -1.0 / tau);
    Value denom;
    bool has_denom = false;
    for (const Value& neg : negatives) {
      Value e = vexp(scale(cosine_similarity(anchors[i], neg), 1.0 / tau));
      denom = has_denom ? add(denom, e) : e;
      has_denom = true;
    }
    loss_i = add(loss_i, vlog(denom));
    total = has_total ? add(total, loss_i) : loss_i;
    has_total = true;
  }
  return scale(total, 1.0 / static_cast<double>(anchors.size()));
}

namespace {

std::string step_line(int64_t step, const LossReport& r) {
  return std::to_string(step) + "\t" + num_str(r.ae_bkd) + "\t" + num_str(r.ae_fwd) +
         "\t" + num_str(r.cl_bkd) + "\t" + num_str(r.cl_fwd) + "\t" +
         num_str(r.l_star) + "\t" + std::to_string(r.skipped);
}

}  // namespace

TrainResult train(Model& model, const MonolingualCorpus& target_corpus,
                  const Vocabulary& vocab, const BilingualDictionary& dict,
                  int src_lang, const TrainConfig& cfg, const AblationMask& mask,
                  PairSource source) {
  cfg.validate();
  TrainResult out;
  if (!mask.any()) return out;  // nothing participates: parameters stay untouched

  const ModelConfig& mc = model.config();
  if (!mc.is_language_tag(target_corpus.lang))
    throw std::invalid_argument("train: corpus language id " +
                                std::to_string(target_corpus.lang) +
                                " is not a configured language tag");
  if (!mc.is_language_tag(src_lang))
    throw std::invalid_argument("train: source language id " + std::to_string(src_lang) +
                                " is not a configured language tag");
  const int tgt_lang = target_corpus.lang;
  const int eos = vocab.eos_id();

  CurriculumPlan plan = curriculum_order(target_corpus, vocab, dict, cfg.phi);
  std::vector<std::vector<int64_t>> batches = curriculum_batches(plan, cfg.batch_size);

  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  const bool need_ae_pass = mask.ae_bkd || mask.ae_fwd;
  const bool need_cl = mask.cl_bkd || mask.cl_fwd;
  int64_t step_index = 0;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossReport esum;
    int64_t esteps = 0;

    for (const std::vector<int64_t>& batch : batches) {
      // Pseudo-sources are regenerated against the parameters as they stand
      // at the start of the step; nothing mutates until the optimizer runs.
      std::vector<PseudoParallelPair> pairs;
      int64_t skipped = 0;
      for (int64_t idx : batch) {
        const std::vector<int>& x_t = target_corpus.sentences[static_cast<size_t>(idx)];
        if (x_t.empty() || static_cast<int64_t>(x_t.size()) + 2 > mc.max_len) {
          ++skipped;
          continue;
        }
        try {
          PseudoParallelPair pr;
          if (source == PairSource::kConstrainedSearch) {
            pr = generate_pseudo_source(model, x_t, tgt_lang, src_lang, vocab,
                                        dict, cfg.beam, mc.max_len);
          } else {
            pr.target = x_t;
            pr.source = substitute_tokens(x_t, vocab, dict);
          }
          // The hidden-state round trips re-encode decoder outputs with a
          // prepended tag, which needs one extra position of headroom.
          if (pr.source.empty() ||
              static_cast<int64_t>(pr.source.size()) + 2 > mc.max_len) {
            ++skipped;
            continue;
          }
          pairs.push_back(std::move(pr));
        } catch (const UnsatisfiableError&) {
          ++skipped;
        }
      }
      out.skipped_pairs += skipped;
      esum.skipped += skipped;

      if (pairs.empty()) {
        LossReport rep;
        rep.skipped = skipped;
        out.step_reports.push_back(rep);
        out.log_lines.push_back(step_line(step_index, rep));
        ++step_index;
        continue;
      }

      LossReport rep;
      rep.skipped = skipped;
      try {
        Graph g;
        BoundModel bound = model.bind(g);
        std::vector<Value> ae_b_terms, ae_f_terms;
        std::vector<Value> anc_b, pos_b, neg_b, anc_f, pos_f, neg_f;

        for (size_t i = 0; i < pairs.size(); ++i) {
          const PseudoParallelPair& pr = pairs[i];
          std::vector<int> teacher_s = pr.source;
          teacher_s.push_back(eos);
          std::vector<int> teacher_t = pr.target;
          teacher_t.push_back(eos);

          HiddenSeq h_t = bound.encode(pr.target, tgt_lang);

          if (need_ae_pass) {
            // Reconstruct the pseudo-source from the target, then the target
            // back from those decoder states.
            AeBackward ab = backward_ae_loss(bound, h_t, pr.source, src_lang, eos);
            if (mask.ae_bkd) ae_b_terms.push_back(ab.loss);
            if (mask.ae_fwd)
              ae_f_terms.push_back(forward_ae_loss(bound, ab.states, pr.target,
                                                   tgt_lang, src_lang, eos));
          }

          if (need_cl) {
            // Backward direction: anchor is the target encoding, the negative
            // its adversarial shift, the positive a tamed re-encoding of the
            // decoder states produced from that shifted memory.
            Tensor g_b = loglik_grad(model, h_t.states.tensor(), tgt_lang,
                                     src_lang, teacher_s);
            HiddenSeq h_neg_t = make_negative(
                h_t, g_b, cfg.eps_neg,
                Rng::mix({cfg.seed, 0xB1, u64(epoch), u64(step_index), i}));
            DecodeResult dec_c = bound.decode(h_neg_t, src_lang, teacher_s);
            HiddenSeq e_bkd = bound.encode_soft(dec_c.states, src_lang);
            HiddenSeq h_pos_s = make_positive(
                model, e_bkd, tgt_lang, teacher_t, cfg.eps_pos,
                Rng::mix({cfg.seed, 0xB2, u64(epoch), u64(step_index), i}));
            anc_b.push_back(mean_rows(h_t.states));
            pos_b.push_back(mean_rows(h_pos_s.states));
            neg_b.push_back(mean_rows(h_neg_t.states));

            // Forward direction: the same construction with the roles of the
            // two languages swapped, anchored on the re-encoded states.
            Tensor g_f = loglik_grad(model, e_bkd.states.tensor(), src_lang,
                                     tgt_lang, teacher_t);
            HiddenSeq h_neg_s = make_negative(
                e_bkd, g_f, cfg.eps_neg,
                Rng::mix({cfg.seed, 0xB3, u64(epoch), u64(step_index), i}));
            DecodeResult dec_cf = bound.decode(h_neg_s, tgt_lang, teacher_t);
            HiddenSeq e_fwd = bound.encode_soft(dec_cf.states, tgt_lang);
            HiddenSeq h_pos_t = make_positive(
                model, e_fwd, src_lang, teacher_s, cfg.eps_pos,
                Rng::mix({cfg.seed, 0xB4, u64(epoch), u64(step_index), i}));
            anc_f.push_back(mean_rows(e_bkd.states));
            pos_f.push_back(mean_rows(h_pos_t.states));
            neg_f.push_back(mean_rows(h_neg_s.states));
          }
        }

        const double inv_n = 1.0 / static_cast<double>(pairs.size());
        Value ae_part, cl_part;
        bool has_ae = false, has_cl = false;
        if (mask.ae_bkd) {
          Value s = ae_b_terms[0];
          for (size_t i = 1; i < ae_b_terms.size(); ++i) s = add(s, ae_b_terms[i]);
          s = scale(s, inv_n);
          rep.ae_bkd = s.tensor().at(0);
          ae_part = s;
          has_ae = true;
        }
        if (mask.ae_fwd) {
          Value s = ae_f_terms[0];
          for (size_t i = 1; i < ae_f_terms.size(); ++i) s = add(s, ae_f_terms[i]);
          s = scale(s, inv_n);
          rep.ae_fwd = s.tensor().at(0);
          ae_part = has_ae ? add(ae_part, s) : s;
          has_ae = true;
        }
        if (mask.cl_bkd) {
          Value s = contrastive_batch_loss(anc_b, pos_b, neg_b, cfg.tau);
          rep.cl_bkd = s.tensor().at(0);
          cl_part = s;
          has_cl = true;
        }
        if (mask.cl_fwd) {
          Value s = contrastive_batch_loss(anc_f, pos_f, neg_f, cfg.tau);
          rep.cl_fwd = s.tensor().at(0);
          cl_part = has_cl ? add(cl_part, s) : s;
          has_cl = true;
        }

        Value total;
        if (has_ae && has_cl)
          total = add(scale(ae_part, cfg.lambda), scale(cl_part, 1.0 - cfg.lambda));
        else if (has_ae)
          total = scale(ae_part, cfg.lambda);
        else
          total = scale(cl_part, 1.0 - cfg.lambda);
        rep.l_star = total.tensor().at(0);

        std::map<int64_t, Tensor> grads = g.backward(total);
        for (const auto& [id, gt] : grads)
          if (!gt.all_finite())
            throw std::runtime_error("non-finite gradient for parameter " +
                                     model.params()[static_cast<size_t>(id)].name);
        opt.step(model.params(), grads);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step_index) + ": " + e.what());
      }

      out.step_reports.push_back(rep);
      out.log_lines.push_back(step_line(step_index, rep));
      esum.ae_bkd += rep.ae_bkd;
      esum.ae_fwd += rep.ae_fwd;
      esum.cl_bkd += rep.cl_bkd;
      esum.cl_fwd += rep.cl_fwd;
      esum.l_star += rep.l_star;
      ++esteps;
      ++out.steps;
      ++step_index;
    }

    LossReport erep = esum;
    if (esteps > 0) {
      double inv = 1.0 / static_cast<double>(esteps);
      erep.ae_bkd *= inv;
      erep.ae_fwd *= inv;
      erep.cl_bkd *= inv;
      erep.cl_fwd *= inv;
      erep.l_star *= inv;
    }
    out.epoch_reports.push_back(erep);
  }
  return out;
}

}  // namespace biacl
