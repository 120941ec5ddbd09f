#include "biacl/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "biacl/errors.hpp"

namespace biacl {

namespace {

bool is_punctuation_codepoint(uint32_t cp) {
  if (cp < 0x80)
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  if (cp >= 0xA1 && cp <= 0xBF) return true;  // Latin-1 punctuation/symbols
  if (cp == 0xD7 || cp == 0xF7) return true;
  if (cp >= 0x2000 && cp <= 0x206F) return true;  // general punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return true;  // CJK symbols/punctuation
  return false;
}

// Decodes one UTF-8 codepoint starting at s[i]; advances i. Returns false on
// invalid encoding.
bool next_codepoint(const std::string& s, size_t& i, uint32_t& cp) {
  unsigned char b0 = static_cast<unsigned char>(s[i]);
  int extra;
  if (b0 < 0x80) {
    cp = b0;
    extra = 0;
  } else if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    extra = 1;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    extra = 2;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    extra = 3;
  } else {
    return false;
  }
  if (i + static_cast<size_t>(extra) >= s.size()) return false;
  for (int k = 1; k <= extra; ++k) {
    unsigned char b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return false;
    cp = (cp << 6) | (b & 0x3F);
  }
  i += extra + 1;
  return true;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace

bool is_punctuation_token(const std::string& token) {
  if (token.empty()) return false;
  size_t i = 0;
  while (i < token.size()) {
    uint32_t cp = 0;
    if (!next_codepoint(token, i, cp)) return false;
    if (!is_punctuation_codepoint(cp)) return false;
  }
  return true;
}

std::vector<std::string> filter_corpus(const std::vector<std::string>& lines,
                                       int64_t cap, FilterReport* report) {
  if (cap < 1) throw std::invalid_argument("filter_corpus: cap must be >= 1");
  FilterReport rep;
  rep.input_lines = static_cast<int64_t>(lines.size());
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const std::string& raw : lines) {
    std::vector<std::string> toks = split_tokens(raw);
    if (toks.empty()) {
      ++rep.removed_blank;
      continue;
    }
    std::string sentence = join_tokens(toks);
    if (seen.count(sentence)) {
      ++rep.removed_duplicate;
      continue;
    }
    int64_t punct = static_cast<int64_t>(
        std::count_if(toks.begin(), toks.end(), is_punctuation_token));
    if (punct * 2 >= static_cast<int64_t>(toks.size())) {
      ++rep.removed_punctuation;
      continue;
    }
    if (static_cast<int64_t>(out.size()) == cap) {
      ++rep.removed_over_cap;
      continue;
    }
    seen.insert(sentence);
    out.push_back(std::move(sentence));
    ++rep.kept;
  }
  if (report) *report = rep;
  return out;
}

std::string filter_report_text(const FilterReport& rep) {
  std::ostringstream os;
  os << "input lines:          " << rep.input_lines << '\n'
     << "kept:                 " << rep.kept << '\n'
     << "removed blank:        " << rep.removed_blank << '\n'
     << "removed duplicate:    " << rep.removed_duplicate << '\n'
     << "removed punctuation:  " << rep.removed_punctuation << '\n'
     << "removed over cap:     " << rep.removed_over_cap << '\n';
  return os.str();
}

MonolingualCorpus encode_corpus(const std::vector<std::string>& filtered_lines,
                                const Vocabulary& vocab, int lang,
                                const std::string& provenance) {
  MonolingualCorpus corpus;
  corpus.lang = lang;
  corpus.provenance = provenance;
  corpus.sentences.reserve(filtered_lines.size());
  for (const std::string& line : filtered_lines)
    corpus.sentences.push_back(vocab.encode(line));
  return corpus;
}

CurriculumPlan curriculum_order(const MonolingualCorpus& corpus,
                                const Vocabulary& vocab,
                                const BilingualDictionary& dict, double phi) {
  if (phi < 0.0 || phi > 1.0)
    throw std::invalid_argument("curriculum_order: phi must lie in [0,1]");
  std::vector<int64_t> idx;
  std::vector<double> scores(corpus.sentences.size(), 0.0);
  for (size_t i = 0; i < corpus.sentences.size(); ++i) {
    std::vector<std::string> toks;
    toks.reserve(corpus.sentences[i].size());
    for (int id : corpus.sentences[i]) toks.push_back(vocab.token(id));
    scores[i] = coverage(toks, dict);
    if (scores[i] >= phi) idx.push_back(static_cast<int64_t>(i));
  }
  if (idx.empty()) throw EmptyCurriculumError(phi);
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  CurriculumPlan plan;
  plan.threshold = phi;
  plan.order = std::move(idx);
  plan.scores.reserve(plan.order.size());
  for (int64_t i : plan.order) plan.scores.push_back(scores[i]);
  return plan;
}

std::vector<std::vector<int64_t>> curriculum_batches(const CurriculumPlan& plan,
                                                     int64_t batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("curriculum_batches: batch_size must be >= 1");
  std::vector<std::vector<int64_t>> out;
  for (size_t i = 0; i < plan.order.size(); i += batch_size) {
    size_t end = std::min(plan.order.size(), i + batch_size);
    out.emplace_back(plan.order.begin() + i, plan.order.begin() + end);
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (const std::string& line : lines) out << line << '\n';
  if (!out) throw std::runtime_error("failed writing file: " + path);
}

}  // namespace biacl
