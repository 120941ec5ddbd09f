#include "biacl/dictionary.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "biacl/vocab.hpp"

namespace biacl {

std::string BilingualDictionary::normalize_phrase(const std::string& phrase) {
  std::vector<std::string> toks = split_tokens(phrase);
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

bool BilingualDictionary::add(const std::string& source,
                              const std::string& target) {
  std::string s = normalize_phrase(source);
  std::string t = normalize_phrase(target);
  if (s.empty() || t.empty())
    throw std::invalid_argument("dictionary phrases must be nonempty");
  auto it = index_.find(s);
  if (it == index_.end()) {
    index_.emplace(s, sources_.size());
    sources_.push_back(s);
    targets_.push_back({t});
    ++pairs_;
    return true;
  }
  std::vector<std::string>& list = targets_[it->second];
  if (std::find(list.begin(), list.end(), t) != list.end()) return false;
  list.push_back(t);
  ++pairs_;
  return true;
}

const std::vector<std::string>& BilingualDictionary::translations(
    const std::string& source) const {
  static const std::vector<std::string> kEmpty;
  auto it = index_.find(normalize_phrase(source));
  return it == index_.end() ? kEmpty : targets_[it->second];
}

BilingualDictionary load_dictionary(const std::string& path, int src_lang,
                                    int tgt_lang, DictLoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dictionary file: " + path);

  BilingualDictionary dict(src_lang, tgt_lang);
  DictLoadReport rep;
  int64_t data_lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = BilingualDictionary::normalize_phrase(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    ++data_lines;

    size_t tab1 = line.find('\t');
    size_t tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 != std::string::npos) {
      ++rep.malformed;
      continue;
    }
    std::string src = BilingualDictionary::normalize_phrase(line.substr(0, tab1));
    std::string tgt = BilingualDictionary::normalize_phrase(line.substr(tab1 + 1));
    if (src.empty() || tgt.empty()) {
      ++rep.malformed;
      continue;
    }
    if (dict.add(src, tgt))
      ++rep.added;
    else
      ++rep.duplicates;
  }
  if (data_lines > 0 && rep.malformed * 2 > data_lines) {
    std::ostringstream msg;
    msg << "dictionary file rejected: " << rep.malformed << " of " << data_lines
        << " lines are malformed (" << path << ")";
    throw std::runtime_error(msg.str());
  }
  if (report) *report = rep;
  return dict;
}

void save_dictionary(const BilingualDictionary& dict, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dictionary file: " + path);
  for (const std::string& s : dict.sources())
    for (const std::string& t : dict.translations(s)) out << s << '\t' << t << '\n';
  if (!out) throw std::runtime_error("failed writing dictionary file: " + path);
}

BilingualDictionary pivot(const BilingualDictionary& d1,
                          const BilingualDictionary& d2) {
  if (d1.tgt_lang() != d2.src_lang())
    throw std::invalid_argument(
        "pivot: first dictionary's target language must equal the second's "
        "source language");
  BilingualDictionary out(d1.src_lang(), d2.tgt_lang());
  for (const std::string& s : d1.sources())
    for (const std::string& mid : d1.translations(s))
      for (const std::string& t : d2.translations(mid)) out.add(s, t);
  return out;
}

double coverage(const std::vector<std::string>& sentence_tokens,
                const BilingualDictionary& dict) {
  if (sentence_tokens.empty())
    throw std::invalid_argument("coverage: sentence must be nonempty");
  int64_t hits = 0;
  for (const std::string& tok : sentence_tokens)
    if (dict.contains(tok)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sentence_tokens.size());
}

}  // namespace biacl
