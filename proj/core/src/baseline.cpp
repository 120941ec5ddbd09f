#include "biacl/baseline.hpp"

namespace biacl {

std::vector<int> substitute_tokens(const std::vector<int>& sentence,
                                   const Vocabulary& vocab,
                                   const BilingualDictionary& dict) {
  std::vector<int> out;
  out.reserve(sentence.size());
  for (int id : sentence) {
    const std::string& tok = vocab.token(id);
    if (dict.contains(tok)) {
      for (int tid : vocab.encode(dict.translations(tok).front())) out.push_back(tid);
    } else {
      out.push_back(id);
    }
  }
  return out;
}

std::vector<PseudoParallelPair> syn_lexicon_pairs(const MonolingualCorpus& corpus,
                                                  const Vocabulary& vocab,
                                                  const BilingualDictionary& dict) {
  std::vector<PseudoParallelPair> pairs;
  pairs.reserve(corpus.sentences.size());
  for (const std::vector<int>& sent : corpus.sentences) {
    PseudoParallelPair pr;
    pr.target = sent;
    pr.source = substitute_tokens(sent, vocab, dict);
    pairs.push_back(std::move(pr));
  }
  return pairs;
}

void write_pairs_tsv(const std::string& path,
                     const std::vector<PseudoParallelPair>& pairs,
                     const Vocabulary& vocab) {
  std::vector<std::string> lines;
  lines.reserve(pairs.size());
  for (const PseudoParallelPair& pr : pairs)
    lines.push_back(vocab.decode(pr.source) + "\t" + vocab.decode(pr.target));
  write_lines(path, lines);
}

}  // namespace biacl
