#pragma once

#include <string>
#include <vector>

#include "biacl/data.hpp"
#include "biacl/decoding.hpp"
#include "biacl/dictionary.hpp"
#include "biacl/vocab.hpp"

namespace biacl {

// Word-for-word pseudo-source: every token with a dictionary entry is
// replaced by its first-listed translation (multi-token translations are
// spliced in); uncovered tokens are copied through verbatim.
std::vector<int> substitute_tokens(const std::vector<int>& sentence,
                                   const Vocabulary& vocab,
                                   const BilingualDictionary& dict);

// One substitution pair per corpus sentence, pairing (target, pseudo-source).
std::vector<PseudoParallelPair> syn_lexicon_pairs(const MonolingualCorpus& corpus,
                                                  const Vocabulary& vocab,
                                                  const BilingualDictionary& dict);

// Two-column TSV, pseudo-source then target, decoded through the vocabulary.
void write_pairs_tsv(const std::string& path,
                     const std::vector<PseudoParallelPair>& pairs,
                     const Vocabulary& vocab);

}  // namespace biacl
