#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace biacl {

// A bilingual phrase table. Phrases are stored in normalized form: tokens
// separated by single spaces. Entry order is insertion (file) order and a
// given (source, target) pair is stored at most once.
class BilingualDictionary {
 public:
  BilingualDictionary(int src_lang, int tgt_lang)
      : src_lang_(src_lang), tgt_lang_(tgt_lang) {}

  int src_lang() const { return src_lang_; }
  int tgt_lang() const { return tgt_lang_; }

  // Returns false (and changes nothing) when the pair is already present.
  // Throws std::invalid_argument for empty phrases.
  bool add(const std::string& source, const std::string& target);

  bool contains(const std::string& source) const {
    return index_.count(normalize_phrase(source)) > 0;
  }

  // Target phrases for `source` in insertion order; empty when absent.
  const std::vector<std::string>& translations(const std::string& source) const;

  // Source phrases in first-insertion order.
  const std::vector<std::string>& sources() const { return sources_; }

  // Total number of (source, target) pairs.
  int64_t size() const { return pairs_; }
  bool empty() const { return pairs_ == 0; }

  // Collapses internal whitespace to single spaces; trims ends.
  static std::string normalize_phrase(const std::string& phrase);

 private:
  int src_lang_;
  int tgt_lang_;
  std::vector<std::string> sources_;
  std::vector<std::vector<std::string>> targets_;
  std::unordered_map<std::string, size_t> index_;
  int64_t pairs_ = 0;
};

struct DictLoadReport {
  int64_t added = 0;
  int64_t duplicates = 0;
  int64_t malformed = 0;
};

// Reads a UTF-8 TSV file, one "source<TAB>target" pair per line. Lines
// starting with '#' and blank lines are ignored. Lines that do not have
// exactly two nonempty tab-separated fields are counted as malformed and
// skipped; if more than half of the data lines are malformed the file is
// rejected.
BilingualDictionary load_dictionary(const std::string& path, int src_lang,
                                    int tgt_lang,
                                    DictLoadReport* report = nullptr);

void save_dictionary(const BilingualDictionary& dict, const std::string& path);

// Composes d1 (s -> e) with d2 (e -> t) into (s -> t). Target lists follow
// d1 entry order then d2 entry order, with duplicate pairs removed.
BilingualDictionary pivot(const BilingualDictionary& d1,
                          const BilingualDictionary& d2);

// Fraction of sentence tokens that appear as a single-token source phrase.
// Repeated tokens count once per occurrence. Rejects empty sentences.
double coverage(const std::vector<std::string>& sentence_tokens,
                const BilingualDictionary& dict);

}  // namespace biacl
