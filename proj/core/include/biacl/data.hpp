#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biacl/dictionary.hpp"
#include "biacl/vocab.hpp"

namespace biacl {

struct FilterReport {
  int64_t input_lines = 0;
  int64_t kept = 0;
  int64_t removed_blank = 0;
  int64_t removed_duplicate = 0;
  int64_t removed_punctuation = 0;
  int64_t removed_over_cap = 0;
};

std::string filter_report_text(const FilterReport& rep);

// True when every character of the (UTF-8) token is punctuation. Covers
// ASCII punctuation, the Latin-1 punctuation block, General Punctuation
// (U+2000-206F) and CJK symbols/punctuation (U+3000-303F).
bool is_punctuation_token(const std::string& token);

// Cleans raw corpus lines: whitespace-normalizes, drops blank lines, drops
// exact duplicates keeping the first occurrence, drops sentences whose
// punctuation-token ratio is at least one half, and truncates to the first
// `cap` survivors. Order-preserving and idempotent.
std::vector<std::string> filter_corpus(const std::vector<std::string>& lines,
                                       int64_t cap,
                                       FilterReport* report = nullptr);

struct MonolingualCorpus {
  int lang = 0;
  std::vector<std::vector<int>> sentences;  // token ids, no tag / end marker
  std::string provenance;
};

// Encodes already-filtered lines against a vocabulary.
MonolingualCorpus encode_corpus(const std::vector<std::string>& filtered_lines,
                                const Vocabulary& vocab, int lang,
                                const std::string& provenance);

struct CurriculumPlan {
  std::vector<int64_t> order;  // corpus sentence indices, best first
  std::vector<double> scores;  // aligned with `order`, non-increasing
  double threshold = 0.0;
};

// Scores every sentence by dictionary coverage, keeps those with coverage
// >= phi and orders them by score descending (ties: original index
// ascending). Throws EmptyCurriculumError when nothing survives.
CurriculumPlan curriculum_order(const MonolingualCorpus& corpus,
                                const Vocabulary& vocab,
                                const BilingualDictionary& dict, double phi);

// Cuts the planned order into consecutive batches; the last may be short.
std::vector<std::vector<int64_t>> curriculum_batches(const CurriculumPlan& plan,
                                                     int64_t batch_size);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

}  // namespace biacl
