#include "biacl/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace biacl {

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens_ = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw std::invalid_argument("vocabulary: empty token at id " + std::to_string(i));
    auto [it, fresh] = v.index_.emplace(tokens[i], static_cast<int>(i));
    (void)it;
    if (!fresh) throw std::invalid_argument("vocabulary: duplicate token '" + tokens[i] + "'");
  }
  auto unk = v.index_.find(kUnk);
  auto eos = v.index_.find(kEos);
  if (unk == v.index_.end() || eos == v.index_.end())
    throw std::invalid_argument("vocabulary must contain <unk> and <eos>");
  v.unk_id_ = unk->second;
  v.eos_id_ = eos->second;
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const std::string& t : tokens_) out << t << "\n";
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::id_of(const std::string& tok) const {
  auto it = index_.find(tok);
  return it == index_.end() ? unk_id_ : it->second;
}

int Vocabulary::require(const std::string& tok) const {
  auto it = index_.find(tok);
  if (it == index_.end())
    throw std::invalid_argument("token '" + tok + "' is not in the vocabulary");
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& line) const {
  std::vector<int> ids;
  for (const std::string& t : split_tokens(line)) ids.push_back(id_of(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace biacl
