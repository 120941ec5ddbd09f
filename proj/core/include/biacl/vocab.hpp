#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace biacl {

/// Closed token inventory. The on-disk format is UTF-8 text, one token per
/// line, where the line number (0-based) is the token id. "<unk>" and "<eos>"
/// must be present; language tags are ordinary tokens (conventionally
/// "<xx>" style) whose ids are wired into the model config.
class Vocabulary {
 public:
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kEos = "<eos>";

  Vocabulary() = default;
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  /// id of token, or the <unk> id when absent.
  int id_of(const std::string& tok) const;
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  /// id of token; throws when absent (used for language tags).
  int require(const std::string& tok) const;

  int unk_id() const { return unk_id_; }
  int eos_id() const { return eos_id_; }

  /// Whitespace tokenization to ids; unknown tokens map to <unk>.
  std::vector<int> encode(const std::string& line) const;
  /// Space-joined token strings.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int unk_id_ = -1;
  int eos_id_ = -1;
};

/// Whitespace split shared by the text pipeline.
std::vector<std::string> split_tokens(const std::string& line);

}  // namespace biacl
