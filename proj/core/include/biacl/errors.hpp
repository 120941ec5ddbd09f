#pragma once

#include <stdexcept>
#include <string>

namespace biacl {

/// Raised when a constraint set cannot be satisfied within the generation
/// budget: either statically (max_len too small for the constraint tokens
/// plus the end marker) or because the search exhausted its steps without a
/// constraint-satisfying completed hypothesis.
struct UnsatisfiableError : std::runtime_error {
  int64_t constraint_tokens;
  int64_t max_len;
  UnsatisfiableError(int64_t tokens, int64_t budget, const std::string& msg)
      : std::runtime_error(msg), constraint_tokens(tokens), max_len(budget) {}
};

/// Raised when a coverage threshold leaves no trainable sentences.
struct EmptyCurriculumError : std::runtime_error {
  double phi;
  explicit EmptyCurriculumError(double phi_)
      : std::runtime_error("curriculum is empty: no sentence has dictionary coverage >= " +
                           std::to_string(phi_)),
        phi(phi_) {}
};

}  // namespace biacl
