#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace biacl {

/// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything the
/// models here need; a scalar is represented as shape {1}.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<int64_t> s, std::vector<double> d)
      : shape(s), data(std::move(d)) {}

  static Tensor zeros(const std::vector<int64_t>& shape);
  static Tensor full(const std::vector<int64_t>& shape, double v);
  static Tensor row(std::vector<double> d);  // rank-1 [n]
  static Tensor scalar(double v);            // shape {1}

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  double l2() const;                 // Euclidean norm of the flattened data
  double dot(const Tensor& o) const; // flattened dot product, shapes must match
};

/// "[m x n]" style shape rendering for error messages.
std::string shape_str(const std::vector<int64_t>& shape);

/// Deterministic RNG used everywhere in place of std:: distributions so that
/// results are reproducible independent of the standard library build.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64();
  double uniform();                    // [0, 1)
  double uniform(double a, double b);  // [a, b)
  double normal();                     // standard normal, Box-Muller
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

  /// Stable way to derive independent sub-streams from structured positions
  /// (seed, epoch, step, ...) without correlating them.
  static uint64_t mix(std::initializer_list<uint64_t> parts);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor random_uniform(Rng& rng, const std::vector<int64_t>& shape, double lo, double hi);
Tensor random_normal(Rng& rng, const std::vector<int64_t>& shape);

}  // namespace biacl
