#include "biacl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace biacl {

static int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(const std::vector<int64_t>& shape) {
  Tensor t;
  t.shape = shape;
  t.data.assign(static_cast<size_t>(checked_numel(shape)), 0.0);
  return t;
}

Tensor Tensor::full(const std::vector<int64_t>& shape, double v) {
  Tensor t = zeros(shape);
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::row(std::vector<double> d) {
  Tensor t;
  t.shape = {static_cast<int64_t>(d.size())};
  t.data = std::move(d);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::l2() const {
  double s = 0.0;
  for (double x : data) s += x * x;
  return std::sqrt(s);
}

double Tensor::dot(const Tensor& o) const {
  if (!same_shape(o))
    throw std::invalid_argument("dot: shape mismatch " + shape_str(shape) + " vs " + shape_str(o.shape));
  double s = 0.0;
  for (size_t i = 0; i < data.size(); ++i) s += data[i] * o.data[i];
  return s;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// xorshift-star step over a splitmix-seeded state; fully pinned so results do
// not depend on the standard library's distribution implementations.
uint64_t Rng::next_u64() {
  // splitmix64
  state_ += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double th = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // modulo with rejection to avoid bias
  uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t x = 0;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % span);
}

uint64_t Rng::mix(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (uint64_t p : parts) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
  }
  return h;
}

Tensor random_uniform(Rng& rng, const std::vector<int64_t>& shape, double lo, double hi) {
  Tensor t = Tensor::zeros(shape);
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(Rng& rng, const std::vector<int64_t>& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& x : t.data) x = rng.normal();
  return t;
}

}  // namespace biacl
