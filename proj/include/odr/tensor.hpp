#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace odr {

/// Dense n-d array of doubles with row-major layout. Shapes are small
/// (images, conv weights), so no view machinery; everything is a value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    v_.assign(n, 0.0);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return v_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  // 3-d accessors (channels, height, width)
  int c() const { return dim(0); }
  int h() const { return dim(1); }
  int w() const { return dim(2); }
  double& at(int ch, int y, int x) { return v_[idx3(ch, y, x)]; }
  double at(int ch, int y, int x) const { return v_[idx3(ch, y, x)]; }

  // 4-d accessor (out-channels, in-channels, ky, kx)
  double& at4(int o, int i, int ky, int kx) {
    return v_[((static_cast<std::size_t>(o) * dim(1) + i) * dim(2) + ky) * dim(3) + kx];
  }
  double at4(int o, int i, int ky, int kx) const {
    return v_[((static_cast<std::size_t>(o) * dim(1) + i) * dim(2) + ky) * dim(3) + kx];
  }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& x : v_) x *= s;
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : v_) m = std::max(m, std::fabs(x));
    return m;
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

 private:
  int dim(std::size_t i) const {
    if (i >= shape_.size()) throw std::out_of_range("Tensor: rank too small");
    return shape_[i];
  }
  std::size_t idx3(int ch, int y, int x) const {
    return (static_cast<std::size_t>(ch) * dim(1) + y) * dim(2) + x;
  }
  void check_same(const Tensor& o) const {
    if (!same_shape(o))
      throw std::invalid_argument("Tensor: shape mismatch " + shape_str() + " vs " + o.shape_str());
  }

  std::vector<int> shape_;
  std::vector<double> v_;
};

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Deterministic RNG with hierarchical seed derivation. Distributions are
/// implemented by hand so streams do not depend on libstdc++ internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return splitmix(state_);
  }

  double uniform() {  // [0,1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
    if (hi < lo) throw std::invalid_argument("Rng: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() {
    // Box-Muller; one draw discarded for simplicity of state handling.
    double u1 = std::max(uniform(), 1e-300);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Independent child stream, stable under reordering of other draws.
  Rng derive(std::uint64_t salt) const { return Rng(splitmix(state_ ^ splitmix(salt))); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

}  // namespace odr
