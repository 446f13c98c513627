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

namespace ivd {

// Dense rank-1..4 tensor, N,C,H,W layout, contiguous row-major storage.
// float for the runtime path, double for reference/gradient-check builds.
template <class T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(numel_(), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<std::size_t>(numel_()) != data_.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape product " + std::to_string(numel_()));
    }
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  long long numel() const { return numel_(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](long long i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](long long i) const { return data_[static_cast<std::size_t>(i)]; }

  // Rank-4 accessors (N,C,H,W).
  T& at(int n, int c, int h, int w) { return data_[static_cast<std::size_t>(index4(n, c, h, w))]; }
  const T& at(int n, int c, int h, int w) const {
    return data_[static_cast<std::size_t>(index4(n, c, h, w))];
  }

  long long index4(int n, int c, int h, int w) const {
    return ((static_cast<long long>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  // Rank-2 accessors.
  T& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

  template <class U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

 private:
  long long numel_() const {
    long long n = 1;
    for (int d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
  }

  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw std::invalid_argument("tensor rank must be 1..4, got " +
                                  std::to_string(shape_.size()));
    }
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] < 1) {
        throw std::invalid_argument("tensor extent " + std::to_string(i) +
                                    " must be >= 1, got " + std::to_string(shape_[i]));
      }
    }
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Seeded RNG with pinned transforms so identical seeds reproduce identical
// streams on any platform (std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform() {  // [0,1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two uniforms per pair, caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift; bias is negligible for n << 2^64 and keeps the stream
    // consumption fixed at one draw.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  Rng fork(std::uint64_t stream) {
    // Derive an independent child stream; avoids correlated seeds.
    std::uint64_t s = gen_() ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    return Rng(s);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

template <class T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo, double hi) {
  for (long long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <class T>
void fill_normal(TensorT<T>& t, Rng& rng, double stddev) {
  for (long long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
}

}  // namespace ivd
