#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace latentseg {

// Dense 4D array in NHWC order (channel fastest). All maps exchanged between
// modules use this layout: (batch, height, width, channel).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int h, int w, int c)
      : n_(n), h_(h), w_(w), c_(c),
        data_(static_cast<std::size_t>(n) * h * w * c, T(0)) {}

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int c() const { return c_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator()(int n, int h, int w, int c) {
    return data_[((static_cast<std::size_t>(n) * h_ + h) * w_ + w) * c_ + c];
  }
  const T& operator()(int n, int h, int w, int c) const {
    return data_[((static_cast<std::size_t>(n) * h_ + h) * w_ + w) * c_ + c];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n_) + "," + std::to_string(h_) + "," +
           std::to_string(w_) + "," + std::to_string(c_) + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, h_, w_, c_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<T> data_;
};

}  // namespace latentseg
