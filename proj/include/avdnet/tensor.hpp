#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace avdnet {

/// Dense row-major tensor (widths fastest). Rank 1..4; the carrier for
/// images, feature maps, parameters and gradients.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
      if (e == 0) throw std::invalid_argument("tensor extent must be positive");
    }
    data_.assign(numel_of(shape_), T(0));
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // rank-3 (c, h, w) access
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  // rank-4 (b, c, h, w) access
  T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void fill(T v) { data_.assign(data_.size(), v); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

  /// View a rank-4 (b,c,h,w) tensor's image b as a rank-3 copy.
  Tensor slice_batch(std::size_t b) const {
    if (rank() != 4) throw std::invalid_argument("slice_batch requires rank-4 tensor");
    Tensor out({shape_[1], shape_[2], shape_[3]});
    const std::size_t n = out.numel();
    const T* src = data_.data() + b * n;
    std::copy(src, src + n, out.data());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

 private:
  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t(1), std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

}  // namespace avdnet
