#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crcfp {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Four-dimensional shape in batch, height, width, channel order.
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NHWC tensor of doubles. Images, feature maps, projection maps,
/// probability maps and parameters all share this representation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  int c() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) *
               shape_.c +
           ch;
  }
  double& at(int n, int y, int x, int ch) { return data_[index(n, y, x, ch)]; }
  double at(int n, int y, int x, int ch) const {
    return data_[index(n, y, x, ch)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the channel vector of one pixel.
  double* pixel(int n, int y, int x) { return data_.data() + index(n, y, x, 0); }
  const double* pixel(int n, int y, int x) const {
    return data_.data() + index(n, y, x, 0);
  }

  /// Copy of batch item `b` as a batch of one.
  Tensor item(int b) const;
  /// Reinterprets the storage with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Stacks equally shaped tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

/// Per-pixel integer labels for a batch, row-major N x H x W.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, int fill = 0)
      : n(n_), h(h_), w(w_), labels(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  std::size_t index(int b, int y, int x) const {
    return (static_cast<std::size_t>(b) * h + y) * w + x;
  }
  int& at(int b, int y, int x) { return labels[index(b, y, x)]; }
  int at(int b, int y, int x) const { return labels[index(b, y, x)]; }
  std::size_t size() const { return labels.size(); }
};

LabelMap stack_labels(std::span<const LabelMap> items);

}  // namespace crcfp
