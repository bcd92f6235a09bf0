#include "crcfp/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace crcfp {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(h) + "x" +
         std::to_string(w) + "x" + std::to_string(c) + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.h < 0 || shape.w < 0 || shape.c < 0) {
    throw Error("negative tensor dimension " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw Error("tensor value count does not match shape " + shape.str());
  }
}

Tensor Tensor::item(int b) const {
  if (b < 0 || b >= shape_.n) throw Error("batch index out of range");
  Shape s{1, shape_.h, shape_.w, shape_.c};
  const std::size_t stride = s.numel();
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(b * stride),
                        data_.begin() + static_cast<std::ptrdiff_t>((b + 1) * stride));
  return Tensor(s, std::move(v));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw Error("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(other.shape_ == shape_)) {
    throw Error("shape mismatch in += " + shape_.str() + " vs " + other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) return {};
  const Shape first = items.front().shape();
  Shape out{0, first.h, first.w, first.c};
  std::vector<double> values;
  for (const Tensor& t : items) {
    if (t.h() != first.h || t.w() != first.w || t.c() != first.c) {
      throw Error("stack_batch: inconsistent shapes " + first.str() + " vs " +
                  t.shape().str());
    }
    out.n += t.n();
    values.insert(values.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(out, std::move(values));
}

LabelMap stack_labels(std::span<const LabelMap> items) {
  LabelMap out;
  if (items.empty()) return out;
  out.h = items.front().h;
  out.w = items.front().w;
  for (const LabelMap& m : items) {
    if (m.h != out.h || m.w != out.w) throw Error("stack_labels: inconsistent shapes");
    out.n += m.n;
    out.labels.insert(out.labels.end(), m.labels.begin(), m.labels.end());
  }
  return out;
}

}  // namespace crcfp
