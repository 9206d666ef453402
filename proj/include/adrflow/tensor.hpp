#ifndef ADRFLOW_TENSOR_HPP
#define ADRFLOW_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adrflow {

using Real = double;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Dimensions of a dense row-major tensor.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::size_t numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                           std::multiplies<>());
  }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::string out = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(dims_[i]);
    }
    return out + "]";
  }

 private:
  std::vector<std::size_t> dims_;
};

/// Dense tensor of 64-bit reals.
///
/// A rank-4 tensor laid out as [batch][channel][row][col] is a grid field;
/// parameters (matrices, kernels, per-channel vectors) use the same type with
/// their natural rank.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0)
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& vec() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_.str());
    }
    return data_[0];
  }

  // Grid-field accessors; valid for rank-4 tensors only.
  std::size_t batch() const { return shape_[0]; }
  std::size_t channels() const { return shape_[1]; }
  std::size_t height() const { return shape_[2]; }
  std::size_t width() const { return shape_[3]; }
  std::size_t plane() const { return shape_[2] * shape_[3]; }

  Real& at(std::size_t n, std::size_t c, std::size_t r, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + r) * shape_[3] + w];
  }
  Real at(std::size_t n, std::size_t c, std::size_t r, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + r) * shape_[3] + w];
  }

  /// Contiguous H*W plane of sample n, channel c.
  std::span<Real> plane(std::size_t n, std::size_t c) {
    return std::span<Real>(data_).subspan((n * shape_[1] + c) * plane(), plane());
  }
  std::span<const Real> plane(std::size_t n, std::size_t c) const {
    return std::span<const Real>(data_).subspan((n * shape_[1] + c) * plane(),
                                                plane());
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }
  Tensor reshaped(Shape shape) && {
    if (shape.numel() != data_.size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](Real v) { return std::isfinite(v); });
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Rank-4 [batch][channel][row][col] field.
using GridField = Tensor;

inline Tensor grid(std::size_t batch, std::size_t channels, std::size_t height,
                   std::size_t width, Real fill = 0) {
  return Tensor(Shape{batch, channels, height, width}, fill);
}

inline void require_grid(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected a rank-4 grid field, got " +
                     t.shape().str());
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

inline Real dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Real sum(const Tensor& a) {
  Real s = 0;
  for (Real v : a.data()) s += v;
  return s;
}

inline Real max_abs(const Tensor& a) {
  Real m = 0;
  for (Real v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Concatenate rank-4 fields along the channel axis.
inline Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  require_grid(first, "concat_channels");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    require_grid(p, "concat_channels");
    if (p.batch() != first.batch() || p.height() != first.height() ||
        p.width() != first.width()) {
      throw ShapeError("concat_channels: shape mismatch " + first.shape().str() +
                       " vs " + p.shape().str());
    }
    channels += p.channels();
  }
  Tensor out = grid(first.batch(), channels, first.height(), first.width());
  for (std::size_t n = 0; n < first.batch(); ++n) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      for (std::size_t c = 0; c < p.channels(); ++c) {
        auto src = p.plane(n, c);
        std::copy(src.begin(), src.end(), out.plane(n, offset + c).begin());
      }
      offset += p.channels();
    }
  }
  return out;
}

/// Stack equally-shaped rank-4 fields along the batch axis.
inline Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  const Tensor& first = parts.front();
  require_grid(first, "concat_batch");
  std::size_t batch = 0;
  for (const Tensor& p : parts) {
    require_grid(p, "concat_batch");
    if (p.channels() != first.channels() || p.height() != first.height() ||
        p.width() != first.width()) {
      throw ShapeError("concat_batch: shape mismatch " + first.shape().str() +
                       " vs " + p.shape().str());
    }
    batch += p.batch();
  }
  Tensor out = grid(batch, first.channels(), first.height(), first.width());
  auto dst = out.data().begin();
  for (const Tensor& p : parts) dst = std::copy(p.data().begin(), p.data().end(), dst);
  return out;
}

/// Sample n of a batched field, as a batch-1 field.
inline Tensor batch_item(const Tensor& t, std::size_t n) {
  require_grid(t, "batch_item");
  const std::size_t len = t.channels() * t.plane();
  Tensor out = grid(1, t.channels(), t.height(), t.width());
  std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(n * len), len,
              out.data().begin());
  return out;
}

}  // namespace adrflow

#endif  // ADRFLOW_TENSOR_HPP
