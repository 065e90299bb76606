#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace padrec {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of 64-bit floats.
///
/// Any rank is storable (checkpoints carry arbitrary shapes); the autograd
/// operators view rank <= 2 tensors as matrices, with a rank-1 tensor of
/// length n acting as a 1 x n row and a scalar as 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Matrix view (see class comment).
  std::size_t rows() const {
    if (shape_.size() > 2) no_matrix_view();
    return shape_.size() == 2 ? shape_[0] : 1;
  }
  std::size_t cols() const {
    if (shape_.empty()) return 1;
    if (shape_.size() > 2) no_matrix_view();
    return shape_.back();
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  double item() const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  [[noreturn]] void no_matrix_view() const;

  Shape shape_;
  std::vector<double> values_;
};

/// FNV-1a over the raw bytes of shape and values; used to prove frozen
/// tables are untouched.
std::uint64_t checksum(const Tensor& t);

/// A named, persistent leaf owned by a model. `trainable == false` means the
/// optimizer never writes it; gradients may still be recorded for inspection.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool weight_decay = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true, bool decay = true)
      : name(std::move(n)), value(std::move(v)), trainable(train), weight_decay(decay) {}

  void zero_grad() { grad = Tensor::zeros_like(value); }
};

void zero_grads(std::span<Parameter* const> params);

}  // namespace padrec
