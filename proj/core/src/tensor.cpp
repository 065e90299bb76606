#include "padrec/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace padrec {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

void Tensor::no_matrix_view() const {
  throw std::invalid_argument("tensor: rank " + std::to_string(shape_.size()) + " has no matrix view");
}

double Tensor::item() const {
  if (values_.size() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_string(shape_));
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t d : t.shape()) {
    const std::uint64_t d64 = d;
    mix(&d64, sizeof d64);
  }
  mix(t.data(), t.size() * sizeof(double));
  return h;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace padrec
