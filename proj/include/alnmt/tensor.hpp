#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace alnmt {

/// Raised when an operation receives arguments that violate its shape or
/// argument contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense row-major tensor. Most of the library works with rank-2 tensors;
/// vectors are 1 x n and scalars 1 x 1.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : shape_{rows, cols}, data_(rows * cols, fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<T> values);

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor scalar(T v) { return Tensor(1, 1, v); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Kernels shared by the differentiable ops and the inference fast path. All
// operate on rank-2 tensors.
namespace kernels {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
/// Adds `src` into `dst` in place.
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src);
template <typename T>
void softmax_rows(Tensor<T>& x);
template <typename T>
void log_softmax_rows(Tensor<T>& x);

/// Row-wise normalization without the affine part. Fills `inv_std` with
/// one entry per row when non-null.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps, std::vector<T>* inv_std = nullptr);

}  // namespace kernels

/// Most-negative finite value; used in place of -inf for masked logits.
template <typename T>
constexpr T masked_logit() {
  return std::numeric_limits<T>::lowest();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace alnmt
