#include "alnmt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace alnmt {

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size()) {
    throw ContractError("tensor value count " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<T> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ContractError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMat<T>> view(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
template <typename T>
Eigen::Map<RowMat<T>> view(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require(bool ok, const char* what, const std::vector<std::size_t>& a,
             const std::vector<std::size_t>& b) {
  if (!ok) throw ContractError(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.rows(), "matmul shape mismatch", a.shape(), b.shape());
  Tensor<T> out(a.rows(), b.cols());
  if (a.cols() != 0) view(out).noalias() = view(a) * view(b);
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt shape mismatch", a.shape(), b.shape());
  Tensor<T> out(a.rows(), b.rows());
  if (a.cols() != 0) view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rows() == b.rows(), "matmul_tn shape mismatch", a.shape(), b.shape());
  Tensor<T> out(a.cols(), b.cols());
  if (a.rows() != 0) view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.size() == src.size(), "accumulate size mismatch", dst.shape(), src.shape());
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void softmax_rows(Tensor<T>& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

template <typename T>
void log_softmax_rows(Tensor<T>& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (auto v : row) sum += std::exp(v - mx);
    const T lse = mx + std::log(sum);
    for (auto& v : row) v -= lse;
  }
}

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps, std::vector<T>* inv_std) {
  Tensor<T> out(x.rows(), x.cols());
  if (inv_std) inv_std->assign(x.rows(), T(0));
  const T n = static_cast<T>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T mean = 0;
    for (auto v : in) mean += v;
    mean /= n;
    T var = 0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= n;
    const T is = T(1) / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = (in[c] - mean) * is;
    if (inv_std) (*inv_std)[r] = is;
  }
  return out;
}

#define ALNMT_INSTANTIATE_KERNELS(T)                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> transpose(const Tensor<T>&);                              \
  template void accumulate(Tensor<T>&, const Tensor<T>&);                      \
  template void softmax_rows(Tensor<T>&);                                      \
  template void log_softmax_rows(Tensor<T>&);                                  \
  template Tensor<T> normalize_rows(const Tensor<T>&, T, std::vector<T>*);

ALNMT_INSTANTIATE_KERNELS(float)
ALNMT_INSTANTIATE_KERNELS(double)
#undef ALNMT_INSTANTIATE_KERNELS

}  // namespace kernels

template class Tensor<float>;
template class Tensor<double>;

}  // namespace alnmt
