#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace slotalign {

/// Dense row-major matrix. Rows are the time/sequence axis throughout the
/// library. The product kernels below compute output row p from input row p
/// with an accumulation order that depends only on the operand shapes, so
/// changing the values of other rows never changes row p.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols, T fill = T(0)) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, fill);
  }

  Matrix transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  // Aligned to the widest SIMD packet so vectorised loops peel the same way
  // for a given shape wherever the buffer lands.
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

namespace kernels {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

// out (+)= a * b   where a is [m x k], b is [k x n].
template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  assert(a.cols() == b.rows());
  if (!accumulate) out.resize(a.rows(), b.cols());
  view(out).noalias() += view(a) * view(b);
}

// out (+)= a^T * b   where a is [m x k], b is [m x n]; result [k x n].
template <typename T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  assert(a.rows() == b.rows());
  if (!accumulate) out.resize(a.cols(), b.cols());
  view(out).noalias() += view(a).transpose() * view(b);
}

// out (+)= a * b^T   where a is [m x k], b is [n x k]; result [m x n].
template <typename T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  assert(a.cols() == b.cols());
  if (!accumulate) out.resize(a.rows(), b.rows());
  view(out).noalias() += view(a) * view(b).transpose();
}

// Row-exact variants: coefficient-based products whose inner loop runs
// sequentially over k, so row i of the result is bitwise independent of how
// many other rows there are. Slower than the blocked GEMM above.
template <typename T>
void matmul_rowwise(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  assert(a.cols() == b.rows());
  if (!accumulate) out.resize(a.rows(), b.cols());
  view(out).noalias() += view(a).lazyProduct(view(b));
}

template <typename T>
void matmul_nt_rowwise(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  assert(a.cols() == b.cols());
  if (!accumulate) out.resize(a.rows(), b.rows());
  const RowMajor<T> bt = view(b).transpose();
  view(out).noalias() += view(a).lazyProduct(bt);
}

}  // namespace kernels
}  // namespace slotalign
