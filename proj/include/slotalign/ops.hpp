#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/matrix.hpp"
#include "slotalign/nn.hpp"

namespace slotalign::nn {

namespace detail {

// dst = src[:, begin:begin+count]
template <typename T>
void copy_cols(const Matrix<T>& src, std::size_t begin, std::size_t count, Matrix<T>& dst) {
  dst.resize(src.rows(), count);
  for (std::size_t r = 0; r < src.rows(); ++r)
    std::copy_n(src.data() + r * src.cols() + begin, count, dst.data() + r * count);
}

// dst[:, begin:begin+src.cols()] += src
template <typename T>
void add_cols(const Matrix<T>& src, std::size_t begin, Matrix<T>& dst) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const T* a = src.data() + r * src.cols();
    T* b = dst.data() + r * dst.cols() + begin;
    for (std::size_t c = 0; c < src.cols(); ++c) b[c] += a[c];
  }
}

}  // namespace detail

/// y = x W + b with W [in x out] and b [1 x out]. Off the recording tape
/// the row-exact kernel is used, so inference output rows do not depend on
/// how many rows follow them.
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const Matrix<T>& X = t.value(x);
  const Matrix<T>& W = t.value(w);
  if (X.cols() != W.rows() || t.value(b).cols() != W.cols())
    throw Error(ErrorKind::kNumeric, "linear: shape mismatch");
  Matrix<T> y(X.rows(), W.cols());
  const auto bias = t.value(b).row(0);
  for (std::size_t r = 0; r < y.rows(); ++r) std::copy(bias.begin(), bias.end(), y.row(r).begin());
  if (t.recording())
    kernels::matmul(X, W, y, /*accumulate=*/true);
  else
    kernels::matmul_rowwise(X, W, y, /*accumulate=*/true);
  return t.push(std::move(y), [x, w, b](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    kernels::matmul_nt(dy, tp.value(w), tp.grad(x), true);
    kernels::matmul_tn(tp.value(x), dy, tp.grad(w), true);
    auto db = tp.grad(b).row(0);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const auto row = dy.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
    }
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Matrix<T>& A = t.value(a);
  const Matrix<T>& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw Error(ErrorKind::kNumeric, "add: shape mismatch");
  Matrix<T> y = A;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += B.data()[i];
  return t.push(std::move(y), [a, b](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    for (Var in : {a, b}) {
      Matrix<T>& g = tp.grad(in);
      for (std::size_t i = 0; i < dy.size(); ++i) g.data()[i] += dy.data()[i];
    }
  });
}

/// Rows `table[ids[i]]`.
template <typename T>
Var embedding(Tape<T>& t, Var table, std::vector<std::int32_t> ids) {
  const Matrix<T>& E = t.value(table);
  Matrix<T> y(ids.size(), E.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows())
      throw Error(ErrorKind::kNumeric, "embedding: id out of range");
    const auto src = E.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), y.row(i).begin());
  }
  return t.push(std::move(y), [table, ids = std::move(ids)](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& g = tp.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = g.row(static_cast<std::size_t>(ids[i]));
      const auto src = dy.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

/// First `count` rows of `table`, i.e. absolute position embeddings.
template <typename T>
Var leading_rows(Tape<T>& t, Var table, std::size_t count) {
  const Matrix<T>& E = t.value(table);
  if (count > E.rows()) throw Error(ErrorKind::kCapacity, "sequence longer than position table");
  Matrix<T> y(count, E.cols());
  std::copy(E.data(), E.data() + count * E.cols(), y.data());
  return t.push(std::move(y), [table](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& g = tp.grad(table);
    for (std::size_t i = 0; i < dy.size(); ++i) g.data()[i] += dy.data()[i];
  });
}

/// Stacks `a` on top of `b`.
template <typename T>
Var vstack(Tape<T>& t, Var a, Var b) {
  const Matrix<T>& A = t.value(a);
  const Matrix<T>& B = t.value(b);
  if (A.cols() != B.cols()) throw Error(ErrorKind::kNumeric, "vstack: column mismatch");
  Matrix<T> y(A.rows() + B.rows(), A.cols());
  std::copy(A.data(), A.data() + A.size(), y.data());
  std::copy(B.data(), B.data() + B.size(), y.data() + A.size());
  const std::size_t split = A.size();
  return t.push(std::move(y), [a, b, split](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& ga = tp.grad(a);
    Matrix<T>& gb = tp.grad(b);
    for (std::size_t i = 0; i < split; ++i) ga.data()[i] += dy.data()[i];
    for (std::size_t i = split; i < dy.size(); ++i) gb.data()[i - split] += dy.data()[i];
  });
}

/// Rows [begin, begin + count).
template <typename T>
Var slice_rows(Tape<T>& t, Var x, std::size_t begin, std::size_t count) {
  const Matrix<T>& X = t.value(x);
  if (begin + count > X.rows()) throw Error(ErrorKind::kNumeric, "slice_rows: out of range");
  Matrix<T> y(count, X.cols());
  std::copy(X.data() + begin * X.cols(), X.data() + (begin + count) * X.cols(), y.data());
  return t.push(std::move(y), [x, begin](Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& g = tp.grad(x);
    T* dst = g.data() + begin * g.cols();
    for (std::size_t i = 0; i < dy.size(); ++i) dst[i] += dy.data()[i];
  });
}

/// Row-wise layer normalization with affine gain/bias ([1 x d] each).
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5)) {
  const Matrix<T>& X = t.value(x);
  const std::size_t n = X.rows(), d = X.cols();
  Matrix<T> xhat(n, d), y(n, d);
  std::vector<T> rstd(n);
  const auto g = t.value(gain).row(0);
  const auto b = t.value(bias).row(0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = X.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= static_cast<T>(d);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mean) * rstd[r];
      y(r, c) = xhat(r, c) * g[c] + b[c];
    }
  }
  return t.push(std::move(y), [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](
                                  Tape<T>& tp, Var self) {
    const Matrix<T>& dy = tp.grad(self);
    const auto g = tp.value(gain).row(0);
    auto dg = tp.grad(gain).row(0);
    auto db = tp.grad(bias).row(0);
    Matrix<T>& dx = tp.grad(x);
    const std::size_t d = dy.cols();
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      T sum = 0, sum_xhat = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dg[c] += dy(r, c) * xhat(r, c);
        db[c] += dy(r, c);
        dxhat[c] = dy(r, c) * g[c];
        sum += dxhat[c];
        sum_xhat += dxhat[c] * xhat(r, c);
      }
      const T inv_d = T(1) / static_cast<T>(d);
      for (std::size_t c = 0; c < d; ++c)
        dx(r, c) += rstd[r] * (dxhat[c] - inv_d * sum - xhat(r, c) * inv_d * sum_xhat);
    }
  });
}

/// tanh-approximated GELU. The recording path uses Eigen's vectorised tanh;
/// inference keeps the scalar one so each element is computed the same way
/// wherever it sits in the matrix.
template <typename T>
Var gelu(Tape<T>& t, Var x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  const Matrix<T>& X = t.value(x);
  Matrix<T> y(X.rows(), X.cols());
  if (!t.recording()) {
    for (std::size_t i = 0; i < X.size(); ++i) {
      const T v = X.data()[i];
      y.data()[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
    }
    return t.push(std::move(y));
  }
  const auto xa = kernels::view(X).array();
  kernels::view(y).array() = T(0.5) * xa * (T(1) + (kC * (xa + kA * xa.cube())).tanh());
  return t.push(std::move(y), [x](Tape<T>& tp, Var self) {
    const auto xa = kernels::view(tp.value(x)).array();
    const auto dy = kernels::view(tp.grad(self)).array();
    const auto th = (kC * (xa + kA * xa.cube())).tanh().eval();
    kernels::view(tp.grad(x)).array() +=
        dy * (T(0.5) * (T(1) + th) + T(0.5) * xa * (T(1) - th.square()) * kC * (T(1) + T(3) * kA * xa.square()));
  });
}

/// Multi-head scaled dot-product attention over a fused [T x 3d] QKV input.
/// With `causal`, position i attends to positions 0..i only, so row i of the
/// output depends on rows 0..i of the input alone. `slopes` (one per head,
/// or empty) subtracts slope*|i-j| from the scores.
template <typename T>
Var attention(Tape<T>& t, Var qkv, std::size_t n_heads, bool causal,
              const std::vector<T>& slopes = {}) {
  if (!slopes.empty() && slopes.size() != n_heads)
    throw Error(ErrorKind::kNumeric, "attention: one slope per head required");
  const Matrix<T>& QKV = t.value(qkv);
  const std::size_t n = QKV.rows();
  if (QKV.cols() % (3 * n_heads) != 0) throw Error(ErrorKind::kNumeric, "attention: bad width");
  const std::size_t d = QKV.cols() / 3, hd = d / n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  // Inference uses the row-exact kernels (see linear).
  const bool exact = !t.recording();

  // probs[h] is [n x n]; entries above the diagonal are zero when causal.
  auto probs = std::make_shared<std::vector<Matrix<T>>>(n_heads);
  Matrix<T> y(n, d), q, k, v, yh;
  for (std::size_t h = 0; h < n_heads; ++h) {
    detail::copy_cols(QKV, h * hd, hd, q);
    detail::copy_cols(QKV, d + h * hd, hd, k);
    detail::copy_cols(QKV, 2 * d + h * hd, hd, v);
    Matrix<T>& P = (*probs)[h];
    if (exact)
      kernels::matmul_nt_rowwise(q, k, P);
    else
      kernels::matmul_nt(q, k, P);
    const T slope = slopes.empty() ? T(0) : slopes[h];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = causal ? i + 1 : n;
      T* s = P.data() + i * n;
      if (exact) {
        for (std::size_t j = 0; j < len; ++j) {
          s[j] *= scale;
          if (slope != T(0)) s[j] -= slope * static_cast<T>(i > j ? i - j : j - i);
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, s[j]);
        T sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
          s[j] = std::exp(s[j] - mx);
          sum += s[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < len; ++j) s[j] *= inv;
      } else {
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> row(s, static_cast<Eigen::Index>(len));
        row *= scale;
        if (slope != T(0))
          row -= slope * (Eigen::Array<T, Eigen::Dynamic, 1>::LinSpaced(row.size(), T(0), static_cast<T>(len - 1)) -
                          static_cast<T>(i))
                             .abs();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      std::fill(s + len, s + n, T(0));
    }
    if (exact)
      kernels::matmul_rowwise(P, v, yh);
    else
      kernels::matmul(P, v, yh);
    detail::add_cols(yh, h * hd, y);
  }
  if (!t.recording()) return t.push(std::move(y));
  return t.push(std::move(y), [qkv, n_heads, probs, scale, hd, d](Tape<T>& tp, Var self) {
    const Matrix<T>& QKV = tp.value(qkv);
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& dqkv = tp.grad(qkv);
    Matrix<T> q, k, v, dyh, dp, dq, dk, dv;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Matrix<T>& P = (*probs)[h];
      detail::copy_cols(QKV, h * hd, hd, q);
      detail::copy_cols(QKV, d + h * hd, hd, k);
      detail::copy_cols(QKV, 2 * d + h * hd, hd, v);
      detail::copy_cols(dy, h * hd, hd, dyh);
      kernels::matmul_nt(dyh, v, dp);
      {
        const auto pa = kernels::view(P).array();
        auto ga = kernels::view(dp).array();
        const auto dot = (pa * ga).rowwise().sum().eval();
        ga = pa * (ga.colwise() - dot) * scale;
      }
      kernels::matmul(dp, k, dq);
      kernels::matmul_tn(dp, q, dk);
      kernels::matmul_tn(P, dyh, dv);
      detail::add_cols(dq, h * hd, dqkv);
      detail::add_cols(dk, d + h * hd, dqkv);
      detail::add_cols(dv, 2 * d + h * hd, dqkv);
    }
  });
}

/// Mean over labelled rows of -log softmax(logits[r])[labels[r]]; rows whose
/// label is negative are ignored and receive zero gradient. Throws
/// kEmptyLoss when every row is ignored.
template <typename T>
Var masked_cross_entropy(Tape<T>& t, Var logits, std::vector<std::int32_t> labels) {
  const Matrix<T>& Z = t.value(logits);
  if (labels.size() != Z.rows()) throw Error(ErrorKind::kNumeric, "cross entropy: label count mismatch");
  const std::size_t c = Z.cols();
  std::size_t count = 0;
  T total = 0;
  Matrix<T> probs(Z.rows(), c);
  for (std::size_t r = 0; r < Z.rows(); ++r) {
    if (labels[r] < 0) continue;
    if (static_cast<std::size_t>(labels[r]) >= c) throw Error(ErrorKind::kNumeric, "cross entropy: label out of range");
    const auto z = kernels::view(Z).row(static_cast<Eigen::Index>(r)).array();
    auto pr = kernels::view(probs).row(static_cast<Eigen::Index>(r)).array();
    const T mx = z.maxCoeff();
    pr = (z - mx).exp();
    const T sum = pr.sum();
    pr /= sum;
    total += (mx + std::log(sum)) - Z(r, static_cast<std::size_t>(labels[r]));
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::kEmptyLoss, "no labelled positions");
  Matrix<T> loss(1, 1, total / static_cast<T>(count));
  return t.push(std::move(loss), [logits, labels = std::move(labels), probs = std::move(probs), count](
                                     Tape<T>& tp, Var self) {
    const T scale = tp.grad(self)(0, 0) / static_cast<T>(count);
    Matrix<T>& dz = tp.grad(logits);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] < 0) continue;
      auto g = dz.row(r);
      const auto p = probs.row(r);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * p[k];
      g[static_cast<std::size_t>(labels[r])] -= scale;
    }
  });
}

/// Row-wise log-softmax.
template <typename T>
Var log_softmax(Tape<T>& t, Var x) {
  const Matrix<T>& X = t.value(x);
  Matrix<T> y(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto z = X.row(r);
    const T mx = *std::max_element(z.begin(), z.end());
    T sum = 0;
    for (T v : z) sum += std::exp(v - mx);
    const T lse = mx + std::log(sum);
    auto out = y.row(r);
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - lse;
  }
  return t.push(std::move(y), [x](Tape<T>& tp, Var self) {
    const Matrix<T>& Y = tp.value(self);
    const Matrix<T>& dy = tp.grad(self);
    Matrix<T>& dx = tp.grad(x);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      T sum = 0;
      for (std::size_t k = 0; k < Y.cols(); ++k) sum += dy(r, k);
      for (std::size_t k = 0; k < Y.cols(); ++k) dx(r, k) += dy(r, k) - std::exp(Y(r, k)) * sum;
    }
  });
}

/// Mean of a list of scalar nodes.
template <typename T>
Var mean_of(Tape<T>& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw Error(ErrorKind::kEmptyLoss, "mean of nothing");
  T sum = 0;
  for (Var v : xs) sum += t.value(v)(0, 0);
  const T inv = T(1) / static_cast<T>(xs.size());
  return t.push(Matrix<T>(1, 1, sum * inv), [xs, inv](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)(0, 0) * inv;
    for (Var v : xs) tp.grad(v)(0, 0) += g;
  });
}

}  // namespace slotalign::nn
