#pragma once

// Numerically stable scalar kernels shared by the tape primitives and the oracles.

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "lebm/error.hpp"
#include "lebm/types.hpp"

namespace lebm {

namespace detail {

template <typename Derived>
void require_finite_nonempty(const Eigen::DenseBase<Derived>& v, const char* what) {
  if (v.size() == 0) throw Error(ErrorCode::InvalidShape, std::string(what) + ": empty input");
  if (!v.allFinite()) throw Error(ErrorCode::NonFiniteInput, std::string(what) + ": non-finite entry");
}

// Shared scalar loops: every logsumexp/softmax in the library reduces in the
// same order, so row-wise and single-vector results agree bit for bit.
template <typename T>
T logsumexp_strided(const T* p, Eigen::Index n, Eigen::Index stride) {
  T shift = p[0];
  for (Eigen::Index i = 1; i < n; ++i) shift = std::max(shift, p[i * stride]);
  T acc = 0;
  for (Eigen::Index i = 0; i < n; ++i) acc += std::exp(p[i * stride] - shift);
  return shift + std::log(acc);
}

template <typename T>
void softmax_strided(const T* p, Eigen::Index n, Eigen::Index stride, T* out, Eigen::Index out_stride) {
  T shift = p[0];
  for (Eigen::Index i = 1; i < n; ++i) shift = std::max(shift, p[i * stride]);
  T acc = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T e = std::exp(p[i * stride] - shift);
    out[i * out_stride] = e;
    acc += e;
  }
  for (Eigen::Index i = 0; i < n; ++i) out[i * out_stride] /= acc;
}

}  // namespace detail

/// log(sum(exp(v))) with max-shift; no intermediate overflows.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& v) {
  detail::require_finite_nonempty(v, "logsumexp");
  using T = typename Derived::Scalar;
  const VectorX<T> x = v.reshaped();
  return detail::logsumexp_strided(x.data(), x.size(), 1);
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  detail::require_finite_nonempty(v, "softmax");
  using T = typename Derived::Scalar;
  const VectorX<T> x = v.reshaped();
  VectorX<T> out(x.size());
  detail::softmax_strided(x.data(), x.size(), 1, out.data(), 1);
  return out;
}

/// Row-wise logsumexp of a (batch x K) matrix.
template <typename Derived>
VectorX<typename Derived::Scalar> rowwise_logsumexp(const Eigen::MatrixBase<Derived>& m) {
  detail::require_finite_nonempty(m, "rowwise_logsumexp");
  using T = typename Derived::Scalar;
  const MatrixX<T> x = m;
  VectorX<T> out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out(r) = detail::logsumexp_strided(x.data() + r, x.cols(), x.rows());
  return out;
}

/// Row-wise softmax of a (batch x K) matrix.
template <typename Derived>
MatrixX<typename Derived::Scalar> rowwise_softmax(const Eigen::MatrixBase<Derived>& m) {
  detail::require_finite_nonempty(m, "rowwise_softmax");
  using T = typename Derived::Scalar;
  const MatrixX<T> x = m;
  MatrixX<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    detail::softmax_strided(x.data() + r, x.cols(), x.rows(), out.data() + r, out.rows());
  return out;
}

/// KL( N(mu, diag(exp(logvar))) || N(0, I) ).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar kl_diag_gaussians(const Eigen::MatrixBase<DerivedA>& mu,
                                            const Eigen::MatrixBase<DerivedB>& logvar) {
  if (mu.size() != logvar.size())
    throw Error(ErrorCode::InvalidShape, "kl_diag_gaussians: mu/logvar length mismatch");
  detail::require_finite_nonempty(mu, "kl_diag_gaussians");
  detail::require_finite_nonempty(logvar, "kl_diag_gaussians");
  return 0.5 * (logvar.array().exp() + mu.array().square() - 1.0 - logvar.array()).sum();
}

}  // namespace lebm
