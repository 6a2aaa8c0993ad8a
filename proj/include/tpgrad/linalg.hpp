#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>

#include <Eigen/Dense>

#include "tpgrad/error.hpp"

namespace tpgrad {

// All numerics are 64-bit. Templates below only accept double-valued
// expressions; a float matrix fails to satisfy Float64.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

template <typename Derived>
concept Float64 = std::same_as<typename Derived::Scalar, double>;

inline constexpr double kDefaultFdStep = 1e-5;
inline constexpr double kPinvCutoff = 1e-12;

template <typename Derived>
  requires Float64<Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().allFinite();
}

template <typename Derived>
  requires Float64<Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!x.derived().allFinite()) throw Error(ErrorCode::NonFinite, what);
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// sigma_max * rel_cutoff are treated as zero.
template <typename Derived>
  requires Float64<Derived>
Mat pinv(const Eigen::MatrixBase<Derived>& J, double rel_cutoff = kPinvCutoff) {
  require_finite(J, "pinv: input");
  if (J.size() == 0) return Mat::Zero(J.cols(), J.rows());
  Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? s(0) * rel_cutoff : 0.0;
  Vec s_inv = Vec::Zero(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > cutoff) s_inv(k) = 1.0 / s(k);
  }
  return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

struct PinvOptions {
  // When false, lambda == 0 is solved through the normal equations and a
  // rank-deficient J raises Singular instead of falling back to the SVD.
  bool svd_fallback = true;
};

/// Tikhonov-damped pseudo-inverse J^T (J J^T + lambda I)^{-1}.
///
/// lambda > 0 solves the (rows x rows) SPD system with a Cholesky
/// factorization. lambda == 0 returns the Moore-Penrose pseudo-inverse.
template <typename Derived>
  requires Float64<Derived>
Mat damped_pinv(const Eigen::MatrixBase<Derived>& J, double lambda,
                PinvOptions opts = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::NonFinite, "damped_pinv: lambda must be finite and >= 0");
  }
  require_finite(J, "damped_pinv: input");
  const Mat Jm = J;
  if (lambda == 0.0 && opts.svd_fallback) return pinv(Jm);

  Mat gram = Jm * Jm.transpose();
  gram.diagonal().array() += lambda;
  Eigen::LLT<Mat> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::Singular, "damped_pinv: J J^T + lambda I is not positive definite");
  }
  if (lambda == 0.0) {
    // Cholesky can succeed on a numerically singular Gram matrix; check the
    // conditioning of the factor before trusting it.
    const Vec diag = llt.matrixL().toDenseMatrix().diagonal();
    const double lo = diag.minCoeff(), hi = diag.maxCoeff();
    if (!(lo > hi * 1e-7)) {
      throw Error(ErrorCode::Singular, "damped_pinv: J is rank deficient and lambda = 0");
    }
  }
  // X^T = (J J^T + lambda I)^{-1} J
  return llt.solve(Jm).transpose();
}

/// Angle in degrees between two matrices under the Frobenius inner product.
template <typename DA, typename DB>
  requires Float64<DA> && Float64<DB>
double frobenius_angle(const Eigen::MatrixBase<DA>& A, const Eigen::MatrixBase<DB>& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "frobenius_angle: shapes differ");
  }
  const double na = A.norm();
  const double nb = B.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroMatrix, "frobenius_angle: zero operand");
  // Normalize first so huge or tiny operands do not overflow the product.
  const double cosine = std::clamp((A / na).cwiseProduct(B / nb).sum(), -1.0, 1.0);
  return std::acos(cosine) * 180.0 / std::numbers::pi;
}

/// Relative Frobenius error ||a - b|| / max(||a||, ||b||); zero when both vanish.
template <typename DA, typename DB>
  requires Float64<DA> && Float64<DB>
double rel_error(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

/// Central differences of a scalar function, one coordinate at a time.
template <typename F>
  requires std::invocable<F&, const Vec&>
Vec central_finite_diff(F&& f, const Vec& x, double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw Error(ErrorCode::NonFinite, "central_finite_diff: step must be > 0");
  Vec grad(x.size());
  Vec probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + h;
    const double up = f(probe);
    probe(k) = x(k) - h;
    const double down = f(probe);
    probe(k) = x(k);
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::NonFinite, "central_finite_diff: non-finite evaluation");
    }
    grad(k) = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Central-difference Jacobian of a vector-valued function (column k holds
/// the derivative with respect to x_k).
template <typename F>
  requires std::invocable<F&, const Vec&>
Mat central_finite_diff_jacobian(F&& f, const Vec& x, double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw Error(ErrorCode::NonFinite, "central_finite_diff: step must be > 0");
  Vec probe = x;
  Mat jac;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + h;
    const Vec up = f(probe);
    probe(k) = x(k) - h;
    const Vec down = f(probe);
    probe(k) = x(k);
    if (!up.allFinite() || !down.allFinite()) {
      throw Error(ErrorCode::NonFinite, "central_finite_diff: non-finite evaluation");
    }
    if (k == 0) jac.resize(up.size(), x.size());
    jac.col(k) = (up - down) / (2.0 * h);
  }
  return jac;
}

/// Row-major flattening, the layout used for vec(W) throughout.
template <typename Derived>
  requires Float64<Derived>
Vec flatten_rows(const Eigen::MatrixBase<Derived>& M) {
  Vec out(M.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) out(k++) = M(r, c);
  return out;
}

inline Mat unflatten_rows(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw Error(ErrorCode::ShapeMismatch, "unflatten_rows: size");
  Mat M(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = v(k++);
  return M;
}

}  // namespace tpgrad
