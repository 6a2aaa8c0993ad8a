#include "tpgrad/oracle.hpp"

#include <cmath>
#include <limits>

namespace tpgrad {

namespace {

constexpr double kKernelCutoff = 1e-10;

}  // namespace

void validate(const DampingGrid& grid) {
  if (grid.lambdas.empty()) throw Error(ErrorCode::ValidationError, "damping grid is empty");
  for (std::size_t k = 0; k < grid.lambdas.size(); ++k) {
    const double l = grid.lambdas[k];
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorCode::ValidationError, "damping values must be finite and >= 0");
    if (k > 0 && !(l > grid.lambdas[k - 1])) {
      throw Error(ErrorCode::ValidationError, "damping grid must be sorted and distinct");
    }
  }
}

TargetBundle gnt_target(const ForwardNet& net, const Activations& acts, const Mat& e_L, double eta_hat,
                        double lambda, PinvOptions opts) {
  const int L = net.depth();
  if (e_L.rows() != acts.h[L].rows() || e_L.cols() != acts.batch()) {
    throw Error(ErrorCode::ShapeMismatch, "gnt_target: error shape");
  }
  std::vector<Mat> targets(static_cast<std::size_t>(L) + 1);
  targets[L] = acts.h[L] - eta_hat * e_L;
  for (int i = 1; i < L; ++i) {
    Mat delta(acts.h[i].rows(), acts.batch());
    for (Eigen::Index b = 0; b < acts.batch(); ++b) {
      const Mat J = path_jacobian(net, acts, i, b);
      delta.col(b) = -eta_hat * (damped_pinv(J, lambda, opts) * e_L.col(b));
    }
    targets[i] = acts.h[i] + delta;
  }
  return make_bundle(acts, std::move(targets));
}

ForwardGrads gnt_weight_update(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle) {
  return forward_update(net, acts, bundle);
}

Mat softmax_curvature(const Vec& logits) {
  const Vec p = softmax(logits);
  Mat H = -p * p.transpose();
  H.diagonal() += p;
  return H;
}

Mat curvature_factor(const Mat& H) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(H);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::NonFinite, "curvature_factor: eigensolver failed");
  const Vec roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal();
}

TargetBundle ggn_target(const ForwardNet& net, const Activations& acts, const Mat& e_L, double eta_hat,
                        double lambda, const std::optional<Mat>& curvature_override) {
  const int L = net.depth();
  if (e_L.rows() != acts.h[L].rows() || e_L.cols() != acts.batch()) {
    throw Error(ErrorCode::ShapeMismatch, "ggn_target: error shape");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorCode::ValidationError, "ggn_target: lambda must be >= 0");
  if (curvature_override && (curvature_override->rows() != e_L.rows() || curvature_override->cols() != e_L.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "ggn_target: curvature shape");
  }
  std::vector<Mat> targets(static_cast<std::size_t>(L) + 1);
  targets[L] = acts.h[L] - eta_hat * e_L;
  for (int i = 1; i < L; ++i) {
    Mat delta(acts.h[i].rows(), acts.batch());
    for (Eigen::Index b = 0; b < acts.batch(); ++b) {
      const Mat H = curvature_override ? *curvature_override : softmax_curvature(acts.h[L].col(b));
      const Mat J = path_jacobian(net, acts, i, b);
      const Mat KJ = curvature_factor(H).transpose() * J;
      Mat G = KJ.transpose() * KJ;
      G.diagonal().array() += lambda;
      const Vec rhs = -eta_hat * (J.transpose() * e_L.col(b));
      Eigen::LDLT<Mat> ldlt(G);
      const Vec d = ldlt.vectorD().cwiseAbs();
      const double top = d.size() ? d.maxCoeff() : 0.0;
      if (ldlt.info() != Eigen::Success || !(d.minCoeff() > top * 1e-12) || top == 0.0) {
        throw Error(ErrorCode::Singular, "ggn_target: curvature matrix is rank deficient");
      }
      delta.col(b) = ldlt.solve(rhs);
    }
    targets[i] = acts.h[i] + delta;
  }
  return make_bundle(acts, std::move(targets));
}

Mat weight_output_jacobian(const ForwardNet& net, const Activations& acts, int i) {
  if (i < 1 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "weight_output_jacobian: layer");
  const Eigen::Index nL = net.output_dim();
  const Eigen::Index rows = net.layer(i).W.rows();
  const Eigen::Index cols = net.layer(i).W.cols();
  Mat M(nL * acts.batch(), rows * cols);
  for (Eigen::Index b = 0; b < acts.batch(); ++b) {
    // dh_L / dW_i(r, c) = J_{L,i}[:, r] * s'(a_i)[r] * h_{i-1}[c]
    const Mat JD = path_jacobian(net, acts, i, b) *
                   activation_derivative(net.layer(i).act, acts.a[i].col(b)).col(0).asDiagonal();
    const Vec& prev = acts.h[i - 1].col(b);
    for (Eigen::Index r = 0; r < rows; ++r) {
      M.block(b * nL, r * cols, nL, cols) = JD.col(r) * prev.transpose();
    }
  }
  return M;
}

double nullspace_ratio(const Mat& dW, const ForwardNet& net, const Activations& acts, int i) {
  if (i < 1 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "nullspace_ratio: layer");
  const Layer& l = net.layer(i);
  if (dW.rows() != l.W.rows() || dW.cols() != l.W.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "nullspace_ratio: update shape");
  }
  const Vec v = flatten_rows(dW);
  const double norm = v.norm();
  if (norm == 0.0) throw Error(ErrorCode::ZeroMatrix, "nullspace_ratio: zero update");
  const Mat M = weight_output_jacobian(net, acts, i);
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  Eigen::Index rank = 0;
  if (s.size() > 0 && s(0) > 0.0) {
    while (rank < s.size() && s(rank) > s(0) * kKernelCutoff) ++rank;
  }
  // Row space of M is spanned by the leading right singular vectors; the rest
  // of v lies in the kernel.
  const Mat V = svd.matrixV().leftCols(rank);
  const Vec kernel_part = v - V * (V.transpose() * v);
  return std::min(1.0, kernel_part.norm() / norm);
}

std::vector<ForwardGrads> gnt_updates_over_grid(const ForwardNet& net, const Activations& acts,
                                                const Mat& e_L, double eta_hat, const DampingGrid& grid) {
  validate(grid);
  const int L = net.depth();
  // Path Jacobians do not depend on lambda, so compute them once per sample.
  std::vector<std::vector<Mat>> jac(static_cast<std::size_t>(L));
  for (int i = 1; i < L; ++i) {
    for (Eigen::Index b = 0; b < acts.batch(); ++b) jac[i].push_back(path_jacobian(net, acts, i, b));
  }
  std::vector<ForwardGrads> out;
  for (double lambda : grid.lambdas) {
    std::vector<Mat> targets(static_cast<std::size_t>(L) + 1);
    targets[L] = acts.h[L] - eta_hat * e_L;
    for (int i = 1; i < L; ++i) {
      Mat delta(acts.h[i].rows(), acts.batch());
      for (Eigen::Index b = 0; b < acts.batch(); ++b) {
        delta.col(b) = -eta_hat * (damped_pinv(jac[i][b], lambda) * e_L.col(b));
      }
      targets[i] = acts.h[i] + delta;
    }
    out.push_back(forward_update(net, acts, make_bundle(acts, std::move(targets))));
  }
  return out;
}

AlignmentEntry alignment_report(const Mat& dW_method, const Mat& dW_bp,
                                const std::vector<Mat>& dW_gnt_per_lambda, const DampingGrid& grid) {
  validate(grid);
  if (dW_gnt_per_lambda.size() != grid.lambdas.size()) {
    throw Error(ErrorCode::ShapeMismatch, "alignment_report: one GNT update per grid value expected");
  }
  AlignmentEntry e;
  e.angle_grad_deg = frobenius_angle(dW_method, dW_bp);
  e.best_angle_gnt_deg = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.lambdas.size(); ++k) {
    const double a = frobenius_angle(dW_method, dW_gnt_per_lambda[k]);
    e.angle_gnt_deg.push_back(a);
    if (a < e.best_angle_gnt_deg) {
      e.best_angle_gnt_deg = a;
      e.best_lambda = grid.lambdas[k];
    }
  }
  return e;
}

AlignmentEntry alignment_report(const Mat& dW_method, const Mat& dW_bp, const ForwardNet& net,
                                const Activations& acts, const Mat& e_L, double eta_hat, int i,
                                const DampingGrid& grid) {
  if (i < 1 || i > net.depth()) throw Error(ErrorCode::IndexOutOfRange, "alignment_report: layer");
  const auto updates = gnt_updates_over_grid(net, acts, e_L, eta_hat, grid);
  std::vector<Mat> layer_updates;
  for (const auto& u : updates) layer_updates.push_back(u.dW[static_cast<std::size_t>(i - 1)]);
  return alignment_report(dW_method, dW_bp, layer_updates, grid);
}

EpsPinvReport eps_pinv_check(const Mat& A) {
  require_finite(A, "eps_pinv_check: input");
  if (A.rows() > A.cols()) throw Error(ErrorCode::ShapeMismatch, "eps_pinv_check: needs rows <= cols");
  EpsPinvReport r;
  r.s = A.rowwise().norm().maxCoeff();
  if (r.s == 0.0) throw Error(ErrorCode::ZeroMatrix, "eps_pinv_check: zero matrix");
  const Mat B = A / r.s;
  const Mat BBt = B * B.transpose();
  const Mat BtB = B.transpose() * B;
  r.penrose_residual_1 = (BBt * B - B).squaredNorm();
  r.penrose_residual_2 = (B.transpose() * BBt - B.transpose()).squaredNorm();
  r.hermitian_ok = BBt.isApprox(BBt.transpose(), 1e-12) && BtB.isApprox(BtB.transpose(), 1e-12);
  return r;
}

}  // namespace tpgrad
