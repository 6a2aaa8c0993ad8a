#pragma once

#include <optional>
#include <vector>

#include "tpgrad/credit.hpp"

namespace tpgrad {

struct DampingGrid {
  std::vector<double> lambdas{0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
};

/// Throws ValidationError unless the grid is sorted, distinct and nonnegative.
void validate(const DampingGrid& grid);

/// delta_i = -eta_hat * J_i^T (J_i J_i^T + lambda I)^{-1} e_L per sample, with
/// J_i = dh_L/dh_i. The output layer gets -eta_hat * e_L.
TargetBundle gnt_target(const ForwardNet& net, const Activations& acts, const Mat& e_L, double eta_hat,
                        double lambda, PinvOptions opts = {});

/// Local-loss gradient on GNT targets; the reference update for alignment angles.
ForwardGrads gnt_weight_update(const ForwardNet& net, const Activations& acts, const TargetBundle& bundle);

/// Output curvature of the softmax cross-entropy loss, diag(p) - p p^T.
Mat softmax_curvature(const Vec& logits);

/// Factor K with K K^T = H from the symmetric eigendecomposition (negative
/// round-off eigenvalues are clamped to zero).
Mat curvature_factor(const Mat& H);

/// delta_i = -eta_hat (J^T H J + lambda I)^{-1} J^T e_L per sample. H defaults
/// to the softmax curvature of the output; `curvature_override` replaces it
/// for every sample.
TargetBundle ggn_target(const ForwardNet& net, const Activations& acts, const Mat& e_L, double eta_hat,
                        double lambda, const std::optional<Mat>& curvature_override = std::nullopt);

/// Sensitivity of h_L (all samples stacked) to row-major vec(W_i).
Mat weight_output_jacobian(const ForwardNet& net, const Activations& acts, int i);

/// Fraction of ||vec(dW_i)|| lying in the kernel of weight_output_jacobian.
double nullspace_ratio(const Mat& dW, const ForwardNet& net, const Activations& acts, int i);

struct AlignmentEntry {
  double angle_grad_deg = 0.0;
  std::vector<double> angle_gnt_deg;  // one per grid value
  double best_angle_gnt_deg = 0.0;
  double best_lambda = 0.0;
};

/// GNT weight updates for every grid value (outer index = grid position).
std::vector<ForwardGrads> gnt_updates_over_grid(const ForwardNet& net, const Activations& acts,
                                                const Mat& e_L, double eta_hat, const DampingGrid& grid);

/// Angles of one layer's update against the gradient and the GNT updates.
AlignmentEntry alignment_report(const Mat& dW_method, const Mat& dW_bp,
                                const std::vector<Mat>& dW_gnt_per_lambda, const DampingGrid& grid);

AlignmentEntry alignment_report(const Mat& dW_method, const Mat& dW_bp, const ForwardNet& net,
                                const Activations& acts, const Mat& e_L, double eta_hat, int i,
                                const DampingGrid& grid);

struct EpsPinvReport {
  double s = 0.0;
  double penrose_residual_1 = 0.0;  // ||B B^T B - B||_F^2
  double penrose_residual_2 = 0.0;  // ||B^T B B^T - B^T||_F^2
  bool hermitian_ok = true;
};

/// Treats B^T with B = A / max_row_norm as an approximate pseudo-inverse of B.
EpsPinvReport eps_pinv_check(const Mat& A);

}  // namespace tpgrad
