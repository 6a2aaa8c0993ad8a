#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpgrad/oracle.hpp"

namespace tpgrad {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Analytic gradients (local forward loss, layerwise reconstruction, DRL for
/// every trainable pathway, control loss, BP) against central differences.
CheckResult check_gradients(std::uint64_t seed, int instances = 20);

/// Target-update error vs eta_hat has log-log slope 2 on exactly invertible
/// nets and on DTP nets with arbitrary feedback.
CheckResult check_taylor_order(std::uint64_t seed);

/// DirectLinear feedback trained on DRL over one frozen sample converges to
/// the damped pseudo-inverse of the path Jacobian.
CheckResult check_drl_fixed_point(std::uint64_t seed);

/// Linear contracting net, batch 1: GNT output change is antiparallel to e_L,
/// GNT updates have no nullspace component and DTP wastes more of its update
/// in the nullspace than DDTP-linear.
CheckResult check_gnt_direction_and_nullspace(std::uint64_t seed);

/// Linear net on realizable data: GNT updates stay within 90 degrees of the
/// gradient and the loss falls below 1e-6 of its start within 5000 steps.
CheckResult check_gnt_convergence(std::uint64_t seed);

/// Scaled transposes of wide matrices with sphere-uniform rows are
/// approximate pseudo-inverses.
CheckResult check_eps_pinv(std::uint64_t seed);

/// Same config and seed give bitwise identical metric streams; IDX and CSV
/// round trips preserve data. Temporary files go under `scratch_dir`.
CheckResult check_determinism_and_io(std::uint64_t seed, const std::string& scratch_dir);

std::vector<CheckResult> run_theory_checks(std::uint64_t seed, const std::string& scratch_dir);

struct ToyNullspaceResult {
  double dtp_ratio = 0.0;
  double ddtp_ratio = 0.0;
  double gnt_ratio = 0.0;
  int samples = 0;
};

/// Nonlinear 6-6-6-2 tanh student on teacher data with frozen forward weights:
/// mean nullspace ratio of the layer-2 update for DTP, DDTP-linear and GNT.
ToyNullspaceResult toy_nullspace(std::uint64_t seed, int samples = 50);

}  // namespace tpgrad
