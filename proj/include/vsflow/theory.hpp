#pragma once

// Verifiers: each reads a Trajectory and returns a VerifierReport whose
// `passed` flag is the conjunction of its witness predicates.

#include "vsflow/flow.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace vsflow {

struct VerifierReport {
  std::string name;
  bool passed = false;
  double tolerance = 0.0;
  nlohmann::json witnesses = nlohmann::json::object();
};

nlohmann::json to_json(const VerifierReport& r);

// Margin used for "strictly ordered / strictly increasing" between adjacent
// recorded samples.
inline constexpr double kOrderMargin = 1e-12;

struct LyapunovSample {
  double t = 0.0;
  int i = 0;
  int j = 0;
  double phi = 0.0;
};

/// Phi_ij = (u_i - u_j) * (-(exp(-a_i) - exp(-a_j))) for every pair i < j of
/// the reference order at every recorded time.
std::vector<LyapunovSample> lyapunov_samples(const Trajectory& traj);

/// Coordinate order the verifiers compare against: the initial order of u,
/// or of sigma when u(0) has ties (regression runs start from u = 0).
std::vector<int> reference_order(const Trajectory& traj);

VerifierReport verify_order_preservation(const Trajectory& traj);
VerifierReport verify_repulsion(const Trajectory& traj);
VerifierReport verify_lyapunov(const Trajectory& traj);
/// delta is the smallest adjacent gap of the sorted u(0). Throws InvalidInput
/// when it is not positive.
VerifierReport verify_ratio_bound(const Trajectory& traj);
/// Throws InapplicableVerifier when t_end < 1e4.
VerifierReport verify_polarization_growth(const Trajectory& traj);
VerifierReport verify_onehot_limit(const Trajectory& traj, double eps = 0.01);
VerifierReport verify_vanishing_loss(const Trajectory& traj, double tol = 1e-2);
/// Linear fit of ln(loss) against t over samples with loss in
/// (1e-12, 1e-2] * loss(0).
VerifierReport verify_exponential_decay(const Trajectory& traj);
/// Throws InapplicableVerifier when t_end < 1e4.
VerifierReport verify_nonmaximal_rates(const Trajectory& traj);
VerifierReport verify_rank_one(const Trajectory& traj);
VerifierReport verify_general_norm_nocrossing(const Trajectory& traj);
/// per_row_argmax: each row may choose its own sink index (the row's argmax
/// at t_end) instead of argmax u(0).
VerifierReport verify_sink_formation(const Trajectory& traj, double eps = 0.05, bool per_row_argmax = false);
VerifierReport verify_massive_activation(const Trajectory& traj);
/// Cross-entropy runs: entropy falls but the scores stay away from one-hot.
VerifierReport verify_partial_polarization(const Trajectory& traj, double eps = 0.01);
/// Drift of the field's logit invariants. Throws InapplicableVerifier when
/// the field has none.
VerifierReport verify_conservation(const Trajectory& traj, double tol = 1e-8);
/// Central difference of the loss along the flow against
/// -(1/p)|grad_beta loss|^2 at every recorded sample.
VerifierReport verify_descent(const Trajectory& traj);

struct VerifierOptions {
  double onehot_eps = 0.01;
  double loss_tol = 1e-2;
  double sink_eps = 0.05;
  bool per_row_argmax = false;
  double partial_eps = 0.01;
  double conservation_tol = 1e-8;
};

/// Runs a verifier by id ("order_preservation", "repulsion", ...). Throws
/// InvalidInput for an unknown id.
VerifierReport run_verifier(const std::string& id, const Trajectory& traj, const VerifierOptions& opts = {});
const std::vector<std::string>& verifier_ids();

}  // namespace vsflow
