#pragma once

// Deterministic integration of gradient flows with dense recording.
//
// The integrator advances the augmented state (x, int_0^t gamma ds) so the
// polarization coefficient is integrated with the same scheme and step
// control as the parameters themselves. Steps are clipped to land exactly on
// recording times.

#include "vsflow/fields.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace vsflow {

enum class Method { rk4_fixed, rk45_adaptive };

enum class RecordMode {
  stride,     // every `stride` accepted steps
  linear,     // t = k * spacing
  geometric,  // t = first * 10^(k / per_decade)
};

struct RecordGrid {
  RecordMode mode = RecordMode::geometric;
  int stride = 1;
  double spacing = 1.0;
  double first = 1e-3;
  int per_decade = 20;
};

struct IntegratorConfig {
  Method method = Method::rk45_adaptive;
  double dt = 1e-2;  // rk4-fixed step, and the initial step for rk45
  double rtol = 1e-8;
  double atol = 1e-10;
  double dt_min = 1e-14;
  double dt_max = std::numeric_limits<double>::infinity();
  double t_end = 1.0;
  RecordGrid record;

  /// Throws InvalidInput unless tolerances are positive, dt_min <= dt_max and
  /// t_end > 0.
  void validate() const;
};

/// Permutation sorting coordinates in decreasing order, and whether two
/// coordinates compare exactly equal.
struct Ordering {
  std::vector<int> perm;
  bool tie = false;
};

Ordering descending_order(const Vec& v);

struct TrajectorySample {
  double t = 0.0;
  Vec state;
  double int_gamma = 0.0;
  Observation obs;
  Ordering u_order;
  Ordering sigma_order;
};

struct TrajectoryEvent {
  double t = 0.0;
  // "tie-u", "tie-sigma", "domain-violation", "degenerate-normalization",
  // "step-underflow"
  std::string kind;
  std::string detail;
};

struct Trajectory {
  FieldPtr field;
  IntegratorConfig config;
  std::vector<TrajectorySample> samples;
  std::vector<TrajectoryEvent> events;
  // Integrator bookkeeping used to resume.
  double next_dt = 0.0;
  std::int64_t steps_taken = 0;
  std::int64_t steps_rejected = 0;

  double t_end() const { return samples.empty() ? 0.0 : samples.back().t; }
  const TrajectorySample& front() const { return samples.front(); }
  const TrajectorySample& back() const { return samples.back(); }
};

/// Step size fell below dt_min. Carries everything recorded so far.
class StiffnessError : public Error {
 public:
  StiffnessError(const std::string& what, Trajectory partial) : Error(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// The field left its domain along the trajectory (including a degenerate
/// normalization).
class DomainViolation : public Error {
 public:
  DomainViolation(const std::string& what, Trajectory partial) : Error(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// Integrates dx/dt = field(x) from x0 over [0, config.t_end].
Trajectory integrate(const FieldPtr& field, const Vec& x0, const IntegratorConfig& config);

/// Extends `traj` (produced with the same field) by `extra_time`, continuing
/// its recording grid and step-size state.
Trajectory continue_trajectory(const Trajectory& traj, const FieldPtr& field, double extra_time);

// --- initialization ---------------------------------------------------------

enum class InitScheme { assumption1, assumption2, explicit_state, kl_interior };

struct InitSpec {
  InitScheme scheme = InitScheme::assumption1;
  std::uint64_t seed = 0;
  double scale = 1.0;
  Eigen::Index p = 4;
  // Initial logit level. Softmax fields are shift invariant, so this only
  // matters for the general normalizations and elementwise maps, which need
  // a(0) > 0 for f = square and g = relu.
  double logit_offset = 0.0;
  // Magnitude of the V component orthogonal to the target (full coordinates).
  double orthogonal_scale = 0.0;
  Vec explicit_state;  // used by InitScheme::explicit_state
};

InitScheme init_scheme_from_string(std::string_view name);
std::string_view to_string(InitScheme s);

/// Builds the packed initial state for `field`.
///
/// assumption1: a(0) = logit_offset * 1 and u(0) = V(0)^T beta* drawn
/// uniformly on [-scale, scale] and sorted strictly decreasing (redrawn on
/// ties). Full coordinates use V(0) = beta* u(0)^T / |beta*|^2 plus an
/// orthogonal component of size orthogonal_scale. The tied model draws R(0)
/// uniformly on [-scale, scale] and orders its columns by R^T beta*; the
/// multi-row model uses A(0) = logit_offset and V(0) = u(0) beta*^T / |beta*|^2.
///
/// assumption2: V(0) = 0 and a(0) drawn uniformly on [-scale, scale] and
/// sorted so softmax(a(0)) is strictly decreasing.
///
/// kl_interior: columns of V(0) equal p* plus uniform noise in
/// [0, scale * min p*], a(0) drawn uniformly on [-scale, scale].
///
/// Deterministic in (spec, field). Throws InvalidInput for p < 2 or a
/// scheme/field mismatch.
Vec init_state(const InitSpec& spec, const FlowField& field);

/// Target used by the experiments: a seeded random direction scaled to `norm`.
Vec make_target(Eigen::Index p, std::uint64_t seed, double norm = 1.0);

}  // namespace vsflow
