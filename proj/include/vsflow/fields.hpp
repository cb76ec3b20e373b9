#pragma once

// FlowField: a gradient field packaged for the integrator. Each field owns the
// fixed problem data (target, design, normalization map), knows how its state
// is packed into a flat vector, and reports the observables the trajectory
// records (loss, gamma, attention weights, value projection, logits).

#include "vsflow/losses.hpp"

#include <memory>
#include <optional>
#include <string>

namespace vsflow {

enum class FieldKind {
  logistic_full,
  logistic_reduced,
  regression_full,
  regression_reduced,
  regression_conditioned,
  kl,
  general_norm,
  elementwise,
  tied,
  multirow,
};

std::string_view to_string(FieldKind kind);

/// True for the logistic-loss families whose gamma is 1/(1 + exp(margin)).
bool is_logistic_family(FieldKind kind);

struct Observation {
  double loss = 0.0;
  // Gradient magnitude factor. Logistic families: 1/(1 + exp(margin)).
  // Reduced regression: 1 - <u, s>/|beta*|^2. Full, conditioned and
  // cross-entropy fields: |grad_beta loss| / |beta*|, which equals the
  // reduced gamma on the rank-one manifold.
  double gamma = 0.0;
  double entropy = 0.0;
  // |grad_beta loss|^2 where beta is the model output V s.
  double grad_beta_norm_sq = 0.0;
  Vec sigma;  // attention weights (row average for the multi-row model)
  Vec u;      // value projection onto the target
  Vec a;      // logits (row average for the multi-row model)
};

class FlowField {
 public:
  virtual ~FlowField() = default;

  virtual FieldKind kind() const = 0;
  virtual std::string name() const { return std::string(to_string(kind())); }
  virtual Eigen::Index p() const = 0;
  virtual Eigen::Index state_size() const = 0;

  /// dx <- field(x); returns gamma at x. Throws DomainError outside the
  /// loss domain.
  virtual double evaluate(const Vec& x, Vec& dx) const = 0;
  virtual double loss(const Vec& x) const = 0;
  virtual Observation observe(const Vec& x) const = 0;

  /// Quantities the exact flow conserves: sum of logits for softmax fields
  /// (one per row for the multi-row model), |a|^2 for the homogeneous
  /// normalizations f = identity and f = square. Empty when none is known.
  virtual Vec logit_invariants(const Vec& x) const = 0;
  /// V (or R for the tied model) when the state carries a full matrix.
  virtual std::optional<Mat> value_matrix(const Vec&) const { return std::nullopt; }
  /// One attention row per query; a single row except for the multi-row model.
  virtual Mat attention_rows(const Vec& x) const { return observe(x).sigma.transpose(); }
  /// dl/dt <= -(1/p) |grad_beta l|^2 holds for models of the form beta = V w
  /// with w summing to one.
  virtual bool descent_bound_applies() const { return true; }

  const Vec& beta_star() const { return beta_star_; }

 protected:
  explicit FlowField(Vec beta_star) : beta_star_(std::move(beta_star)) {}
  Vec beta_star_;
};

using FieldPtr = std::shared_ptr<const FlowField>;

// Packing: matrices are stored column-major ahead of the logit block.
Vec pack(const FullState& s);
FullState unpack_full(const Vec& x, const Vec& beta_star);
Vec pack(const ReducedState& s);
ReducedState unpack_reduced(const Vec& x, double beta_star_norm_sq);
Vec pack(const TiedState& s);
TiedState unpack_tied(const Vec& x, const Vec& beta_star);
Vec pack(const MultiRowState& s);
MultiRowState unpack_multirow(const Vec& x, Eigen::Index rows, Eigen::Index p, const Vec& beta_star);

FieldPtr make_logistic_full_field(Vec beta_star);
/// Reduced fields keep the full target only for bookkeeping; the dynamics use
/// its squared norm.
FieldPtr make_logistic_reduced_field(Vec beta_star);
FieldPtr make_regression_full_field(Vec beta_star);
FieldPtr make_regression_reduced_field(Vec beta_star);
FieldPtr make_regression_conditioned_field(Vec beta_star, ConditionedDesign design);
FieldPtr make_kl_field(SimplexVector p_star);
FieldPtr make_general_norm_field(Vec beta_star, ScoreMap f);
FieldPtr make_elementwise_field(Vec beta_star, ScoreMap g);
FieldPtr make_tied_field(Vec beta_star);
FieldPtr make_multirow_field(Vec beta_star, Eigen::Index rows, Eigen::Index p);

/// The normalization map of a general-norm field (exp for softmax fields).
ScoreMap score_map_of(const FlowField& field);

}  // namespace vsflow
