#pragma once

// Gradient fields (negative loss gradients, i.e. descent directions) for every
// objective of the value-softmax model, in full (V, a) and reduced (u, a)
// coordinates, together with the losses they descend.

#include "vsflow/core.hpp"

namespace vsflow {

/// V is p x p, a has length p, beta_star has length p.
struct FullState {
  Mat V;
  Vec a;
  Vec beta_star;

  void validate() const;
  Eigen::Index p() const { return a.size(); }
};

/// u = V^T beta_star; beta_star enters only through its squared norm.
struct ReducedState {
  Vec u;
  Vec a;
  double beta_star_norm_sq = 1.0;

  void validate() const;
  Eigen::Index p() const { return a.size(); }
};

/// Tied model beta = R softmax(R a).
struct TiedState {
  Mat R;
  Vec a;
  Vec beta_star;

  void validate() const;
  Eigen::Index p() const { return a.size(); }
};

/// Row-wise model beta = softmax(A) V: A is T x p (one logit row per query),
/// V is p x d (one value row per key), beta_star has length d.
struct MultiRowState {
  Mat V;
  Mat A;
  Vec beta_star;

  void validate() const;
  Eigen::Index p() const { return A.cols(); }
  Eigen::Index rows() const { return A.rows(); }
};

struct FullGradient {
  Mat dV;
  Vec da;
};

struct ReducedGradient {
  Vec du;
  Vec da;
};

struct MultiRowGradient {
  Mat dV;
  Mat dA;
};

// --- logistic ---------------------------------------------------------------

/// 1 / (1 + exp(<beta_star, beta>)). Underflows to 0 (never overflows) once
/// the margin exceeds ~745.
double gamma_logistic(const Vec& beta, const Vec& beta_star);
double gamma_from_margin(double margin);
/// log gamma = -log(1 + exp(margin)), exact in log space for any margin.
double log_gamma_from_margin(double margin);
/// log(1 + exp(-margin)) without overflow.
double logistic_loss_from_margin(double margin);

double loss_logistic_full(const FullState& s);
double loss_logistic_reduced(const ReducedState& s);

/// dV = gamma beta* s^T,  da = gamma (diag(s) - s s^T) V^T beta*.
FullGradient field_logistic_full(const FullState& s);

/// du = gamma |beta*|^2 s,  da = gamma (diag(s) - s s^T) u, with
/// gamma = 1 / (1 + exp(<u, s>)).
ReducedGradient field_logistic_reduced(const ReducedState& s);

/// Shared reduced right-hand side; the logistic and regression reduced
/// systems differ only in the gamma they pass here.
ReducedGradient reduced_field_with_gamma(const ReducedState& s, double gamma);

// --- regression -------------------------------------------------------------

double loss_regression_full(const FullState& s);
/// 1/2 |beta*|^2 gamma^2 with gamma = 1 - <u, s> / |beta*|^2.
double loss_regression_reduced(const ReducedState& s);
double gamma_regression_reduced(const ReducedState& s);

/// dV = (beta* - V s) s^T,  da = (diag(s) - s s^T) V^T (beta* - V s).
FullGradient field_regression_full(const FullState& s);
ReducedGradient field_regression_reduced(const ReducedState& s);

/// Loss 1/2 |beta* - X V s|^2.
double loss_regression_conditioned(const FullState& s, const ConditionedDesign& design);
FullGradient field_regression_conditioned(const FullState& s, const ConditionedDesign& design);

// --- cross entropy ----------------------------------------------------------

inline constexpr double kKlDomainFloor = 1e-12;

/// -<p*, log(V s)>. Throws DomainError if any entry of V s is <= 1e-12.
double loss_kl(const FullState& s, const SimplexVector& p_star);
FullGradient field_kl(const FullState& s, const SimplexVector& p_star);

// --- normalization and activation variants ----------------------------------

/// Logistic loss with beta = V sigma_f(a), reduced coordinates:
/// du = gamma |beta*|^2 sigma_f,
/// da = gamma f'(a) / sum_j f(a_j) (u - <u, sigma_f> 1).
double loss_general_norm_logistic(const ReducedState& s, ScoreMap f);
ReducedGradient field_general_norm_logistic(const ReducedState& s, ScoreMap f);

/// Logistic loss with beta = V g(a), g applied entrywise (no normalization).
double loss_elementwise(const FullState& s, ScoreMap g);
FullGradient field_elementwise(const FullState& s, ScoreMap g);

// --- section-4 constructions -------------------------------------------------

/// Logistic loss of beta = R softmax(R a). Returned gradient stores dR in dV.
double loss_tied(const TiedState& s);
FullGradient field_tied(const TiedState& s);

/// (1/T) sum_t log(1 + exp(-<beta*, beta[t]>)), beta[t] = V^T softmax(A[t, :]).
double loss_multirow_logistic(const MultiRowState& s);
/// Per-row gamma_t = 1 / (1 + exp(<u, s_t>)) with u = V beta*.
Vec multirow_gammas(const MultiRowState& s);
MultiRowGradient field_multirow_logistic(const MultiRowState& s);

}  // namespace vsflow
