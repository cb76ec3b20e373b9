#include "vsflow/losses.hpp"

#include <cmath>
#include <sstream>

namespace vsflow {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw InvalidInput(what);
}

}  // namespace

void FullState::validate() const {
  require(a.size() >= 2, "state needs p >= 2");
  require(V.rows() == a.size() && V.cols() == a.size(), "V must be p x p");
  require(beta_star.size() == a.size(), "beta* must have length p");
  require(V.allFinite() && a.allFinite() && beta_star.allFinite(), "state must be finite");
}

void ReducedState::validate() const {
  require(a.size() >= 2, "state needs p >= 2");
  require(u.size() == a.size(), "u must have length p");
  require(u.allFinite() && a.allFinite(), "state must be finite");
  require(beta_star_norm_sq > 0.0 && std::isfinite(beta_star_norm_sq), "|beta*|^2 must be positive");
}

void TiedState::validate() const {
  require(a.size() >= 2, "state needs p >= 2");
  require(R.rows() == a.size() && R.cols() == a.size(), "R must be p x p");
  require(beta_star.size() == a.size(), "beta* must have length p");
  require(R.allFinite() && a.allFinite() && beta_star.allFinite(), "state must be finite");
}

void MultiRowState::validate() const {
  require(A.cols() >= 2 && A.rows() >= 1, "A must be T x p with p >= 2");
  require(V.rows() == A.cols(), "V must have one row per key");
  require(beta_star.size() == V.cols(), "beta* must match the value dimension");
  require(V.allFinite() && A.allFinite() && beta_star.allFinite(), "state must be finite");
}

double gamma_from_margin(double margin) {
  // 1/(1+e^m) = e^{-m}/(1+e^{-m}) for m > 0 keeps the intermediate bounded.
  if (margin > 0.0) {
    const double e = std::exp(-margin);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(margin));
}

double log_gamma_from_margin(double margin) {
  if (margin > 0.0) return -margin - std::log1p(std::exp(-margin));
  return -std::log1p(std::exp(margin));
}

double logistic_loss_from_margin(double margin) {
  if (margin > 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

double gamma_logistic(const Vec& beta, const Vec& beta_star) {
  return gamma_from_margin(beta_star.dot(beta));
}

double loss_logistic_full(const FullState& s) {
  const Vec sigma = softmax_values(s.a);
  return logistic_loss_from_margin(s.beta_star.dot(s.V * sigma));
}

double loss_logistic_reduced(const ReducedState& s) {
  return logistic_loss_from_margin(s.u.dot(softmax_values(s.a)));
}

FullGradient field_logistic_full(const FullState& s) {
  const Vec sigma = softmax_values(s.a);
  const double gamma = gamma_from_margin(s.beta_star.dot(s.V * sigma));
  const Vec u = s.V.transpose() * s.beta_star;
  FullGradient g;
  g.dV = gamma * s.beta_star * sigma.transpose();
  g.da = gamma * softmax_jacobian_values(sigma) * u;
  return g;
}

ReducedGradient reduced_field_with_gamma(const ReducedState& s, double gamma) {
  const Vec sigma = softmax_values(s.a);
  ReducedGradient g;
  g.du = gamma * s.beta_star_norm_sq * sigma;
  // (diag(s) - s s^T) u = s .* (u - <u, s>)
  g.da = gamma * sigma.cwiseProduct((s.u.array() - s.u.dot(sigma)).matrix());
  return g;
}

ReducedGradient field_logistic_reduced(const ReducedState& s) {
  return reduced_field_with_gamma(s, gamma_from_margin(s.u.dot(softmax_values(s.a))));
}

double loss_regression_full(const FullState& s) {
  return 0.5 * (s.beta_star - s.V * softmax_values(s.a)).squaredNorm();
}

double gamma_regression_reduced(const ReducedState& s) {
  return 1.0 - s.u.dot(softmax_values(s.a)) / s.beta_star_norm_sq;
}

double loss_regression_reduced(const ReducedState& s) {
  const double g = gamma_regression_reduced(s);
  return 0.5 * s.beta_star_norm_sq * g * g;
}

FullGradient field_regression_full(const FullState& s) {
  const Vec sigma = softmax_values(s.a);
  const Vec residual = s.beta_star - s.V * sigma;
  FullGradient g;
  g.dV = residual * sigma.transpose();
  g.da = softmax_jacobian_values(sigma) * (s.V.transpose() * residual);
  return g;
}

ReducedGradient field_regression_reduced(const ReducedState& s) {
  return reduced_field_with_gamma(s, gamma_regression_reduced(s));
}

double loss_regression_conditioned(const FullState& s, const ConditionedDesign& design) {
  return 0.5 * (s.beta_star - design.X * (s.V * softmax_values(s.a))).squaredNorm();
}

FullGradient field_regression_conditioned(const FullState& s, const ConditionedDesign& design) {
  if (design.X.rows() != s.p() || design.X.cols() != s.p())
    throw InvalidInput("design must be p x p");
  const Vec sigma = softmax_values(s.a);
  const Vec back = design.X.transpose() * (s.beta_star - design.X * (s.V * sigma));
  FullGradient g;
  g.dV = back * sigma.transpose();
  g.da = softmax_jacobian_values(sigma) * (s.V.transpose() * back);
  return g;
}

namespace {

Vec kl_prediction(const FullState& s, const SimplexVector& p_star) {
  if (p_star.size() != s.p()) throw InvalidInput("p* must have length p");
  Vec beta = s.V * softmax_values(s.a);
  for (Eigen::Index i = 0; i < beta.size(); ++i) {
    if (!(beta[i] > kKlDomainFloor)) {
      std::ostringstream os;
      os << "cross-entropy domain violated: beta[" << i << "] = " << beta[i];
      throw DomainError(os.str());
    }
  }
  return beta;
}

}  // namespace

double loss_kl(const FullState& s, const SimplexVector& p_star) {
  const Vec beta = kl_prediction(s, p_star);
  return -p_star.values().dot(beta.array().log().matrix());
}

FullGradient field_kl(const FullState& s, const SimplexVector& p_star) {
  const Vec beta = kl_prediction(s, p_star);
  const Vec sigma = softmax_values(s.a);
  const Vec r = p_star.values().cwiseQuotient(beta);  // -grad_beta
  FullGradient g;
  g.dV = r * sigma.transpose();
  g.da = softmax_jacobian_values(sigma) * (s.V.transpose() * r);
  return g;
}

double loss_general_norm_logistic(const ReducedState& s, ScoreMap f) {
  return logistic_loss_from_margin(s.u.dot(normalize_general_values(s.a, f)));
}

ReducedGradient field_general_norm_logistic(const ReducedState& s, ScoreMap f) {
  const Vec sigma = normalize_general_values(s.a, f);
  const Vec fa = s.a.unaryExpr([f](double x) { return apply(f, x); });
  const double denom = fa.sum();
  const double centre = s.u.dot(sigma);
  const double gamma = gamma_from_margin(centre);
  const Vec fprime = s.a.unaryExpr([f](double x) { return derivative(f, x); });
  ReducedGradient g;
  g.du = gamma * s.beta_star_norm_sq * sigma;
  g.da = (gamma / denom) * fprime.cwiseProduct((s.u.array() - centre).matrix());
  return g;
}

namespace {

Vec activate(const Vec& a, ScoreMap g) {
  if (!is_elementwise(g)) throw InvalidInput("expected an elementwise activation (sigmoid or relu)");
  return a.unaryExpr([g](double x) { return apply(g, x); });
}

}  // namespace

double loss_elementwise(const FullState& s, ScoreMap g) {
  return logistic_loss_from_margin(s.beta_star.dot(s.V * activate(s.a, g)));
}

FullGradient field_elementwise(const FullState& s, ScoreMap g) {
  const Vec ga = activate(s.a, g);
  const double gamma = gamma_from_margin(s.beta_star.dot(s.V * ga));
  const Vec gprime = s.a.unaryExpr([g](double x) { return derivative(g, x); });
  FullGradient out;
  out.dV = gamma * s.beta_star * ga.transpose();
  out.da = gamma * gprime.cwiseProduct(s.V.transpose() * s.beta_star);
  return out;
}

double loss_tied(const TiedState& s) {
  const Vec sigma = softmax_values(s.R * s.a);
  return logistic_loss_from_margin(s.beta_star.dot(s.R * sigma));
}

FullGradient field_tied(const TiedState& s) {
  const Vec sigma = softmax_values(s.R * s.a);
  const double gamma = gamma_from_margin(s.beta_star.dot(s.R * sigma));
  // m = <beta*, R s(R a)>: dm/dR = beta* s^T + J R^T beta* a^T, dm/da = R^T J R^T beta*.
  const Vec w = softmax_jacobian_values(sigma) * (s.R.transpose() * s.beta_star);
  FullGradient g;
  g.dV = gamma * (s.beta_star * sigma.transpose() + w * s.a.transpose());
  g.da = gamma * (s.R.transpose() * w);
  return g;
}

Vec multirow_gammas(const MultiRowState& s) {
  const Vec u = s.V * s.beta_star;
  Vec gammas(s.rows());
  for (Eigen::Index t = 0; t < s.rows(); ++t)
    gammas[t] = gamma_from_margin(u.dot(softmax_values(s.A.row(t).transpose())));
  return gammas;
}

double loss_multirow_logistic(const MultiRowState& s) {
  const Vec u = s.V * s.beta_star;
  double total = 0.0;
  for (Eigen::Index t = 0; t < s.rows(); ++t)
    total += logistic_loss_from_margin(u.dot(softmax_values(s.A.row(t).transpose())));
  return total / static_cast<double>(s.rows());
}

MultiRowGradient field_multirow_logistic(const MultiRowState& s) {
  const double inv_rows = 1.0 / static_cast<double>(s.rows());
  const Vec u = s.V * s.beta_star;
  MultiRowGradient g;
  g.dA.resize(s.rows(), s.p());
  Vec weighted = Vec::Zero(s.p());
  for (Eigen::Index t = 0; t < s.rows(); ++t) {
    const Vec sigma = softmax_values(s.A.row(t).transpose());
    const double gamma = gamma_from_margin(u.dot(sigma));
    weighted += gamma * sigma;
    g.dA.row(t) = (gamma * inv_rows) * sigma.cwiseProduct((u.array() - u.dot(sigma)).matrix()).transpose();
  }
  g.dV = inv_rows * weighted * s.beta_star.transpose();
  return g;
}

}  // namespace vsflow
