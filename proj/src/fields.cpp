#include "vsflow/fields.hpp"

#include "vsflow/metrics.hpp"

#include <cmath>

namespace vsflow {

std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::logistic_full: return "logistic-full";
    case FieldKind::logistic_reduced: return "logistic-reduced";
    case FieldKind::regression_full: return "regression-full";
    case FieldKind::regression_reduced: return "regression-reduced";
    case FieldKind::regression_conditioned: return "regression-conditioned";
    case FieldKind::kl: return "kl";
    case FieldKind::general_norm: return "general-norm";
    case FieldKind::elementwise: return "elementwise";
    case FieldKind::tied: return "tied";
    case FieldKind::multirow: return "multirow";
  }
  return "?";
}

bool is_logistic_family(FieldKind kind) {
  switch (kind) {
    case FieldKind::logistic_full:
    case FieldKind::logistic_reduced:
    case FieldKind::general_norm:
    case FieldKind::elementwise:
    case FieldKind::tied:
    case FieldKind::multirow: return true;
    default: return false;
  }
}

Vec pack(const FullState& s) {
  const Eigen::Index p = s.p();
  Vec x(p * p + p);
  x.head(p * p) = Eigen::Map<const Vec>(s.V.data(), p * p);
  x.tail(p) = s.a;
  return x;
}

FullState unpack_full(const Vec& x, const Vec& beta_star) {
  const Eigen::Index p = beta_star.size();
  if (x.size() != p * p + p) throw InvalidInput("packed full state has the wrong size");
  FullState s;
  s.V = Eigen::Map<const Mat>(x.data(), p, p);
  s.a = x.tail(p);
  s.beta_star = beta_star;
  return s;
}

Vec pack(const ReducedState& s) {
  Vec x(2 * s.p());
  x << s.u, s.a;
  return x;
}

ReducedState unpack_reduced(const Vec& x, double beta_star_norm_sq) {
  if (x.size() % 2 != 0) throw InvalidInput("packed reduced state has odd size");
  const Eigen::Index p = x.size() / 2;
  return ReducedState{x.head(p), x.tail(p), beta_star_norm_sq};
}

Vec pack(const TiedState& s) { return pack(FullState{s.R, s.a, s.beta_star}); }

TiedState unpack_tied(const Vec& x, const Vec& beta_star) {
  FullState f = unpack_full(x, beta_star);
  return TiedState{std::move(f.V), std::move(f.a), std::move(f.beta_star)};
}

Vec pack(const MultiRowState& s) {
  const Eigen::Index nv = s.V.size();
  Vec x(nv + s.A.size());
  x.head(nv) = Eigen::Map<const Vec>(s.V.data(), nv);
  x.tail(s.A.size()) = Eigen::Map<const Vec>(s.A.data(), s.A.size());
  return x;
}

MultiRowState unpack_multirow(const Vec& x, Eigen::Index rows, Eigen::Index p, const Vec& beta_star) {
  const Eigen::Index d = beta_star.size();
  if (x.size() != p * d + rows * p) throw InvalidInput("packed multi-row state has the wrong size");
  MultiRowState s;
  s.V = Eigen::Map<const Mat>(x.data(), p, d);
  s.A = Eigen::Map<const Mat>(x.data() + p * d, rows, p);
  s.beta_star = beta_star;
  return s;
}

namespace {

void write_full(const FullGradient& g, Vec& dx) {
  const Eigen::Index p = g.da.size();
  dx.resize(g.dV.size() + p);
  dx.head(g.dV.size()) = Eigen::Map<const Vec>(g.dV.data(), g.dV.size());
  dx.tail(p) = g.da;
}

void write_reduced(const ReducedGradient& g, Vec& dx) {
  dx.resize(2 * g.da.size());
  dx << g.du, g.da;
}

Vec sum_invariant(const Vec& a) { return Vec::Constant(1, a.sum()); }

// Shared plumbing for fields whose state is (V, a) with V p x p.
class FullCoordinateField : public FlowField {
 public:
  explicit FullCoordinateField(Vec beta_star) : FlowField(std::move(beta_star)) {}
  Eigen::Index p() const override { return beta_star_.size(); }
  Eigen::Index state_size() const override { return p() * p() + p(); }
  std::optional<Mat> value_matrix(const Vec& x) const override { return unpack_full(x, beta_star_).V; }
  Vec logit_invariants(const Vec& x) const override { return sum_invariant(x.tail(p())); }

 protected:
  FullState state(const Vec& x) const { return unpack_full(x, beta_star_); }

  Observation base_observation(const FullState& s, Vec sigma) const {
    Observation o;
    o.u = s.V.transpose() * beta_star_;
    o.a = s.a;
    o.entropy = entropy_values(sigma);
    o.sigma = std::move(sigma);
    return o;
  }
};

class LogisticFullField final : public FullCoordinateField {
 public:
  using FullCoordinateField::FullCoordinateField;
  FieldKind kind() const override { return FieldKind::logistic_full; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const FullState s = state(x);
    write_full(field_logistic_full(s), dx);
    return gamma_from_margin(beta_star_.dot(s.V * softmax_values(s.a)));
  }
  double loss(const Vec& x) const override { return loss_logistic_full(state(x)); }
  Observation observe(const Vec& x) const override {
    const FullState s = state(x);
    Observation o = base_observation(s, softmax_values(s.a));
    const double margin = o.u.dot(o.sigma);
    o.loss = logistic_loss_from_margin(margin);
    o.gamma = gamma_from_margin(margin);
    o.grad_beta_norm_sq = o.gamma * o.gamma * beta_star_.squaredNorm();
    return o;
  }
};

class RegressionFullField final : public FullCoordinateField {
 public:
  using FullCoordinateField::FullCoordinateField;
  FieldKind kind() const override { return FieldKind::regression_full; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const FullState s = state(x);
    write_full(field_regression_full(s), dx);
    return (beta_star_ - s.V * softmax_values(s.a)).norm() / beta_star_.norm();
  }
  double loss(const Vec& x) const override { return loss_regression_full(state(x)); }
  Observation observe(const Vec& x) const override {
    const FullState s = state(x);
    Observation o = base_observation(s, softmax_values(s.a));
    const Vec residual = beta_star_ - s.V * o.sigma;
    o.loss = 0.5 * residual.squaredNorm();
    o.gamma = residual.norm() / beta_star_.norm();
    o.grad_beta_norm_sq = residual.squaredNorm();
    return o;
  }
};

class ConditionedRegressionField final : public FullCoordinateField {
 public:
  ConditionedRegressionField(Vec beta_star, ConditionedDesign design)
      : FullCoordinateField(std::move(beta_star)), design_(std::move(design)) {}
  FieldKind kind() const override { return FieldKind::regression_conditioned; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const FullState s = state(x);
    write_full(field_regression_conditioned(s, design_), dx);
    const Vec back = design_.X.transpose() * (beta_star_ - design_.X * (s.V * softmax_values(s.a)));
    return back.norm() / beta_star_.norm();
  }
  double loss(const Vec& x) const override { return loss_regression_conditioned(state(x), design_); }
  Observation observe(const Vec& x) const override {
    const FullState s = state(x);
    Observation o = base_observation(s, softmax_values(s.a));
    // Projection of the effective value matrix X V onto the target.
    o.u = (design_.X * s.V).transpose() * beta_star_;
    const Vec residual = beta_star_ - design_.X * (s.V * o.sigma);
    const Vec back = design_.X.transpose() * residual;
    o.loss = 0.5 * residual.squaredNorm();
    o.gamma = back.norm() / beta_star_.norm();
    o.grad_beta_norm_sq = back.squaredNorm();
    return o;
  }
  const ConditionedDesign& design() const { return design_; }

 private:
  ConditionedDesign design_;
};

class KlField final : public FullCoordinateField {
 public:
  explicit KlField(SimplexVector p_star) : FullCoordinateField(p_star.values()), p_star_(std::move(p_star)) {}
  FieldKind kind() const override { return FieldKind::kl; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const FullState s = state(x);
    write_full(field_kl(s, p_star_), dx);
    const Vec beta = s.V * softmax_values(s.a);
    return p_star_.values().cwiseQuotient(beta).norm() / beta_star_.norm();
  }
  double loss(const Vec& x) const override { return loss_kl(state(x), p_star_); }
  Observation observe(const Vec& x) const override {
    const FullState s = state(x);
    Observation o = base_observation(s, softmax_values(s.a));
    o.loss = loss_kl(s, p_star_);
    const Vec r = p_star_.values().cwiseQuotient(s.V * o.sigma);
    o.gamma = r.norm() / beta_star_.norm();
    o.grad_beta_norm_sq = r.squaredNorm();
    return o;
  }

 private:
  SimplexVector p_star_;
};

class ElementwiseField final : public FullCoordinateField {
 public:
  ElementwiseField(Vec beta_star, ScoreMap g) : FullCoordinateField(std::move(beta_star)), g_(g) {
    if (!is_elementwise(g)) throw InvalidInput("elementwise field needs sigmoid or relu");
  }
  FieldKind kind() const override { return FieldKind::elementwise; }
  std::string name() const override { return "elementwise-" + std::string(to_string(g_)); }
  Vec logit_invariants(const Vec&) const override { return {}; }
  bool descent_bound_applies() const override { return false; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const FullState s = state(x);
    write_full(field_elementwise(s, g_), dx);
    return gamma_from_margin(beta_star_.dot(s.V * activated(s.a)));
  }
  double loss(const Vec& x) const override { return loss_elementwise(state(x), g_); }
  Observation observe(const Vec& x) const override {
    const FullState s = state(x);
    const Vec ga = activated(s.a);
    const double total = ga.sum();
    // Diagnostic normalization g(a) / sum g(a); undefined when every unit is dead.
    Vec sigma = total > 0.0 ? Vec(ga / total) : Vec::Constant(ga.size(), std::nan(""));
    Observation o = base_observation(s, sigma);
    if (!(total > 0.0)) o.entropy = std::nan("");
    const double margin = o.u.dot(ga);
    o.loss = logistic_loss_from_margin(margin);
    o.gamma = gamma_from_margin(margin);
    o.grad_beta_norm_sq = o.gamma * o.gamma * beta_star_.squaredNorm();
    return o;
  }
  ScoreMap activation() const { return g_; }

 private:
  Vec activated(const Vec& a) const {
    return a.unaryExpr([this](double v) { return apply(g_, v); });
  }
  ScoreMap g_;
};

class TiedField final : public FullCoordinateField {
 public:
  using FullCoordinateField::FullCoordinateField;
  FieldKind kind() const override { return FieldKind::tied; }
  Vec logit_invariants(const Vec&) const override { return {}; }
  bool descent_bound_applies() const override { return false; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const TiedState s = unpack_tied(x, beta_star_);
    write_full(field_tied(s), dx);
    return gamma_from_margin(beta_star_.dot(s.R * softmax_values(s.R * s.a)));
  }
  double loss(const Vec& x) const override { return loss_tied(unpack_tied(x, beta_star_)); }
  Observation observe(const Vec& x) const override {
    const TiedState s = unpack_tied(x, beta_star_);
    Observation o;
    o.sigma = softmax_values(s.R * s.a);
    o.u = s.R.transpose() * beta_star_;
    o.a = s.a;
    o.entropy = entropy_values(o.sigma);
    const double margin = o.u.dot(o.sigma);
    o.loss = logistic_loss_from_margin(margin);
    o.gamma = gamma_from_margin(margin);
    o.grad_beta_norm_sq = o.gamma * o.gamma * beta_star_.squaredNorm();
    return o;
  }
};

class ReducedCoordinateField : public FlowField {
 public:
  explicit ReducedCoordinateField(Vec beta_star) : FlowField(std::move(beta_star)) {}
  Eigen::Index p() const override { return beta_star_.size(); }
  Eigen::Index state_size() const override { return 2 * p(); }
  Vec logit_invariants(const Vec& x) const override { return sum_invariant(x.tail(p())); }

 protected:
  ReducedState state(const Vec& x) const { return unpack_reduced(x, beta_star_.squaredNorm()); }
};

class LogisticReducedField final : public ReducedCoordinateField {
 public:
  using ReducedCoordinateField::ReducedCoordinateField;
  FieldKind kind() const override { return FieldKind::logistic_reduced; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const ReducedState s = state(x);
    const double gamma = gamma_from_margin(s.u.dot(softmax_values(s.a)));
    write_reduced(reduced_field_with_gamma(s, gamma), dx);
    return gamma;
  }
  double loss(const Vec& x) const override { return loss_logistic_reduced(state(x)); }
  Observation observe(const Vec& x) const override {
    const ReducedState s = state(x);
    Observation o;
    o.sigma = softmax_values(s.a);
    o.u = s.u;
    o.a = s.a;
    o.entropy = entropy_values(o.sigma);
    const double margin = s.u.dot(o.sigma);
    o.loss = logistic_loss_from_margin(margin);
    o.gamma = gamma_from_margin(margin);
    o.grad_beta_norm_sq = o.gamma * o.gamma * s.beta_star_norm_sq;
    return o;
  }
};

class RegressionReducedField final : public ReducedCoordinateField {
 public:
  using ReducedCoordinateField::ReducedCoordinateField;
  FieldKind kind() const override { return FieldKind::regression_reduced; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const ReducedState s = state(x);
    const double gamma = gamma_regression_reduced(s);
    write_reduced(reduced_field_with_gamma(s, gamma), dx);
    return gamma;
  }
  double loss(const Vec& x) const override { return loss_regression_reduced(state(x)); }
  Observation observe(const Vec& x) const override {
    const ReducedState s = state(x);
    Observation o;
    o.sigma = softmax_values(s.a);
    o.u = s.u;
    o.a = s.a;
    o.entropy = entropy_values(o.sigma);
    o.gamma = gamma_regression_reduced(s);
    o.loss = 0.5 * s.beta_star_norm_sq * o.gamma * o.gamma;
    o.grad_beta_norm_sq = o.gamma * o.gamma * s.beta_star_norm_sq;
    return o;
  }
};

class GeneralNormField final : public ReducedCoordinateField {
 public:
  GeneralNormField(Vec beta_star, ScoreMap f) : ReducedCoordinateField(std::move(beta_star)), f_(f) {
    if (is_elementwise(f)) throw InvalidInput("general normalization needs exp, identity or square");
  }
  FieldKind kind() const override { return FieldKind::general_norm; }
  std::string name() const override { return "general-norm-" + std::string(to_string(f_)); }
  Vec logit_invariants(const Vec& x) const override {
    const Vec a = x.tail(p());
    // f(x) = x^k is homogeneous: a . f'(a) = k f(a) makes <da, a> vanish.
    if (f_ == ScoreMap::exp) return sum_invariant(a);
    return Vec::Constant(1, a.squaredNorm());
  }
  double evaluate(const Vec& x, Vec& dx) const override {
    const ReducedState s = state(x);
    // f = identity does not keep the weights positive; the flow stops at the
    // boundary instead of continuing with signed scores.
    if (f_ == ScoreMap::identity && s.a.minCoeff() < 0.0)
      throw DegenerateNormalization("identity normalization lost positivity (a logit became negative)");
    write_reduced(field_general_norm_logistic(s, f_), dx);
    return gamma_from_margin(s.u.dot(normalize_general_values(s.a, f_)));
  }
  double loss(const Vec& x) const override { return loss_general_norm_logistic(state(x), f_); }
  Observation observe(const Vec& x) const override {
    const ReducedState s = state(x);
    Observation o;
    o.sigma = normalize_general_values(s.a, f_);
    o.u = s.u;
    o.a = s.a;
    o.entropy = entropy_values(o.sigma);
    const double margin = s.u.dot(o.sigma);
    o.loss = logistic_loss_from_margin(margin);
    o.gamma = gamma_from_margin(margin);
    o.grad_beta_norm_sq = o.gamma * o.gamma * s.beta_star_norm_sq;
    return o;
  }
  ScoreMap map() const { return f_; }

 private:
  ScoreMap f_;
};

class MultiRowField final : public FlowField {
 public:
  MultiRowField(Vec beta_star, Eigen::Index rows, Eigen::Index p)
      : FlowField(std::move(beta_star)), rows_(rows), p_(p) {
    if (rows < 1 || p < 2) throw InvalidInput("multi-row field needs T >= 1 and p >= 2");
  }
  FieldKind kind() const override { return FieldKind::multirow; }
  Eigen::Index p() const override { return p_; }
  Eigen::Index state_size() const override { return p_ * beta_star_.size() + rows_ * p_; }
  double evaluate(const Vec& x, Vec& dx) const override {
    const MultiRowState s = state(x);
    const MultiRowGradient g = field_multirow_logistic(s);
    dx.resize(state_size());
    dx.head(g.dV.size()) = Eigen::Map<const Vec>(g.dV.data(), g.dV.size());
    dx.tail(g.dA.size()) = Eigen::Map<const Vec>(g.dA.data(), g.dA.size());
    return multirow_gammas(s).mean();
  }
  double loss(const Vec& x) const override { return loss_multirow_logistic(state(x)); }
  Observation observe(const Vec& x) const override {
    const MultiRowState s = state(x);
    const Mat rows = attention_rows(x);
    const Vec gammas = multirow_gammas(s);
    Observation o;
    o.sigma = rows.colwise().mean().transpose();
    o.a = s.A.colwise().mean().transpose();
    o.u = s.V * beta_star_;
    double h = 0.0;
    for (Eigen::Index t = 0; t < rows_; ++t) h += entropy_values(rows.row(t).transpose());
    o.entropy = h / static_cast<double>(rows_);
    o.loss = loss_multirow_logistic(s);
    o.gamma = gammas.mean();
    o.grad_beta_norm_sq = gammas.squaredNorm() * beta_star_.squaredNorm() / static_cast<double>(rows_ * rows_);
    return o;
  }
  Vec logit_invariants(const Vec& x) const override { return state(x).A.rowwise().sum(); }
  std::optional<Mat> value_matrix(const Vec& x) const override { return state(x).V; }
  Mat attention_rows(const Vec& x) const override {
    const MultiRowState s = state(x);
    Mat out(rows_, p_);
    for (Eigen::Index t = 0; t < rows_; ++t) out.row(t) = softmax_values(s.A.row(t).transpose()).transpose();
    return out;
  }
  Eigen::Index rows() const { return rows_; }

 private:
  MultiRowState state(const Vec& x) const { return unpack_multirow(x, rows_, p_, beta_star_); }
  Eigen::Index rows_;
  Eigen::Index p_;
};

Vec checked_target(Vec beta_star) {
  if (beta_star.size() < 2) throw InvalidInput("target needs p >= 2");
  if (!beta_star.allFinite() || beta_star.norm() == 0.0) throw InvalidInput("target must be finite and nonzero");
  return beta_star;
}

}  // namespace

FieldPtr make_logistic_full_field(Vec beta_star) {
  return std::make_shared<LogisticFullField>(checked_target(std::move(beta_star)));
}
FieldPtr make_logistic_reduced_field(Vec beta_star) {
  return std::make_shared<LogisticReducedField>(checked_target(std::move(beta_star)));
}
FieldPtr make_regression_full_field(Vec beta_star) {
  return std::make_shared<RegressionFullField>(checked_target(std::move(beta_star)));
}
FieldPtr make_regression_reduced_field(Vec beta_star) {
  return std::make_shared<RegressionReducedField>(checked_target(std::move(beta_star)));
}
FieldPtr make_regression_conditioned_field(Vec beta_star, ConditionedDesign design) {
  if (design.X.rows() != beta_star.size() || design.X.cols() != beta_star.size())
    throw InvalidInput("design must be p x p");
  return std::make_shared<ConditionedRegressionField>(checked_target(std::move(beta_star)), std::move(design));
}
FieldPtr make_kl_field(SimplexVector p_star) {
  if (p_star.is_signed()) throw InvalidInput("p* must be a probability vector");
  checked_target(p_star.values());
  return std::make_shared<KlField>(std::move(p_star));
}
FieldPtr make_general_norm_field(Vec beta_star, ScoreMap f) {
  return std::make_shared<GeneralNormField>(checked_target(std::move(beta_star)), f);
}
FieldPtr make_elementwise_field(Vec beta_star, ScoreMap g) {
  return std::make_shared<ElementwiseField>(checked_target(std::move(beta_star)), g);
}
FieldPtr make_tied_field(Vec beta_star) { return std::make_shared<TiedField>(checked_target(std::move(beta_star))); }
FieldPtr make_multirow_field(Vec beta_star, Eigen::Index rows, Eigen::Index p) {
  return std::make_shared<MultiRowField>(checked_target(std::move(beta_star)), rows, p);
}

ScoreMap score_map_of(const FlowField& field) {
  if (const auto* g = dynamic_cast<const GeneralNormField*>(&field)) return g->map();
  if (const auto* e = dynamic_cast<const ElementwiseField*>(&field)) return e->activation();
  return ScoreMap::exp;
}

}  // namespace vsflow
