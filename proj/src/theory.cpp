#include "vsflow/theory.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

namespace vsflow {

nlohmann::json to_json(const VerifierReport& r) {
  return {{"name", r.name}, {"passed", r.passed}, {"tolerance", r.tolerance}, {"witnesses", r.witnesses}};
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void require_samples(const Trajectory& traj, const char* who) {
  if (traj.samples.empty() || !traj.field) throw InvalidInput(std::string(who) + ": empty trajectory");
}

void require_kind(const Trajectory& traj, std::initializer_list<FieldKind> kinds, const char* who) {
  require_samples(traj, who);
  for (FieldKind k : kinds)
    if (traj.field->kind() == k) return;
  throw InapplicableVerifier(std::string(who) + " does not apply to " + traj.field->name());
}

bool is_softmax_logistic(const FlowField& f) {
  return f.kind() == FieldKind::logistic_full || f.kind() == FieldKind::logistic_reduced ||
         (f.kind() == FieldKind::general_norm && score_map_of(f) == ScoreMap::exp);
}

void require_softmax_logistic(const Trajectory& traj, const char* who) {
  require_samples(traj, who);
  if (!is_softmax_logistic(*traj.field))
    throw InapplicableVerifier(std::string(who) + " needs a softmax logistic trajectory, got " + traj.field->name());
}

void require_ordering_field(const Trajectory& traj, const char* who) {
  require_samples(traj, who);
  const FieldKind k = traj.field->kind();
  if (is_softmax_logistic(*traj.field) || k == FieldKind::regression_full || k == FieldKind::regression_reduced) return;
  throw InapplicableVerifier(std::string(who) + " does not apply to " + traj.field->name());
}

struct Fit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

Fit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  Fit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += r * r;
  }
  f.r2 = syy > 0 ? 1.0 - ss_res / syy : 0.0;
  return f;
}

// Sample closest to t on a log scale.
const TrajectorySample& sample_near(const Trajectory& traj, double t) {
  const TrajectorySample* best = &traj.samples.front();
  double best_d = kInf;
  for (const auto& s : traj.samples) {
    if (s.t <= 0) continue;
    const double d = std::abs(std::log(s.t / t));
    if (d < best_d) best_d = d, best = &s;
  }
  return *best;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int argmax(const Vec& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

std::vector<int> reference_order(const Trajectory& traj) {
  require_samples(traj, "reference_order");
  const auto& s0 = traj.front();
  return s0.u_order.tie ? s0.sigma_order.perm : s0.u_order.perm;
}

std::vector<LyapunovSample> lyapunov_samples(const Trajectory& traj) {
  const std::vector<int> ord = reference_order(traj);
  std::vector<LyapunovSample> out;
  for (const auto& s : traj.samples) {
    for (std::size_t x = 0; x < ord.size(); ++x)
      for (std::size_t y = x + 1; y < ord.size(); ++y) {
        const int i = ord[x], j = ord[y];
        const double phi = (s.obs.u[i] - s.obs.u[j]) * -(std::exp(-s.obs.a[i]) - std::exp(-s.obs.a[j]));
        out.push_back({s.t, i, j, phi});
      }
  }
  return out;
}

VerifierReport verify_order_preservation(const Trajectory& traj) {
  require_ordering_field(traj, "order_preservation");
  const std::vector<int> ord = reference_order(traj);
  VerifierReport r{"order_preservation", true, kOrderMargin, {}};
  double min_u = kInf, min_s = kInf, t_u = 0, t_s = 0;
  double first_violation = kInf;
  long violations = 0;
  for (const auto& s : traj.samples) {
    if (s.t <= 0) continue;
    for (std::size_t k = 0; k + 1 < ord.size(); ++k) {
      const double gu = s.obs.u[ord[k]] - s.obs.u[ord[k + 1]];
      const double gs = s.obs.sigma[ord[k]] - s.obs.sigma[ord[k + 1]];
      if (gu < min_u) min_u = gu, t_u = s.t;
      if (gs < min_s) min_s = gs, t_s = s.t;
      // Exact ties fail: they are events, never passes.
      const bool bad = !(gu > -kOrderMargin) || gu == 0.0 || !(gs > -kOrderMargin) || gs == 0.0;
      if (bad) {
        ++violations;
        first_violation = std::min(first_violation, s.t);
      }
    }
  }
  r.passed = violations == 0;
  r.witnesses["min_u_gap"] = num(min_u);
  r.witnesses["min_u_gap_t"] = t_u;
  r.witnesses["min_sigma_gap"] = num(min_s);
  r.witnesses["min_sigma_gap_t"] = t_s;
  r.witnesses["violations"] = violations;
  r.witnesses["first_violation_t"] = num(first_violation);
  return r;
}

VerifierReport verify_repulsion(const Trajectory& traj) {
  require_ordering_field(traj, "repulsion");
  const std::vector<int> ord = reference_order(traj);
  VerifierReport r{"repulsion", true, kOrderMargin, {}};
  double min_inc = kInf, t_inc = 0, min_net = kInf;
  for (std::size_t x = 0; x < ord.size(); ++x)
    for (std::size_t y = x + 1; y < ord.size(); ++y) {
      const int i = ord[x], j = ord[y];
      for (std::size_t k = 1; k < traj.samples.size(); ++k) {
        const auto& a = traj.samples[k - 1].obs.u;
        const auto& b = traj.samples[k].obs.u;
        const double inc = (b[i] - b[j]) - (a[i] - a[j]);
        if (inc < min_inc) min_inc = inc, t_inc = traj.samples[k].t;
      }
      const auto& u0 = traj.front().obs.u;
      const auto& u1 = traj.back().obs.u;
      min_net = std::min(min_net, (u1[i] - u1[j]) - (u0[i] - u0[j]));
    }
  if (traj.samples.size() < 2) min_inc = 0.0, min_net = 0.0;
  r.passed = min_inc > -kOrderMargin && min_net > 0.0;
  r.witnesses["min_increment"] = num(min_inc);
  r.witnesses["min_increment_t"] = t_inc;
  r.witnesses["min_net_growth"] = num(min_net);
  return r;
}

VerifierReport verify_lyapunov(const Trajectory& traj) {
  require_softmax_logistic(traj, "lyapunov");
  VerifierReport r{"lyapunov", true, kOrderMargin, {}};
  const auto samples = lyapunov_samples(traj);
  const std::size_t pairs = static_cast<std::size_t>(traj.field->p() * (traj.field->p() - 1) / 2);
  double max_abs_initial = 0, min_pos = kInf, t_pos = 0, min_inc = kInf, t_inc = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (s.t <= 0) {
      max_abs_initial = std::max(max_abs_initial, std::abs(s.phi));
    } else if (s.phi < min_pos) {
      min_pos = s.phi, t_pos = s.t;
    }
    if (k >= pairs) {
      const auto& prev = samples[k - pairs];
      const double inc = (s.phi - prev.phi) / std::max(1.0, std::abs(prev.phi));
      if (inc < min_inc) min_inc = inc, t_inc = s.t;
    }
  }
  if (min_inc == kInf) min_inc = 0.0;
  const bool initial_ok = traj.front().t > 0 || max_abs_initial <= 1e-12;
  r.passed = initial_ok && min_pos > 0.0 && min_inc >= -kOrderMargin;
  r.witnesses["max_abs_phi_t0"] = max_abs_initial;
  r.witnesses["min_phi"] = num(min_pos);
  r.witnesses["min_phi_t"] = t_pos;
  r.witnesses["min_relative_increment"] = num(min_inc);
  r.witnesses["min_relative_increment_t"] = t_inc;
  return r;
}

VerifierReport verify_ratio_bound(const Trajectory& traj) {
  require_softmax_logistic(traj, "ratio_bound");
  const auto& s0 = traj.front();
  const std::vector<int> ord = s0.u_order.perm;
  double delta = kInf;
  for (std::size_t k = 0; k + 1 < ord.size(); ++k) delta = std::min(delta, s0.obs.u[ord[k]] - s0.obs.u[ord[k + 1]]);
  if (!(delta > 0.0)) throw InvalidInput("ratio bound needs strictly ordered u(0) (delta <= 0)");
  const double p = static_cast<double>(traj.field->p());
  const int top = ord[0];
  VerifierReport r{"ratio_bound", true, 1e-9, {}};
  double worst = -kInf, t_worst = 0;
  for (const auto& s : traj.samples) {
    const double bound = 1.0 / (1.0 + (delta / p) * s.int_gamma);
    for (Eigen::Index j = 0; j < s.obs.sigma.size(); ++j) {
      if (j == top) continue;
      const double slack = s.obs.sigma[j] / s.obs.sigma[top] - bound;
      if (slack > worst) worst = slack, t_worst = s.t;
    }
  }
  r.passed = worst <= r.tolerance;
  r.witnesses["delta"] = delta;
  r.witnesses["worst_slack"] = worst;
  r.witnesses["worst_slack_t"] = t_worst;
  r.witnesses["final_bound"] = 1.0 / (1.0 + (delta / p) * traj.back().int_gamma);
  return r;
}

VerifierReport verify_polarization_growth(const Trajectory& traj) {
  require_samples(traj, "polarization_growth");
  const double t_end = traj.back().t;
  if (t_end < 1e4) throw InapplicableVerifier("polarization_growth needs t_end >= 1e4");
  std::vector<double> x, y;
  for (const auto& s : traj.samples)
    if (s.t >= t_end / 100 * (1 - 1e-12)) x.push_back(std::log(s.t)), y.push_back(s.int_gamma);
  if (x.size() < 3) throw InapplicableVerifier("polarization_growth needs at least three samples in the last two decades");
  const Fit fit = least_squares(x, y);
  VerifierReport r{"polarization_growth", true, 0.99, {}};
  r.passed = fit.r2 > 0.99 && fit.slope >= 0.2 && fit.slope <= 5.0;
  r.witnesses["slope"] = fit.slope;
  r.witnesses["intercept"] = fit.intercept;
  r.witnesses["r2"] = fit.r2;
  r.witnesses["slope_window"] = {0.2, 5.0};
  r.witnesses["fit_samples"] = x.size();
  r.witnesses["last_decade_increment"] = traj.back().int_gamma - sample_near(traj, t_end / 10).int_gamma;

  // Lower bound from u_top(t) >= log(t |b*|^2 / (2p) - c0 / 2) with
  // c0 = -(u_top(0) + exp(u_top(0))) and int gamma >= (u_top(t) - u_top(0)) / |b*|^2.
  if (is_softmax_logistic(*traj.field)) {
    const int top = traj.front().u_order.perm[0];
    const double u00 = traj.front().obs.u[top];
    const double bb = traj.field->beta_star().squaredNorm();
    const double p = static_cast<double>(traj.field->p());
    const double c0 = -(u00 + std::exp(u00));
    double min_slack = kInf;
    for (const auto& s : traj.samples) {
      const double arg = s.t * bb / (2 * p) - c0 / 2;
      if (s.t <= 0 || arg <= 0) continue;
      min_slack = std::min(min_slack, s.int_gamma - (std::log(arg) - u00) / bb);
    }
    r.witnesses["lower_bound_c0"] = c0;
    r.witnesses["lower_bound_min_slack"] = num(min_slack);
    r.witnesses["lower_bound_holds"] = min_slack >= -1e-9;
  }
  return r;
}

VerifierReport verify_onehot_limit(const Trajectory& traj, double eps) {
  require_samples(traj, "onehot_limit");
  const int top = reference_order(traj)[0];
  const auto& b = traj.back();
  VerifierReport r{"onehot_limit", true, eps, {}};
  const int arg = argmax(b.obs.sigma);
  r.passed = b.obs.sigma[top] >= 1.0 - eps && arg == top;
  r.witnesses["sigma_top_t_end"] = num(b.obs.sigma[top]);
  r.witnesses["top_index"] = top;
  r.witnesses["argmax_sigma_t_end"] = arg;
  r.witnesses["entropy_t_end"] = num(b.obs.entropy);
  return r;
}

VerifierReport verify_vanishing_loss(const Trajectory& traj, double tol) {
  require_samples(traj, "vanishing_loss");
  VerifierReport r{"vanishing_loss", true, tol, {}};
  double max_increase = -kInf, t_inc = 0;
  for (std::size_t k = 1; k < traj.samples.size(); ++k) {
    const double inc = traj.samples[k].obs.loss - traj.samples[k - 1].obs.loss;
    if (inc > max_increase) max_increase = inc, t_inc = traj.samples[k].t;
  }
  if (traj.samples.size() < 2) max_increase = 0.0;
  r.passed = traj.back().obs.loss < tol && max_increase <= 1e-10;
  r.witnesses["loss_t_end"] = num(traj.back().obs.loss);
  r.witnesses["max_loss_increase"] = num(max_increase);
  r.witnesses["max_loss_increase_t"] = t_inc;
  r.witnesses["monotone_margin"] = 1e-10;
  return r;
}

VerifierReport verify_exponential_decay(const Trajectory& traj) {
  require_samples(traj, "exponential_decay");
  // Past the initial transient and well above the floor the integrator's
  // absolute tolerance leaves on the loss.
  const double start = 1e-2 * traj.front().obs.loss;
  const double floor = 1e-12 * traj.front().obs.loss;
  std::vector<double> x, y;
  for (const auto& s : traj.samples)
    if (s.t > 0 && s.obs.loss <= start && s.obs.loss > floor) x.push_back(s.t), y.push_back(std::log(s.obs.loss));
  VerifierReport r{"exponential_decay", false, 0.99, {}};
  r.witnesses["fit_samples"] = x.size();
  if (x.size() < 5) {
    r.witnesses["reason"] = "fewer than five samples with loss in (1e-12, 1e-2] * loss(0)";
    return r;
  }
  const Fit fit = least_squares(x, y);
  r.passed = fit.r2 > 0.99 && fit.slope < 0.0;
  r.witnesses["rate"] = -fit.slope;
  r.witnesses["r2"] = fit.r2;
  r.witnesses["fit_t_begin"] = x.front();
  r.witnesses["fit_t_end"] = x.back();
  return r;
}

VerifierReport verify_nonmaximal_rates(const Trajectory& traj) {
  require_kind(traj, {FieldKind::logistic_full, FieldKind::logistic_reduced}, "nonmaximal_rates");
  const double t_end = traj.back().t;
  if (t_end < 1e4) throw InapplicableVerifier("nonmaximal_rates needs t_end >= 1e4");
  const int top = traj.front().u_order.perm[0];
  const auto& b = traj.back();
  const auto& d = sample_near(traj, t_end / 10);
  const double du_top = b.obs.u[top] - d.obs.u[top];
  double du_other = -kInf;
  for (Eigen::Index j = 0; j < b.obs.u.size(); ++j)
    if (j != top) du_other = std::max(du_other, b.obs.u[j] - d.obs.u[j]);
  const bool plateau = du_other < 0.05 * du_top;

  double worst_ratio = 0;
  for (Eigen::Index j = 0; j < b.obs.sigma.size(); ++j) {
    if (j == top) continue;
    double lo = kInf, hi = 0;
    for (const auto& s : traj.samples) {
      if (s.t < d.t) continue;
      const double lt = std::log(s.t);
      const double v = s.obs.sigma[j] * lt * lt;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    worst_ratio = std::max(worst_ratio, lo > 0 ? hi / lo : kInf);
  }
  const bool bounded = worst_ratio < 10.0;

  VerifierReport r{"nonmaximal_rates", true, 0.05, {}};
  r.witnesses["u_top_growth_last_decade"] = du_top;
  r.witnesses["max_u_other_growth_last_decade"] = du_other;
  r.witnesses["plateau"] = plateau;
  r.witnesses["max_sigma_log2_ratio"] = num(worst_ratio);
  r.witnesses["sigma_log2_bounded"] = bounded;
  bool rank_ok = true;
  if (auto V = traj.field->value_matrix(b.state)) {
    Eigen::JacobiSVD<Mat> svd(*V);
    const Vec& sv = svd.singularValues();
    const double ratio = sv.size() > 1 && sv[0] > 0 ? sv[1] / sv[0] : 0.0;
    rank_ok = ratio < 0.1;
    r.witnesses["singular_value_ratio"] = ratio;
  }
  r.passed = plateau && bounded && rank_ok;
  return r;
}

VerifierReport verify_rank_one(const Trajectory& traj) {
  require_samples(traj, "rank_one");
  const FieldKind k = traj.field->kind();
  if (k == FieldKind::tied || k == FieldKind::multirow || !traj.field->value_matrix(traj.front().state))
    throw InapplicableVerifier("rank_one needs a full-coordinate value matrix, got " + traj.field->name());
  const Vec b = traj.field->beta_star() / traj.field->beta_star().norm();
  VerifierReport r{"rank_one", true, 1e-8, {}};
  double worst = 0, t_worst = 0, worst_residual = 0;
  for (const auto& s : traj.samples) {
    const Mat V = *traj.field->value_matrix(s.state);
    const Mat perp = V - b * (b.transpose() * V);
    const double residual = perp.norm();
    const double ratio = residual / (1.0 + V.norm());
    if (ratio > worst) worst = ratio, t_worst = s.t, worst_residual = residual;
  }
  r.passed = worst < r.tolerance;
  r.witnesses["max_relative_residual"] = worst;
  r.witnesses["max_residual"] = worst_residual;
  r.witnesses["max_residual_t"] = t_worst;
  return r;
}

VerifierReport verify_general_norm_nocrossing(const Trajectory& traj) {
  require_samples(traj, "general_norm_nocrossing");
  const FlowField& field = *traj.field;
  const bool general = field.kind() == FieldKind::general_norm;
  if (!general && !is_softmax_logistic(field))
    throw InapplicableVerifier("general_norm_nocrossing does not apply to " + field.name());
  const ScoreMap f = general ? score_map_of(field) : ScoreMap::exp;
  if (f == ScoreMap::exp) {
    VerifierReport r = verify_order_preservation(traj);
    r.name = "general_norm_nocrossing";
    return r;
  }
  for (const auto& s : traj.samples)
    if (f == ScoreMap::square && s.obs.a.minCoeff() <= 0.0)
      throw InapplicableVerifier("f = square is not increasing where a <= 0");

  auto G = [f](double s) { return f == ScoreMap::square ? 0.5 * std::log(s) : s; };
  const std::vector<int> ord = reference_order(traj);
  double min_u = kInf, min_a = kInf, min_phi = kInf, t_u = 0, t_a = 0, t_phi = 0;
  bool exact_tie = false;
  for (const auto& s : traj.samples) {
    for (std::size_t k = 0; k + 1 < ord.size(); ++k) {
      const double gu = s.obs.u[ord[k]] - s.obs.u[ord[k + 1]];
      const double ga = s.obs.a[ord[k]] - s.obs.a[ord[k + 1]];
      exact_tie = exact_tie || gu == 0.0;
      if (gu < min_u) min_u = gu, t_u = s.t;
      if (ga < min_a) min_a = ga, t_a = s.t;
    }
    for (std::size_t x = 0; x < ord.size(); ++x)
      for (std::size_t y = x + 1; y < ord.size(); ++y) {
        const int i = ord[x], j = ord[y];
        const double phi = (G(s.obs.a[i]) - G(s.obs.a[j])) * (s.obs.u[i] - s.obs.u[j]);
        if (phi < min_phi) min_phi = phi, t_phi = s.t;
      }
  }
  VerifierReport r{"general_norm_nocrossing", true, kOrderMargin, {}};
  r.passed = min_u > -kOrderMargin && !exact_tie && min_a >= -kOrderMargin && min_phi >= -kOrderMargin;
  r.witnesses["f"] = std::string(to_string(f));
  r.witnesses["min_u_gap"] = num(min_u);
  r.witnesses["min_u_gap_t"] = t_u;
  r.witnesses["min_a_gap"] = num(min_a);
  r.witnesses["min_a_gap_t"] = t_a;
  r.witnesses["min_potential"] = num(min_phi);
  r.witnesses["min_potential_t"] = t_phi;
  r.witnesses["max_sigma_t_end"] = num(traj.back().obs.sigma.maxCoeff());
  return r;
}

VerifierReport verify_sink_formation(const Trajectory& traj, double eps, bool per_row_argmax) {
  require_kind(traj, {FieldKind::multirow}, "sink_formation");
  const Mat rows = traj.field->attention_rows(traj.back().state);
  const int top = traj.front().u_order.perm[0];
  double min_mass = kInf;
  std::vector<int> sinks;
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    const Vec row = rows.row(t).transpose();
    const int k = per_row_argmax ? argmax(row) : top;
    sinks.push_back(k);
    min_mass = std::min(min_mass, row[k]);
  }
  VerifierReport r{"sink_formation", true, eps, {}};
  r.passed = min_mass > 1.0 - eps;
  r.witnesses["min_row_sink_mass"] = num(min_mass);
  r.witnesses["sink_indices"] = sinks;
  r.witnesses["per_row_argmax"] = per_row_argmax;
  return r;
}

VerifierReport verify_massive_activation(const Trajectory& traj) {
  require_kind(traj, {FieldKind::tied}, "massive_activation");
  const FlowField& field = *traj.field;
  const auto& b = traj.back();
  const Mat R = *field.value_matrix(b.state);
  const Vec norms = R.colwise().norm().transpose();
  auto ratio_at = [&](int m) {
    std::vector<double> others;
    for (Eigen::Index j = 0; j < norms.size(); ++j)
      if (j != m) others.push_back(norms[j]);
    return norms[m] / median(others);
  };
  // The outlier column is the one the attention selects.
  const int m = argmax(b.obs.sigma);
  const int m_a = argmax(b.obs.a);
  const double ratio = ratio_at(m);

  const double t_end = b.t;
  double min_inc = kInf, first = kInf, last = 0;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : traj.samples) {
    if (s.t < t_end / 10) continue;
    const double n = field.value_matrix(s.state)->col(m).norm();
    if (!std::isnan(prev)) min_inc = std::min(min_inc, n - prev);
    if (first == kInf) first = n;
    last = n;
    prev = n;
  }
  const bool increasing = min_inc != kInf && min_inc > -kOrderMargin && last > first;

  VerifierReport r{"massive_activation", true, 3.0, {}};
  r.passed = ratio > 3.0 && increasing;
  r.witnesses["column"] = m;
  r.witnesses["norm_ratio"] = ratio;
  r.witnesses["column_norm_t_end"] = norms[m];
  r.witnesses["column_norm_growth_last_decade"] = last - first;
  r.witnesses["min_column_norm_increment"] = num(min_inc);
  r.witnesses["argmax_a"] = m_a;
  r.witnesses["norm_ratio_at_argmax_a"] = ratio_at(m_a);
  r.witnesses["max_sigma_t_end"] = num(b.obs.sigma.maxCoeff());
  return r;
}

VerifierReport verify_partial_polarization(const Trajectory& traj, double eps) {
  require_samples(traj, "partial_polarization");
  const double h0 = traj.front().obs.entropy, h1 = traj.back().obs.entropy;
  const double mx = traj.back().obs.sigma.maxCoeff();
  VerifierReport r{"partial_polarization", true, eps, {}};
  r.passed = h1 < h0 && mx < 1.0 - eps;
  r.witnesses["entropy_t0"] = num(h0);
  r.witnesses["entropy_t_end"] = num(h1);
  r.witnesses["max_sigma_t_end"] = num(mx);
  return r;
}

VerifierReport verify_conservation(const Trajectory& traj, double tol) {
  require_samples(traj, "conservation");
  const Vec inv0 = traj.field->logit_invariants(traj.front().state);
  if (inv0.size() == 0) throw InapplicableVerifier(traj.field->name() + " has no logit invariant");
  double worst = 0, t_worst = 0;
  for (const auto& s : traj.samples) {
    const Vec inv = traj.field->logit_invariants(s.state);
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
      const double drift = std::abs(inv[i] - inv0[i]) / std::max(1.0, std::abs(inv0[i]));
      if (drift > worst) worst = drift, t_worst = s.t;
    }
  }
  VerifierReport r{"conservation", true, tol, {}};
  r.passed = worst < tol;
  r.witnesses["max_drift"] = worst;
  r.witnesses["max_drift_t"] = t_worst;
  r.witnesses["invariants"] = inv0.size();
  return r;
}

VerifierReport verify_descent(const Trajectory& traj) {
  require_samples(traj, "descent");
  const FlowField& field = *traj.field;
  const double p = static_cast<double>(field.p());
  double worst = -kInf, t_worst = 0, max_increase = 0;
  long skipped = 0;
  Vec dx;
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    const auto& s = traj.samples[k];
    if (k > 0) max_increase = std::max(max_increase, s.obs.loss - traj.samples[k - 1].obs.loss);
    field.evaluate(s.state, dx);
    const double speed = dx.norm();
    double dldt = 0.0;
    bool ok = speed == 0.0;
    for (double step = 1e-5; !ok && step > 1e-9; step *= 0.1) {
      try {
        const double h = step / speed;
        dldt = (field.loss(s.state + h * dx) - field.loss(s.state - h * dx)) / (2 * h);
        ok = true;
      } catch (const DomainError&) {
      } catch (const DegenerateNormalization&) {
      }
    }
    if (!ok) {
      ++skipped;
      continue;
    }
    const double g2 = s.obs.grad_beta_norm_sq;
    const double slack = dldt + g2 / p - 1e-6 * (1.0 + g2);
    if (slack > worst) worst = slack, t_worst = s.t;
  }
  VerifierReport r{"descent", true, 1e-6, {}};
  r.passed = worst <= 0.0 && max_increase <= 1e-10 && skipped == 0;
  r.witnesses["worst_slack"] = num(worst);
  r.witnesses["worst_slack_t"] = t_worst;
  r.witnesses["max_loss_increase"] = max_increase;
  r.witnesses["skipped_samples"] = skipped;
  r.witnesses["bound_is_theorem"] = field.descent_bound_applies();
  return r;
}

const std::vector<std::string>& verifier_ids() {
  static const std::vector<std::string> ids{
      "order_preservation", "repulsion",       "lyapunov",        "ratio_bound",
      "polarization_growth", "onehot_limit",   "vanishing_loss",  "exponential_decay",
      "nonmaximal_rates",   "rank_one",        "general_norm_nocrossing", "sink_formation",
      "massive_activation", "partial_polarization", "conservation", "descent"};
  return ids;
}

VerifierReport run_verifier(const std::string& id, const Trajectory& traj, const VerifierOptions& o) {
  if (id == "order_preservation") return verify_order_preservation(traj);
  if (id == "repulsion") return verify_repulsion(traj);
  if (id == "lyapunov") return verify_lyapunov(traj);
  if (id == "ratio_bound") return verify_ratio_bound(traj);
  if (id == "polarization_growth") return verify_polarization_growth(traj);
  if (id == "onehot_limit") return verify_onehot_limit(traj, o.onehot_eps);
  if (id == "vanishing_loss") return verify_vanishing_loss(traj, o.loss_tol);
  if (id == "exponential_decay") return verify_exponential_decay(traj);
  if (id == "nonmaximal_rates") return verify_nonmaximal_rates(traj);
  if (id == "rank_one") return verify_rank_one(traj);
  if (id == "general_norm_nocrossing") return verify_general_norm_nocrossing(traj);
  if (id == "sink_formation") return verify_sink_formation(traj, o.sink_eps, o.per_row_argmax);
  if (id == "massive_activation") return verify_massive_activation(traj);
  if (id == "partial_polarization") return verify_partial_polarization(traj, o.partial_eps);
  if (id == "conservation") return verify_conservation(traj, o.conservation_tol);
  if (id == "descent") return verify_descent(traj);
  throw InvalidInput("unknown verifier '" + id + "'");
}

}  // namespace vsflow
