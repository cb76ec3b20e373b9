#include "vsflow/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace vsflow {

void IntegratorConfig::validate() const {
  if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidInput("t_end must be positive and finite");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidInput("tolerances must be positive");
  if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
  if (!(dt_min > 0.0) || !(dt_min <= dt_max)) throw InvalidInput("need 0 < dt_min <= dt_max");
  switch (record.mode) {
    case RecordMode::stride:
      if (record.stride < 1) throw InvalidInput("record stride must be >= 1");
      break;
    case RecordMode::linear:
      if (!(record.spacing > 0.0)) throw InvalidInput("record spacing must be positive");
      break;
    case RecordMode::geometric:
      if (!(record.first > 0.0) || record.per_decade < 1) throw InvalidInput("geometric grid needs first > 0");
      break;
  }
}

Ordering descending_order(const Vec& v) {
  Ordering o;
  o.perm.resize(static_cast<std::size_t>(v.size()));
  std::iota(o.perm.begin(), o.perm.end(), 0);
  std::stable_sort(o.perm.begin(), o.perm.end(), [&](int i, int j) { return v[i] > v[j]; });
  for (std::size_t k = 1; k < o.perm.size(); ++k)
    if (v[o.perm[k - 1]] == v[o.perm[k]]) o.tie = true;
  return o;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b_hat (error estimate weights).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

// Evaluates the augmented right-hand side [field(x); gamma(x)].
class Augmented {
 public:
  explicit Augmented(const FlowField& field) : field_(field), n_(field.state_size()) {}
  void operator()(const Vec& y, Vec& dy) const {
    x_ = y.head(n_);
    const double gamma = field_.evaluate(x_, dx_);
    dy.resize(n_ + 1);
    dy.head(n_) = dx_;
    dy[n_] = gamma;
  }
  Eigen::Index n() const { return n_; }

 private:
  const FlowField& field_;
  Eigen::Index n_;
  mutable Vec x_, dx_;
};

class Recorder {
 public:
  Recorder(const RecordGrid& grid) : grid_(grid) {}

  // Next grid time strictly after t (infinity for stride mode).
  double next_after(double t) const {
    switch (grid_.mode) {
      case RecordMode::stride: return std::numeric_limits<double>::infinity();
      case RecordMode::linear: {
        double k = std::floor(t / grid_.spacing) + 1.0;
        double next = k * grid_.spacing;
        while (next <= t * (1.0 + 1e-13)) next = (++k) * grid_.spacing;
        return next;
      }
      case RecordMode::geometric: {
        const double base = std::log10(grid_.first);
        if (t < grid_.first) return grid_.first;
        double k = std::floor((std::log10(t) - base) * grid_.per_decade) + 1.0;
        double next = std::pow(10.0, base + k / grid_.per_decade);
        while (next <= t * (1.0 + 1e-13)) next = std::pow(10.0, base + (++k) / grid_.per_decade);
        return next;
      }
    }
    return std::numeric_limits<double>::infinity();
  }

 private:
  RecordGrid grid_;
};

double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double rtol, double atol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

void push_sample(Trajectory& traj, const FlowField& field, double t, const Vec& y) {
  const Eigen::Index n = field.state_size();
  TrajectorySample s;
  s.t = t;
  s.state = y.head(n);
  s.int_gamma = y[n];
  s.obs = field.observe(s.state);
  s.u_order = descending_order(s.obs.u);
  s.sigma_order = descending_order(s.obs.sigma);
  const bool prev_u_tie = !traj.samples.empty() && traj.samples.back().u_order.tie;
  const bool prev_s_tie = !traj.samples.empty() && traj.samples.back().sigma_order.tie;
  if (s.u_order.tie && !prev_u_tie) traj.events.push_back({t, "tie-u", "equal value-projection coordinates"});
  if (s.sigma_order.tie && !prev_s_tie) traj.events.push_back({t, "tie-sigma", "equal attention weights"});
  traj.samples.push_back(std::move(s));
}

std::string describe_time(const char* what, double t, double h) {
  std::ostringstream os;
  os.precision(17);
  os << what << " at t = " << t << " (dt = " << h << ")";
  return os.str();
}

// Core loop shared by integrate and continue_trajectory. `traj` already holds
// the sample at the start time.
void advance(Trajectory& traj, const FlowField& field, Vec y, double t, double t_end) {
  const IntegratorConfig& cfg = traj.config;
  const Augmented rhs(field);
  const Recorder recorder(cfg.record);
  const Eigen::Index m = rhs.n() + 1;

  std::array<Vec, 7> k;
  for (auto& v : k) v.resize(m);
  Vec y_stage(m), y_new(m), err(m);

  try {
    rhs(y, k[0]);
  } catch (const DomainError& e) {
    traj.events.push_back({t, "domain-violation", e.what()});
    throw DomainViolation(e.what(), traj);
  } catch (const DegenerateNormalization& e) {
    traj.events.push_back({t, "degenerate-normalization", e.what()});
    throw DomainViolation(e.what(), traj);
  }

  double h = traj.next_dt > 0.0 ? traj.next_dt : cfg.dt;
  if (cfg.method == Method::rk4_fixed) h = cfg.dt;
  h = std::min(h, cfg.dt_max);
  double next_record = recorder.next_after(t);
  int steps_since_record = 0;

  while (t < t_end) {
    const double target = std::min(next_record, t_end);
    const bool clipped = t + h >= target * (1.0 - 1e-14);
    const double step = clipped ? target - t : h;

    bool accepted = false;
    const char* stage_error = nullptr;  // event kind when a stage left the domain
    std::string domain_message;
    try {
      if (cfg.method == Method::rk4_fixed) {
        y_stage = y + (0.5 * step) * k[0];
        rhs(y_stage, k[1]);
        y_stage = y + (0.5 * step) * k[1];
        rhs(y_stage, k[2]);
        y_stage = y + step * k[2];
        rhs(y_stage, k[3]);
        y_new = y + (step / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3]);
        rhs(y_new, k[6]);
        accepted = true;
      } else {
        y_stage = y + step * a21 * k[0];
        rhs(y_stage, k[1]);
        y_stage = y + step * (a31 * k[0] + a32 * k[1]);
        rhs(y_stage, k[2]);
        y_stage = y + step * (a41 * k[0] + a42 * k[1] + a43 * k[2]);
        rhs(y_stage, k[3]);
        y_stage = y + step * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3]);
        rhs(y_stage, k[4]);
        y_stage = y + step * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] + a65 * k[4]);
        rhs(y_stage, k[5]);
        y_new = y + step * (b1 * k[0] + b3 * k[2] + b4 * k[3] + b5 * k[4] + b6 * k[5]);
        rhs(y_new, k[6]);
        err = step * (e1 * k[0] + e3 * k[2] + e4 * k[3] + e5 * k[4] + e6 * k[5] + e7 * k[6]);
        const double en = error_norm(err, y, y_new, cfg.rtol, cfg.atol);
        accepted = std::isfinite(en) && en <= 1.0;
        const double factor =
            !std::isfinite(en) ? 0.2 : (en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0));
        const double proposal = std::min(step * factor, cfg.dt_max);
        // A step shortened to hit a recording time keeps the previous proposal.
        h = (clipped && accepted) ? std::max(h, proposal) : proposal;
      }
    } catch (const DomainError& e) {
      stage_error = "domain-violation";
      domain_message = e.what();
      h = 0.25 * step;
    } catch (const DegenerateNormalization& e) {
      stage_error = "degenerate-normalization";
      domain_message = e.what();
      h = 0.25 * step;
    }

    if (!accepted) {
      ++traj.steps_rejected;
      if (h < cfg.dt_min) {
        if (stage_error) {
          traj.events.push_back({t, stage_error, domain_message});
          throw DomainViolation(describe_time(domain_message.c_str(), t, h), traj);
        }
        traj.events.push_back({t, "step-underflow", describe_time("step size below dt_min", t, h)});
        throw StiffnessError(describe_time("step size below dt_min", t, h), traj);
      }
      continue;
    }

    ++traj.steps_taken;
    ++steps_since_record;
    t = clipped ? target : t + step;
    y.swap(y_new);
    std::swap(k[0], k[6]);
    if (cfg.method == Method::rk45_adaptive) traj.next_dt = h;

    const bool on_grid = clipped && target == next_record;
    const bool by_stride = cfg.record.mode == RecordMode::stride && steps_since_record >= cfg.record.stride;
    if (on_grid || by_stride || t >= t_end) {
      push_sample(traj, field, t, y);
      steps_since_record = 0;
    }
    if (on_grid) next_record = recorder.next_after(t);
  }
}

}  // namespace

Trajectory integrate(const FieldPtr& field, const Vec& x0, const IntegratorConfig& config) {
  if (!field) throw InvalidInput("integrate needs a field");
  config.validate();
  if (x0.size() != field->state_size()) throw InvalidInput("initial state does not match the field");
  if (!x0.allFinite()) throw InvalidInput("initial state must be finite");

  Trajectory traj;
  traj.field = field;
  traj.config = config;
  Vec y(x0.size() + 1);
  y << x0, 0.0;
  try {
    push_sample(traj, *field, 0.0, y);
  } catch (const DomainError& e) {
    traj.events.push_back({0.0, "domain-violation", e.what()});
    throw DomainViolation(e.what(), traj);
  } catch (const DegenerateNormalization& e) {
    traj.events.push_back({0.0, "degenerate-normalization", e.what()});
    throw DomainViolation(e.what(), traj);
  }
  advance(traj, *field, std::move(y), 0.0, config.t_end);
  return traj;
}

Trajectory continue_trajectory(const Trajectory& traj, const FieldPtr& field, double extra_time) {
  if (!field || field != traj.field) throw InvalidInput("continue_trajectory needs the trajectory's own field");
  if (traj.samples.empty()) throw InvalidInput("cannot continue an empty trajectory");
  if (!(extra_time >= 0.0)) throw InvalidInput("extra time must be non-negative");
  Trajectory out = traj;
  if (extra_time == 0.0) return out;
  const double t0 = traj.back().t;
  out.config.t_end = t0 + extra_time;
  Vec y(field->state_size() + 1);
  y << traj.back().state, traj.back().int_gamma;
  advance(out, *field, std::move(y), t0, out.config.t_end);
  return out;
}

// --- initialization ---------------------------------------------------------

InitScheme init_scheme_from_string(std::string_view name) {
  if (name == "assumption1") return InitScheme::assumption1;
  if (name == "assumption2") return InitScheme::assumption2;
  if (name == "explicit") return InitScheme::explicit_state;
  if (name == "kl-interior") return InitScheme::kl_interior;
  throw InvalidInput("unknown init scheme '" + std::string(name) + "'");
}

std::string_view to_string(InitScheme s) {
  switch (s) {
    case InitScheme::assumption1: return "assumption1";
    case InitScheme::assumption2: return "assumption2";
    case InitScheme::explicit_state: return "explicit";
    case InitScheme::kl_interior: return "kl-interior";
  }
  return "?";
}

Vec make_target(Eigen::Index p, std::uint64_t seed, double norm) {
  if (p < 2) throw InvalidInput("target needs p >= 2");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec b(p);
  for (Eigen::Index i = 0; i < p; ++i) b[i] = normal(rng);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidInput("target norm must be positive");
  return norm * b / b.norm();
}

namespace {

Vec uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

// Uniform on [-scale, scale], sorted strictly decreasing; redrawn on ties.
Vec sorted_strict(std::mt19937_64& rng, Eigen::Index n, double scale) {
  for (;;) {
    Vec v = uniform_vector(rng, n, -scale, scale);
    std::sort(v.data(), v.data() + n, std::greater<>());
    bool strict = true;
    for (Eigen::Index i = 1; i < n; ++i) strict = strict && v[i - 1] > v[i];
    if (strict) return v;
  }
}

Mat orthogonal_noise(std::mt19937_64& rng, const Vec& beta_star, Eigen::Index cols, double scale) {
  const Eigen::Index p = beta_star.size();
  Mat n(p, cols);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < p; ++i) n(i, j) = scale * dist(rng);
  const Vec b = beta_star / beta_star.norm();
  return n - b * (b.transpose() * n);
}

}  // namespace

Vec init_state(const InitSpec& spec, const FlowField& field) {
  const Eigen::Index p = field.p();
  if (spec.p < 2 || p < 2) throw InvalidInput("initialization needs p >= 2");
  if (spec.p != p) throw InvalidInput("init spec dimension does not match the field");
  if (!(spec.scale > 0.0)) throw InvalidInput("init scale must be positive");
  if (spec.scheme == InitScheme::explicit_state) {
    if (spec.explicit_state.size() != field.state_size()) throw InvalidInput("explicit state has the wrong size");
    return spec.explicit_state;
  }

  std::mt19937_64 rng(spec.seed);
  const Vec& b = field.beta_star();
  const double bb = b.squaredNorm();
  const FieldKind kind = field.kind();
  const bool reduced = kind == FieldKind::logistic_reduced || kind == FieldKind::regression_reduced ||
                       kind == FieldKind::general_norm;

  if (kind == FieldKind::kl && spec.scheme != InitScheme::kl_interior)
    throw InvalidInput("the cross-entropy field needs the kl-interior initialization");

  switch (spec.scheme) {
    case InitScheme::assumption1: {
      if (kind == FieldKind::tied) {
        // Columns ordered so that u = R^T beta* is strictly decreasing.
        Mat r(p, p);
        for (;;) {
          for (Eigen::Index j = 0; j < p; ++j) r.col(j) = uniform_vector(rng, p, -spec.scale, spec.scale);
          const Vec u = r.transpose() * b;
          const Ordering o = descending_order(u);
          if (o.tie) continue;
          Mat sorted(p, p);
          for (Eigen::Index j = 0; j < p; ++j) sorted.col(j) = r.col(o.perm[static_cast<std::size_t>(j)]);
          return pack(TiedState{sorted, Vec::Constant(p, spec.logit_offset), b});
        }
      }
      const Vec u = sorted_strict(rng, p, spec.scale);
      const Vec a = Vec::Constant(p, spec.logit_offset);
      if (reduced) return pack(ReducedState{u, a, bb});
      if (kind == FieldKind::multirow) {
        const Eigen::Index rows = (field.state_size() - p * b.size()) / p;
        Mat V = u * b.transpose() / bb;
        if (spec.orthogonal_scale > 0.0) V += orthogonal_noise(rng, b, p, spec.orthogonal_scale).transpose();
        return pack(MultiRowState{V, Mat::Constant(rows, p, spec.logit_offset), b});
      }
      Mat V = b * u.transpose() / bb;
      if (spec.orthogonal_scale > 0.0) V += orthogonal_noise(rng, b, p, spec.orthogonal_scale);
      return pack(FullState{V, a, b});
    }
    case InitScheme::assumption2: {
      if (kind == FieldKind::tied || kind == FieldKind::multirow)
        throw InvalidInput("assumption2 applies to single-row value-softmax fields");
      const Vec a = sorted_strict(rng, p, spec.scale).array() + spec.logit_offset;
      if (reduced) return pack(ReducedState{Vec::Zero(p), a, bb});
      return pack(FullState{Mat::Zero(p, p), a, b});
    }
    case InitScheme::kl_interior: {
      if (kind != FieldKind::kl) throw InvalidInput("kl-interior initialization is for the cross-entropy field");
      const double floor = b.minCoeff();
      Mat V(p, p);
      std::uniform_real_distribution<double> noise(0.0, spec.scale * floor);
      for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < p; ++i) V(i, j) = b[i] + noise(rng);
      const Vec a = uniform_vector(rng, p, -spec.scale, spec.scale);
      return pack(FullState{V, a, b});
    }
    case InitScheme::explicit_state: break;
  }
  throw InvalidInput("unsupported initialization");
}

}  // namespace vsflow
