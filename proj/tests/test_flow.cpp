#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "vsflow/flow.hpp"

#include <cmath>
#include <memory>

using namespace vsflow;

namespace {

// dy/dt = c * y^k on a scalar state; enough to pin the integrator against
// closed forms.
class PowerField final : public FlowField {
 public:
  PowerField(double c, int k) : FlowField(Vec::Ones(1)), c_(c), k_(k) {}
  FieldKind kind() const override { return FieldKind::regression_reduced; }
  Eigen::Index p() const override { return 1; }
  Eigen::Index state_size() const override { return 1; }
  double evaluate(const Vec& x, Vec& dx) const override {
    dx.resize(1);
    dx[0] = c_ * std::pow(x[0], k_);
    return 0.0;
  }
  double loss(const Vec& x) const override { return 0.5 * x[0] * x[0]; }
  Observation observe(const Vec& x) const override {
    Observation o;
    o.loss = loss(x);
    o.sigma = Vec::Ones(1);
    o.u = x;
    o.a = Vec::Zero(1);
    return o;
  }
  Vec logit_invariants(const Vec&) const override { return {}; }

 private:
  double c_;
  int k_;
};

IntegratorConfig geometric(double t_end) {
  IntegratorConfig c;
  c.t_end = t_end;
  c.record.mode = RecordMode::geometric;
  return c;
}

IntegratorConfig linear(double t_end, double spacing) {
  IntegratorConfig c;
  c.t_end = t_end;
  c.record.mode = RecordMode::linear;
  c.record.spacing = spacing;
  return c;
}

bool bit_equal(const Trajectory& a, const Trajectory& b) {
  if (a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto& x = a.samples[i];
    const auto& y = b.samples[i];
    if (x.t != y.t || x.int_gamma != y.int_gamma || x.state != y.state) return false;
  }
  return true;
}

const TrajectorySample* at_time(const Trajectory& traj, double t) {
  for (const auto& s : traj.samples)
    if (s.t == t) return &s;
  return nullptr;
}

Vec assumption1(const FlowField& f, std::uint64_t seed) {
  InitSpec s;
  s.seed = seed;
  s.p = f.p();
  return init_state(s, f);
}

}  // namespace

TEST_CASE("exponential decay test equation") {
  const auto field = std::make_shared<PowerField>(-1.0, 1);
  IntegratorConfig c = linear(1.0, 0.25);
  const Trajectory tr = integrate(field, Vec::Ones(1), c);
  CHECK(tr.back().t == 1.0);
  CHECK(std::abs(tr.back().state[0] - std::exp(-1.0)) < 1e-8 * std::exp(-1.0));

  c.method = Method::rk4_fixed;
  c.dt = 1e-3;
  const Trajectory rk4 = integrate(field, Vec::Ones(1), c);
  CHECK(std::abs(rk4.back().state[0] - std::exp(-1.0)) < 1e-12);
}

TEST_CASE("zero field gives a constant trajectory") {
  const auto field = std::make_shared<PowerField>(0.0, 1);
  const Trajectory tr = integrate(field, Vec::Constant(1, 0.7), geometric(10.0));
  for (const auto& s : tr.samples) {
    CHECK(s.state[0] == 0.7);
    CHECK(s.obs.loss == tr.front().obs.loss);
  }
}

TEST_CASE("recording grid contains both ends and increases strictly") {
  const FieldPtr f = make_logistic_reduced_field(make_target(4, 0, 0.5));
  for (const IntegratorConfig& c : {geometric(1e3), linear(1e3, 7.0)}) {
    const Trajectory tr = integrate(f, assumption1(*f, 0), c);
    CHECK(tr.front().t == 0.0);
    CHECK(tr.back().t == 1e3);
    for (std::size_t i = 1; i < tr.samples.size(); ++i) {
      CHECK(tr.samples[i].t > tr.samples[i - 1].t);
      CHECK(tr.samples[i].int_gamma >= tr.samples[i - 1].int_gamma);
    }
  }
  IntegratorConfig strided = geometric(10.0);
  strided.record.mode = RecordMode::stride;
  strided.record.stride = 3;
  const Trajectory tr = integrate(f, assumption1(*f, 0), strided);
  CHECK(tr.back().t == 10.0);
  CHECK(tr.samples.size() >= 2);
}

TEST_CASE("logistic loss decreases strictly from the ordered-u initialization") {
  const FieldPtr f = make_logistic_reduced_field(make_target(4, 3, 0.5));
  const Trajectory tr = integrate(f, assumption1(*f, 3), geometric(1e3));
  for (std::size_t i = 1; i < tr.samples.size(); ++i) CHECK(tr.samples[i].obs.loss < tr.samples[i - 1].obs.loss);
}

TEST_CASE("initialization schemes") {
  const FieldPtr f = make_logistic_reduced_field(make_target(6, 1, 0.5));
  const Vec x = assumption1(*f, 9);
  const Observation o = f->observe(x);
  CHECK((o.sigma.array() - 1.0 / 6).abs().maxCoeff() < 1e-16);
  for (Eigen::Index i = 0; i + 1 < 6; ++i) CHECK(o.u[i] > o.u[i + 1]);
  CHECK(assumption1(*f, 9) == x);
  CHECK(assumption1(*f, 10) != x);

  const Vec b = make_target(5, 2, 0.5);
  const FieldPtr r = make_regression_full_field(b);
  InitSpec s2;
  s2.scheme = InitScheme::assumption2;
  s2.p = 5;
  const Vec x2 = init_state(s2, *r);
  CHECK(r->loss(x2) == doctest::Approx(0.5 * b.squaredNorm()).epsilon(1e-15));
  const Observation o2 = r->observe(x2);
  for (Eigen::Index i = 0; i + 1 < 5; ++i) CHECK(o2.sigma[i] > o2.sigma[i + 1]);

  InitSpec bad;
  bad.p = 1;
  CHECK_THROWS_AS(init_state(bad, *f), InvalidInput);
  InitSpec kl_wrong;
  kl_wrong.p = 6;
  kl_wrong.scheme = InitScheme::kl_interior;
  CHECK_THROWS_AS(init_state(kl_wrong, *f), InvalidInput);
}

TEST_CASE("full and reduced logistic runs agree in u") {
  const Vec b = make_target(4, 5, 0.5);
  const FieldPtr full = make_logistic_full_field(b);
  const FieldPtr reduced = make_logistic_reduced_field(b);
  const IntegratorConfig c = linear(10.0, 0.5);
  const Trajectory tf = integrate(full, assumption1(*full, 5), c);
  const Trajectory tr = integrate(reduced, assumption1(*reduced, 5), c);
  REQUIRE(tf.samples.size() == tr.samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < tf.samples.size(); ++i)
    worst = std::max(worst, (tf.samples[i].obs.u - tr.samples[i].obs.u).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-8);
}

TEST_CASE("regression reduced run matches the full run from V = 0") {
  const Vec b = make_target(5, 8, 0.5);
  const FieldPtr full = make_regression_full_field(b);
  const FieldPtr reduced = make_regression_reduced_field(b);
  InitSpec s;
  s.scheme = InitScheme::assumption2;
  s.p = 5;
  s.seed = 8;
  const IntegratorConfig c = linear(50.0, 1.0);
  const Trajectory tf = integrate(full, init_state(s, *full), c);
  const Trajectory tr = integrate(reduced, init_state(s, *reduced), c);
  REQUIRE(tf.samples.size() == tr.samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < tf.samples.size(); ++i) {
    worst = std::max(worst, (tf.samples[i].obs.u - tr.samples[i].obs.u).cwiseAbs().maxCoeff());
    worst = std::max(worst, (tf.samples[i].obs.a - tr.samples[i].obs.a).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("orthogonal design is a rotated target") {
  const Eigen::Index p = 4;
  const Vec b = make_target(p, 1, 0.5);
  const ConditionedDesign d = make_conditioned_design(p, 1.0, 99);
  const FieldPtr cond = make_regression_conditioned_field(b, d);
  const FieldPtr plain = make_regression_full_field(d.X.transpose() * b);
  InitSpec s;
  s.scheme = InitScheme::assumption2;
  s.p = p;
  const IntegratorConfig c = linear(20.0, 1.0);
  const Trajectory a = integrate(cond, init_state(s, *cond), c);
  const Trajectory r = integrate(plain, init_state(s, *plain), c);
  REQUIRE(a.samples.size() == r.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    CHECK(std::abs(a.samples[i].obs.loss - r.samples[i].obs.loss) < 1e-8);
}

TEST_CASE("continuation") {
  const FieldPtr f = make_logistic_reduced_field(make_target(4, 2, 0.5));
  const Vec x0 = assumption1(*f, 2);
  const Trajectory half = integrate(f, x0, linear(50.0, 5.0));
  CHECK(bit_equal(continue_trajectory(half, f, 0.0), half));

  const Trajectory joined = continue_trajectory(half, f, 50.0);
  const Trajectory whole = integrate(f, x0, linear(100.0, 5.0));
  CHECK(joined.back().t == 100.0);
  int shared = 0;
  for (const auto& s : whole.samples) {
    const TrajectorySample* j = at_time(joined, s.t);
    if (!j) continue;
    ++shared;
    CHECK((j->state - s.state).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(j->int_gamma - s.int_gamma) < 1e-8);
  }
  CHECK(shared == static_cast<int>(whole.samples.size()));
  // The junction sample is carried over untouched.
  CHECK(joined.samples[half.samples.size() - 1].int_gamma == half.back().int_gamma);

  const FieldPtr other = make_logistic_reduced_field(make_target(4, 2, 0.5));
  CHECK_THROWS_AS(continue_trajectory(half, other, 1.0), InvalidInput);
}

TEST_CASE("determinism") {
  const FieldPtr f = make_tied_field(make_target(5, 4, 0.5));
  const Trajectory a = integrate(f, assumption1(*f, 4), geometric(1e3));
  const Trajectory b = integrate(f, assumption1(*f, 4), geometric(1e3));
  CHECK(bit_equal(a, b));
}

TEST_CASE("halving rtol barely moves the final state") {
  const FieldPtr f = make_logistic_reduced_field(make_target(4, 6, 0.5));
  IntegratorConfig c = geometric(1e3);
  const Trajectory a = integrate(f, assumption1(*f, 6), c);
  c.rtol *= 0.5;
  const Trajectory b = integrate(f, assumption1(*f, 6), c);
  const Vec& xa = a.back().state;
  const double tol = 10 * (c.atol + 2 * c.rtol * xa.cwiseAbs().maxCoeff());
  CHECK((xa - b.back().state).cwiseAbs().maxCoeff() < tol);
}

TEST_CASE("blow-up raises a stiffness error with the partial trajectory") {
  const auto field = std::make_shared<PowerField>(1.0, 2);
  IntegratorConfig c = linear(2.0, 0.1);
  c.dt_min = 1e-10;
  try {
    integrate(field, Vec::Ones(1), c);
    FAIL("expected a stiffness error");
  } catch (const StiffnessError& e) {
    // The exact solution 1/(1 - t) has its pole at t = 1.
    CHECK(e.partial().back().t >= 0.9);
    CHECK(e.partial().events.back().kind == "step-underflow");
    CHECK(e.partial().events.back().t == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("identity normalization halts with a domain violation") {
  const FieldPtr f = make_general_norm_field(make_target(4, 0, 0.5), ScoreMap::identity);
  InitSpec s;
  s.p = 4;
  s.logit_offset = 2.0;
  try {
    integrate(f, init_state(s, *f), geometric(1e5));
    FAIL("expected the identity run to lose positivity");
  } catch (const DomainViolation& e) {
    CHECK(e.partial().back().t > 0.0);
    CHECK(e.partial().events.back().kind == "degenerate-normalization");
  }
}

TEST_CASE("ties are logged once when they start") {
  const FieldPtr f = make_regression_reduced_field(make_target(4, 0, 0.5));
  InitSpec s;
  s.scheme = InitScheme::assumption2;
  s.p = 4;
  const Trajectory tr = integrate(f, init_state(s, *f), linear(10.0, 1.0));
  REQUIRE(!tr.events.empty());
  CHECK(tr.events.front().kind == "tie-u");
  CHECK(tr.events.front().t == 0.0);
  int ties = 0;
  for (const auto& e : tr.events) ties += e.kind == "tie-u";
  CHECK(ties == 1);
}

TEST_CASE("config validation") {
  IntegratorConfig c;
  c.rtol = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = IntegratorConfig{};
  c.dt_min = 1.0;
  c.dt_max = 0.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = IntegratorConfig{};
  c.t_end = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}
