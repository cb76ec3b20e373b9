#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "vsflow/losses.hpp"

#include <cmath>
#include <random>

using namespace vsflow;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(2024);
  return r;
}

FullState random_full(Eigen::Index p, double lo = -1, double hi = 1) {
  return FullState{oracle::take_matrix(oracle::uniform(rng(), p * p, lo, hi), 0, p, p), oracle::uniform(rng(), p, -1, 1),
                   oracle::uniform(rng(), p, -1, 1)};
}

}  // namespace

TEST_CASE("logistic gamma") {
  const Vec b = Vec::Ones(3);
  CHECK(gamma_logistic(Vec::Zero(3), b) == 0.5);
  CHECK(gamma_from_margin(std::log(3.0)) == doctest::Approx(0.25).epsilon(1e-15));
  const double tiny = gamma_from_margin(1e4);
  CHECK(std::isfinite(tiny));
  CHECK(tiny >= 0.0);
  CHECK(tiny < 1e-300);
  CHECK(log_gamma_from_margin(1e4) == doctest::Approx(-1e4));
  CHECK(log_gamma_from_margin(-1e4) == doctest::Approx(0.0));
  CHECK(logistic_loss_from_margin(-1e4) == doctest::Approx(1e4));
  CHECK(logistic_loss_from_margin(0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("every field matches finite differences of a naive loss") {
  for (const auto& c : oracle::gradient_cases()) {
    CAPTURE(c.name);
    double worst = 0;
    for (int k = 0; k < 30; ++k) {
      const Eigen::Index p = 2 + k % 9;
      const oracle::Sample s = c.sample(rng(), p);
      Vec dx;
      s.field->evaluate(s.x, dx);
      worst = std::max(worst, oracle::relative_error(dx, c.expected(s)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("logistic full field") {
  FullState s = random_full(4);
  s.V.setZero();
  const FullGradient g0 = field_logistic_full(s);
  CHECK(g0.da.cwiseAbs().maxCoeff() == 0.0);

  FullState two = random_full(2);
  two.a.setZero();
  const FullGradient g = field_logistic_full(two);
  Eigen::JacobiSVD<Mat> svd(g.dV, Eigen::ComputeFullU);
  CHECK(svd.singularValues()[1] < 1e-14 * svd.singularValues()[0]);
  const Vec dir = svd.matrixU().col(0);
  CHECK(std::abs(std::abs(dir.dot(two.beta_star.normalized())) - 1.0) < 1e-12);
  CHECK(std::abs(field_logistic_full(random_full(6)).da.sum()) < 1e-12);
}

TEST_CASE("reduced logistic and regression share the right-hand side") {
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index p = 2 + k % 7;
    ReducedState s{oracle::uniform(rng(), p, -1, 1), oracle::uniform(rng(), p, -1, 1), 0.3 + k * 0.1};
    const ReducedGradient lg = field_logistic_reduced(s);
    const Vec sig = softmax_values(s.a);
    const double gl = gamma_from_margin(s.u.dot(sig));
    const ReducedGradient same = reduced_field_with_gamma(s, gl);
    CHECK((lg.du - same.du).cwiseAbs().maxCoeff() == 0.0);
    CHECK((lg.da - same.da).cwiseAbs().maxCoeff() == 0.0);
    const ReducedGradient rg = field_regression_reduced(s);
    const ReducedGradient rsame = reduced_field_with_gamma(s, gamma_regression_reduced(s));
    CHECK((rg.du - rsame.du).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(lg.da.sum()) < 1e-12);
    CHECK(std::abs(rg.da.sum()) < 1e-12);
  }

  ReducedState uniform{Vec::LinSpaced(4, 1, -1), Vec::Zero(4), 1.0};
  const Vec du = field_logistic_reduced(uniform).du;
  CHECK((du.array() - du[0]).abs().maxCoeff() < 1e-16);
  CHECK(du[0] > 0.0);
}

TEST_CASE("regression fields") {
  FullState s = random_full(3);
  // V sigma = beta* exactly: every column equal to beta*.
  for (Eigen::Index j = 0; j < 3; ++j) s.V.col(j) = s.beta_star;
  const FullGradient g = field_regression_full(s);
  CHECK(g.dV.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(g.da.cwiseAbs().maxCoeff() < 1e-15);

  FullState z = random_full(5);
  z.V.setZero();
  CHECK(field_regression_full(z).da.cwiseAbs().maxCoeff() == 0.0);

  ReducedState r{Vec::Zero(4), oracle::uniform(rng(), 4, -1, 1), 2.0};
  CHECK(gamma_regression_reduced(r) == 1.0);
  CHECK(loss_regression_reduced(r) == doctest::Approx(1.0));
  // <u, s> = |b*|^2 with a = 0 and u = |b*|^2 * 1.
  ReducedState fit{Vec::Constant(4, 2.0), Vec::Zero(4), 2.0};
  CHECK(field_regression_reduced(fit).du.cwiseAbs().maxCoeff() == 0.0);
  CHECK(field_regression_reduced(fit).da.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conditioned regression with the identity design is plain regression") {
  const FullState s = random_full(5);
  ConditionedDesign id{Mat::Identity(5, 5), 1.0, 0};
  const FullGradient a = field_regression_conditioned(s, id);
  const FullGradient b = field_regression_full(s);
  CHECK((a.dV - b.dV).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((a.da - b.da).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(loss_regression_conditioned(s, id) == doctest::Approx(loss_regression_full(s)).epsilon(1e-15));
}

TEST_CASE("cross-entropy field") {
  Vec q(4);
  q << 0.1, 0.2, 0.3, 0.4;
  const SimplexVector ps = SimplexVector::checked(q);
  FullState s = random_full(4);
  for (Eigen::Index j = 0; j < 4; ++j) s.V.col(j) = q;
  // beta = p*: the beta-gradient is -1, so dV = 1 sigma^T.
  const FullGradient g = field_kl(s, ps);
  const Vec sig = softmax_values(s.a);
  CHECK((g.dV - Vec::Ones(4) * sig.transpose()).cwiseAbs().maxCoeff() < 1e-14);

  s.V.row(2).setZero();
  CHECK_THROWS_AS(field_kl(s, ps), DomainError);
  CHECK_THROWS_AS(loss_kl(s, ps), DomainError);
}

TEST_CASE("general normalization field") {
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index p = 2 + k % 8;
    ReducedState s{oracle::uniform(rng(), p, -2, 2), oracle::uniform(rng(), p, -2, 2), 0.7};
    const ReducedGradient e = field_general_norm_logistic(s, ScoreMap::exp);
    const ReducedGradient l = field_logistic_reduced(s);
    CHECK((e.du - l.du).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((e.da - l.da).cwiseAbs().maxCoeff() < 1e-12);

    ReducedState pos{oracle::uniform(rng(), p, -2, 2), oracle::uniform(rng(), p, 0.5, 2), 0.7};
    // Degree-homogeneous maps move a tangentially to the sphere.
    CHECK(std::abs(pos.a.dot(field_general_norm_logistic(pos, ScoreMap::square).da)) < 1e-12);
    CHECK(std::abs(pos.a.dot(field_general_norm_logistic(pos, ScoreMap::identity).da)) < 1e-12);
  }
  ReducedState flat{Vec::Constant(5, 0.3), Vec::LinSpaced(5, 0.5, 2.0), 1.0};
  for (ScoreMap f : {ScoreMap::exp, ScoreMap::identity, ScoreMap::square})
    CHECK(field_general_norm_logistic(flat, f).da.cwiseAbs().maxCoeff() < 1e-16);

  ReducedState degenerate{Vec::Zero(2), Vec::LinSpaced(2, 1.0, -1.0), 1.0};
  CHECK_THROWS_AS(field_general_norm_logistic(degenerate, ScoreMap::identity), DegenerateNormalization);
}

TEST_CASE("elementwise controls") {
  FullState s = random_full(4);
  s.a = -oracle::uniform(rng(), 4, 0.1, 1.0);
  CHECK(field_elementwise(s, ScoreMap::relu).da.cwiseAbs().maxCoeff() == 0.0);
  CHECK(field_elementwise(s, ScoreMap::relu).dV.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(field_elementwise(s, ScoreMap::square), InvalidInput);
}

TEST_CASE("tied field") {
  TiedState zero{Mat::Zero(4, 4), oracle::uniform(rng(), 4, -1, 1), oracle::uniform(rng(), 4, -1, 1)};
  const FullGradient g0 = field_tied(zero);
  CHECK(g0.da.cwiseAbs().maxCoeff() == 0.0);
  // At R = 0 only the outer factor contributes: dR = gamma b* s^T with s uniform.
  const Mat expected = 0.5 * zero.beta_star * Vec::Constant(4, 0.25).transpose();
  CHECK((g0.dV - expected).cwiseAbs().maxCoeff() < 1e-15);

  for (int k = 0; k < 10; ++k) {
    const Eigen::Index p = 2 + k % 6;
    TiedState s{oracle::take_matrix(oracle::uniform(rng(), p * p, -1, 1), 0, p, p), oracle::uniform(rng(), p, -1, 1),
                oracle::uniform(rng(), p, -1, 1)};
    const Vec da = field_tied(s).da;
    const Vec w = softmax_values(s.R * s.a);
    const Mat basis = s.R.transpose() * softmax_jacobian_values(w);
    const Vec coeff = basis.colPivHouseholderQr().solve(da);
    CHECK((basis * coeff - da).norm() < 1e-10 * (1 + da.norm()));
  }
}

TEST_CASE("multi-row field") {
  const FullState f = random_full(4);
  MultiRowState m{f.V.transpose(), f.a.transpose(), f.beta_star};
  const MultiRowGradient gm = field_multirow_logistic(m);
  const FullGradient gf = field_logistic_full(f);
  CHECK((gm.dV - gf.dV.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((gm.dA.row(0).transpose() - gf.da).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(loss_multirow_logistic(m) == doctest::Approx(loss_logistic_full(f)).epsilon(1e-15));

  MultiRowState rows{oracle::take_matrix(oracle::uniform(rng(), 4 * 3, -1, 1), 0, 4, 3), Mat::Zero(5, 4),
                     oracle::uniform(rng(), 3, -1, 1)};
  rows.A.rowwise() = oracle::uniform(rng(), 4, -1, 1).transpose();
  const MultiRowGradient g = field_multirow_logistic(rows);
  for (Eigen::Index t = 1; t < 5; ++t) CHECK((g.dA.row(t) - g.dA.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.dA.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a short gradient step decreases every normalized loss") {
  for (const auto& c : oracle::gradient_cases()) {
    if (c.name.rfind("elementwise", 0) == 0) continue;
    CAPTURE(c.name);
    for (int k = 0; k < 10; ++k) {
      const oracle::Sample s = c.sample(rng(), 2 + k % 9);
      Vec dx;
      s.field->evaluate(s.x, dx);
      if (dx.norm() == 0) continue;
      CHECK(s.field->loss(s.x + 1e-6 * dx) < s.field->loss(s.x));
    }
  }
}

TEST_CASE("packing round trips") {
  const FullState f = random_full(3);
  const FullState back = unpack_full(pack(f), f.beta_star);
  CHECK((back.V - f.V).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.a - f.a).cwiseAbs().maxCoeff() == 0.0);
  MultiRowState m{Mat::Random(3, 2), Mat::Random(4, 3), Vec::Random(2)};
  const MultiRowState mb = unpack_multirow(pack(m), 4, 3, m.beta_star);
  CHECK((mb.V - m.V).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mb.A - m.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(unpack_full(Vec::Zero(5), Vec::Zero(2)), InvalidInput);
}
