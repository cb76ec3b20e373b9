#include "vsflow/core.hpp"

#include <cmath>
#include <sstream>

namespace vsflow {

namespace {

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

Logits::Logits(Vec a) : a_(std::move(a)) {
  if (a_.size() < 2) throw InvalidInput("logits need at least two entries");
  if (!all_finite(a_)) throw InvalidInput("logits must be finite");
}

SimplexVector SimplexVector::checked(Vec s) {
  if (!all_finite(s)) throw InvalidInput("simplex vector must be finite");
  if (std::abs(s.sum() - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "simplex vector sums to " << s.sum();
    throw InvalidInput(os.str());
  }
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] < 0.0 || s[i] > 1.0) throw InvalidInput("simplex entries must lie in [0, 1]");
  return SimplexVector(std::move(s), false);
}

SimplexVector SimplexVector::signed_weights(Vec s) {
  if (!all_finite(s)) throw InvalidInput("weights must be finite");
  if (std::abs(s.sum() - 1.0) > 1e-12) throw InvalidInput("weights must sum to one");
  const bool negative = (s.array() < 0.0).any() || (s.array() > 1.0).any();
  return SimplexVector(std::move(s), negative);
}

std::string_view to_string(ScoreMap f) {
  switch (f) {
    case ScoreMap::exp: return "exp";
    case ScoreMap::identity: return "identity";
    case ScoreMap::square: return "square";
    case ScoreMap::sigmoid: return "sigmoid";
    case ScoreMap::relu: return "relu";
  }
  return "?";
}

ScoreMap score_map_from_string(std::string_view name) {
  if (name == "exp" || name == "softmax") return ScoreMap::exp;
  if (name == "identity" || name == "linear") return ScoreMap::identity;
  if (name == "square") return ScoreMap::square;
  if (name == "sigmoid") return ScoreMap::sigmoid;
  if (name == "relu") return ScoreMap::relu;
  throw InvalidInput("unknown score map '" + std::string(name) + "'");
}

bool is_elementwise(ScoreMap f) { return f == ScoreMap::sigmoid || f == ScoreMap::relu; }

double apply(ScoreMap f, double x) {
  switch (f) {
    case ScoreMap::exp: return std::exp(x);
    case ScoreMap::identity: return x;
    case ScoreMap::square: return x * x;
    case ScoreMap::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case ScoreMap::relu: return x > 0.0 ? x : 0.0;
  }
  return 0.0;
}

double derivative(ScoreMap f, double x) {
  switch (f) {
    case ScoreMap::exp: return std::exp(x);
    case ScoreMap::identity: return 1.0;
    case ScoreMap::square: return 2.0 * x;
    case ScoreMap::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case ScoreMap::relu: return x > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

Vec softmax_values(const Vec& a) {
  Vec e = (a.array() - a.maxCoeff()).exp();
  return e / e.sum();
}

SimplexVector softmax(const Logits& a) {
  Vec s = softmax_values(a.values());
  // Renormalized entries can miss the unit sum by a few ulps; the checked
  // constructor allows 1e-12.
  return SimplexVector::checked(std::move(s));
}

Mat softmax_jacobian_values(const Vec& s) {
  Mat j = -s * s.transpose();
  j.diagonal() += s;
  return j;
}

Mat softmax_jacobian(const SimplexVector& s) { return softmax_jacobian_values(s.values()); }

Vec normalize_general_values(const Vec& a, ScoreMap f) {
  if (is_elementwise(f))
    throw InvalidInput("elementwise maps are not normalizations: " + std::string(to_string(f)));
  if (f == ScoreMap::exp) return softmax_values(a);
  Vec fa = a.unaryExpr([f](double x) { return apply(f, x); });
  const double denom = fa.sum();
  if (!(std::abs(denom) >= kDegenerateDenominator)) {
    std::ostringstream os;
    os << "normalization denominator " << denom << " is degenerate for f = " << to_string(f);
    throw DegenerateNormalization(os.str());
  }
  return fa / denom;
}

SimplexVector normalize_general(const Logits& a, ScoreMap f) {
  return SimplexVector::signed_weights(normalize_general_values(a.values(), f));
}

ConditionedDesign make_conditioned_design(Eigen::Index p, double kappa, std::uint64_t seed) {
  if (!(kappa >= 1.0) || !std::isfinite(kappa)) throw InvalidInput("kappa must be >= 1");
  if (p < 1) throw InvalidInput("design dimension must be positive");
  std::mt19937_64 rng(seed);
  const Mat q1 = random_orthogonal(p, rng);
  const Mat q2 = random_orthogonal(p, rng);
  // Largest singular value 1, smallest 1/kappa: a worse-conditioned design
  // is also a slower one.
  Vec sv(p);
  for (Eigen::Index i = 0; i < p; ++i)
    sv[i] = p == 1 ? 1.0 : std::pow(kappa, -static_cast<double>(i) / static_cast<double>(p - 1));
  return ConditionedDesign{q1 * sv.asDiagonal() * q2.transpose(), kappa, seed};
}

double condition_number(const Mat& X) {
  Eigen::JacobiSVD<Mat> svd(X);
  const Vec& sv = svd.singularValues();
  return sv[0] / sv[sv.size() - 1];
}

}  // namespace vsflow
