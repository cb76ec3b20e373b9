#pragma once

// Domain types for the value-softmax model beta = V * softmax(a), the softmax
// and generalized normalization maps, their Jacobians, and conditioned
// design matrices.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vsflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy. Every failure the library reports derives from Error so
// callers can map error classes onto exit statuses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The denominator of f(a_i) / sum_j f(a_j) vanished (|sum| < 1e-12).
class DegenerateNormalization : public Error {
 public:
  using Error::Error;
};

// A loss was evaluated outside its domain (e.g. log of a non-positive entry).
class DomainError : public Error {
 public:
  using Error::Error;
};

class InapplicableVerifier : public Error {
 public:
  using Error::Error;
};

/// Trainable score vector. Finite entries, at least two of them.
class Logits {
 public:
  explicit Logits(Vec a);

  const Vec& values() const { return a_; }
  Eigen::Index size() const { return a_.size(); }

 private:
  Vec a_;
};

/// A weight vector that sums to one. Entries lie in [0, 1] unless the vector
/// was produced by a sign-indefinite normalization, in which case it is
/// tagged as signed and only the unit-sum invariant holds.
class SimplexVector {
 public:
  /// Validates the simplex invariants (sum within 1e-12 of 1, entries in
  /// [0, 1]); throws InvalidInput otherwise.
  static SimplexVector checked(Vec s);
  /// Unit sum is still checked; entries may be negative or exceed one.
  static SimplexVector signed_weights(Vec s);

  const Vec& values() const { return s_; }
  Eigen::Index size() const { return s_.size(); }
  bool is_signed() const { return signed_; }
  double operator[](Eigen::Index i) const { return s_[i]; }

 private:
  SimplexVector(Vec s, bool is_signed) : s_(std::move(s)), signed_(is_signed) {}
  Vec s_;
  bool signed_ = false;
};

/// Closed catalog of maps usable in place of exp inside a normalization, plus
/// the two elementwise activations used as non-normalized controls.
enum class ScoreMap { exp, identity, square, sigmoid, relu };

std::string_view to_string(ScoreMap f);
ScoreMap score_map_from_string(std::string_view name);

/// True for sigmoid and relu: elementwise activations, not normalizations.
bool is_elementwise(ScoreMap f);

double apply(ScoreMap f, double x);
/// Derivative; relu'(0) is taken as 0.
double derivative(ScoreMap f, double x);

/// exp(a_i - max a) / sum_j exp(a_j - max a).
SimplexVector softmax(const Logits& a);
/// Unchecked fast path for the integrators; `a` must be finite.
Vec softmax_values(const Vec& a);

/// diag(s) - s s^T.
Mat softmax_jacobian(const SimplexVector& s);
Mat softmax_jacobian_values(const Vec& s);

/// f(a_i) / sum_j f(a_j). For f = exp this is routed through softmax. Signed
/// outputs (possible for f = identity) are tagged. Throws
/// DegenerateNormalization when |sum_j f(a_j)| < 1e-12, and InvalidInput for
/// the elementwise maps.
SimplexVector normalize_general(const Logits& a, ScoreMap f);
Vec normalize_general_values(const Vec& a, ScoreMap f);

inline constexpr double kDegenerateDenominator = 1e-12;

/// Square matrix with prescribed condition number.
struct ConditionedDesign {
  Mat X;
  double kappa = 1.0;
  std::uint64_t seed = 0;
};

/// X = Q1 * diag(sv) * Q2^T with Q1, Q2 Haar-random orthogonal matrices drawn
/// from a seeded generator and sv geometrically spaced from 1 down to 1/kappa.
ConditionedDesign make_conditioned_design(Eigen::Index p, double kappa, std::uint64_t seed);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign
/// of R's diagonal folded into Q).
template <class Rng>
Mat random_orthogonal(Eigen::Index p, Rng& rng);

double condition_number(const Mat& X);

}  // namespace vsflow

#include <random>

namespace vsflow {

template <class Rng>
Mat random_orthogonal(Eigen::Index p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(p, p);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < p; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace vsflow
