#pragma once

// Naive reference implementations shared by the unit and acceptance tests.
// Everything here is written with plain loops and no max-subtraction or
// log-space tricks, so it shares no code path with the library.

#include "vsflow/fields.hpp"
#include "vsflow/metrics.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using vsflow::Mat;
using vsflow::Vec;

inline double f_apply(vsflow::ScoreMap f, double x) {
  switch (f) {
    case vsflow::ScoreMap::exp: return std::exp(x);
    case vsflow::ScoreMap::identity: return x;
    case vsflow::ScoreMap::square: return x * x;
    case vsflow::ScoreMap::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case vsflow::ScoreMap::relu: return x > 0 ? x : 0.0;
  }
  return 0.0;
}

inline Vec normalize(const Vec& a, vsflow::ScoreMap f) {
  Vec s(a.size());
  double sum = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) sum += f_apply(f, a[i]);
  for (Eigen::Index i = 0; i < a.size(); ++i) s[i] = f_apply(f, a[i]) / sum;
  return s;
}

inline Vec softmax(const Vec& a) { return normalize(a, vsflow::ScoreMap::exp); }

inline Vec matvec(const Mat& M, const Vec& x) {
  Vec y = Vec::Zero(M.rows());
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) y[i] += M(i, j) * x[j];
  return y;
}

inline double dot(const Vec& x, const Vec& y) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double logistic(double margin) { return std::log(1.0 + std::exp(-margin)); }

// Unpack column-major V (rows x cols) followed by a tail vector.
inline Mat take_matrix(const Vec& x, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  Mat M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = x[offset + j * rows + i];
  return M;
}

inline Vec central_gradient(const std::function<double(const Vec&)>& loss, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (loss(xp) - loss(xm)) / (2 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

inline double relative_error(const Vec& g, const Vec& ref) {
  const double scale = std::max(g.norm(), ref.norm());
  return scale == 0 ? 0.0 : (g - ref).norm() / scale;
}

// --- gradient cases -----------------------------------------------------------

struct Sample {
  vsflow::FieldPtr field;
  Vec x;
};

struct GradientCase {
  std::string name;
  std::function<Sample(std::mt19937_64&, Eigen::Index)> sample;
  // Expected field value (negative loss gradient) from finite differences of
  // a naive loss.
  std::function<Vec(const Sample&)> expected;
};

inline Vec uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Vec away_from_zero(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  Vec v = uniform(rng, n, lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = sign(rng) ? v[i] : -v[i];
  return v;
}

// Full-coordinate loss as a function of packed (V, a).
using FullLoss = std::function<double(const Mat& V, const Vec& a)>;

inline Vec full_expected(const FullLoss& loss, const Vec& x, Eigen::Index p) {
  return -central_gradient([&](const Vec& y) { return loss(take_matrix(y, 0, p, p), y.tail(p)); }, x);
}

// Reduced coordinates: lift to V = b u^T / |b|^2, differentiate the full loss
// in (V, a) and project the V gradient onto b.
inline Vec reduced_expected(const FullLoss& loss, const Vec& x, const Vec& b) {
  const Eigen::Index p = b.size();
  Mat V(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) V(i, j) = b[i] * x[j] / dot(b, b);
  Vec lifted(p * p + p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) lifted[j * p + i] = V(i, j);
  lifted.tail(p) = x.tail(p);
  const Vec g = full_expected(loss, lifted, p);
  Vec out(2 * p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double s = 0;
    for (Eigen::Index i = 0; i < p; ++i) s += g[j * p + i] * b[i];
    out[j] = s;
  }
  out.tail(p) = g.tail(p);
  return out;
}

inline FullLoss logistic_loss(const Vec& b, vsflow::ScoreMap f = vsflow::ScoreMap::exp) {
  return [b, f](const Mat& V, const Vec& a) { return logistic(dot(b, matvec(V, normalize(a, f)))); };
}

inline FullLoss regression_loss(const Vec& b, const Mat& X) {
  return [b, X](const Mat& V, const Vec& a) {
    const Vec r = b - matvec(X, matvec(V, softmax(a)));
    return 0.5 * dot(r, r);
  };
}

inline std::vector<GradientCase> gradient_cases() {
  using namespace vsflow;
  std::vector<GradientCase> cases;
  auto target = [](std::mt19937_64& rng, Eigen::Index p) { return uniform(rng, p, -1.0, 1.0); };

  cases.push_back({"logistic_full",
                   [=](std::mt19937_64& rng, Eigen::Index p) {
                     Vec b = target(rng, p);
                     return Sample{make_logistic_full_field(b), uniform(rng, p * p + p, -1, 1)};
                   },
                   [](const Sample& s) {
                     return full_expected(logistic_loss(s.field->beta_star()), s.x, s.field->p());
                   }});
  cases.push_back({"logistic_reduced",
                   [=](std::mt19937_64& rng, Eigen::Index p) {
                     Vec b = target(rng, p);
                     return Sample{make_logistic_reduced_field(b), uniform(rng, 2 * p, -1, 1)};
                   },
                   [](const Sample& s) {
                     return reduced_expected(logistic_loss(s.field->beta_star()), s.x, s.field->beta_star());
                   }});
  cases.push_back({"regression_full",
                   [=](std::mt19937_64& rng, Eigen::Index p) {
                     Vec b = target(rng, p);
                     return Sample{make_regression_full_field(b), uniform(rng, p * p + p, -1, 1)};
                   },
                   [](const Sample& s) {
                     const Eigen::Index p = s.field->p();
                     return full_expected(regression_loss(s.field->beta_star(), Mat::Identity(p, p)), s.x, p);
                   }});
  cases.push_back({"regression_reduced",
                   [=](std::mt19937_64& rng, Eigen::Index p) {
                     Vec b = target(rng, p);
                     return Sample{make_regression_reduced_field(b), uniform(rng, 2 * p, -1, 1)};
                   },
                   [](const Sample& s) {
                     const Eigen::Index p = s.field->p();
                     return reduced_expected(regression_loss(s.field->beta_star(), Mat::Identity(p, p)), s.x,
                                             s.field->beta_star());
                   }});
  {
    // The design is rebuilt in the oracle from the same (p, kappa, seed).
    struct Draw {
      double kappa;
      std::uint64_t seed;
    };
    auto draws = std::make_shared<std::vector<Draw>>();
    cases.push_back({"regression_conditioned",
                     [=](std::mt19937_64& rng, Eigen::Index p) {
                       Vec b = target(rng, p);
                       const double kappa = std::uniform_real_distribution<double>(1.0, 5.0)(rng);
                       const std::uint64_t seed = rng();
                       draws->push_back({kappa, seed});
                       auto design = make_conditioned_design(p, kappa, seed);
                       return Sample{make_regression_conditioned_field(b, design), uniform(rng, p * p + p, -1, 1)};
                     },
                     [=](const Sample& s) {
                       const Eigen::Index p = s.field->p();
                       const Draw d = draws->back();
                       const Mat X = make_conditioned_design(p, d.kappa, d.seed).X;
                       return full_expected(regression_loss(s.field->beta_star(), X), s.x, p);
                     }});
  }
  cases.push_back({"kl",
                   [](std::mt19937_64& rng, Eigen::Index p) {
                     Vec q = uniform(rng, p, 0.5, 1.5);
                     q /= q.sum();
                     Vec x(p * p + p);
                     x.head(p * p) = uniform(rng, p * p, 0.5, 1.5);
                     x.tail(p) = uniform(rng, p, -1, 1);
                     return Sample{make_kl_field(SimplexVector::checked(q)), x};
                   },
                   [](const Sample& s) {
                     const Vec q = s.field->beta_star();
                     FullLoss loss = [q](const Mat& V, const Vec& a) {
                       const Vec beta = matvec(V, softmax(a));
                       double l = 0;
                       for (Eigen::Index i = 0; i < q.size(); ++i) l -= q[i] * std::log(beta[i]);
                       return l;
                     };
                     return full_expected(loss, s.x, s.field->p());
                   }});
  for (ScoreMap f : {ScoreMap::exp, ScoreMap::identity, ScoreMap::square}) {
    cases.push_back({"general_norm_" + std::string(to_string(f)),
                     [=](std::mt19937_64& rng, Eigen::Index p) {
                       Vec b = target(rng, p);
                       Vec x(2 * p);
                       x.head(p) = uniform(rng, p, -1, 1);
                       x.tail(p) = f == ScoreMap::exp ? uniform(rng, p, -1, 1) : uniform(rng, p, 0.5, 1.5);
                       return Sample{make_general_norm_field(b, f), x};
                     },
                     [=](const Sample& s) {
                       return reduced_expected(logistic_loss(s.field->beta_star(), f), s.x, s.field->beta_star());
                     }});
  }
  for (ScoreMap g : {ScoreMap::sigmoid, ScoreMap::relu}) {
    cases.push_back({"elementwise_" + std::string(to_string(g)),
                     [=](std::mt19937_64& rng, Eigen::Index p) {
                       Vec b = target(rng, p);
                       Vec x(p * p + p);
                       x.head(p * p) = uniform(rng, p * p, -1, 1);
                       x.tail(p) = away_from_zero(rng, p, 0.01, 1.0);
                       return Sample{make_elementwise_field(b, g), x};
                     },
                     [=](const Sample& s) {
                       const Vec b = s.field->beta_star();
                       FullLoss loss = [b, g](const Mat& V, const Vec& a) {
                         Vec ga(a.size());
                         for (Eigen::Index i = 0; i < a.size(); ++i) ga[i] = f_apply(g, a[i]);
                         return logistic(dot(b, matvec(V, ga)));
                       };
                       return full_expected(loss, s.x, s.field->p());
                     }});
  }
  cases.push_back({"tied",
                   [=](std::mt19937_64& rng, Eigen::Index p) {
                     Vec b = target(rng, p);
                     return Sample{make_tied_field(b), uniform(rng, p * p + p, -1, 1)};
                   },
                   [](const Sample& s) {
                     const Vec b = s.field->beta_star();
                     FullLoss loss = [b](const Mat& R, const Vec& a) {
                       return logistic(dot(b, matvec(R, softmax(matvec(R, a)))));
                     };
                     return full_expected(loss, s.x, s.field->p());
                   }});
  {
    struct Shape {
      Eigen::Index rows, d;
    };
    auto shapes = std::make_shared<std::vector<Shape>>();
    cases.push_back({"multirow",
                     [=](std::mt19937_64& rng, Eigen::Index p) {
                       const Eigen::Index rows = std::uniform_int_distribution<Eigen::Index>(1, 4)(rng);
                       const Eigen::Index d = std::uniform_int_distribution<Eigen::Index>(2, 6)(rng);
                       shapes->push_back({rows, d});
                       Vec b = target(rng, d);
                       return Sample{make_multirow_field(b, rows, p), uniform(rng, p * d + rows * p, -1, 1)};
                     },
                     [=](const Sample& s) {
                       const Shape sh = shapes->back();
                       const Eigen::Index p = s.field->p();
                       const Vec b = s.field->beta_star();
                       auto loss = [&](const Vec& y) {
                         const Mat V = take_matrix(y, 0, p, sh.d);
                         const Mat A = take_matrix(y, p * sh.d, sh.rows, p);
                         double l = 0;
                         for (Eigen::Index t = 0; t < sh.rows; ++t) {
                           const Vec w = softmax(A.row(t).transpose());
                           Vec beta = Vec::Zero(sh.d);
                           for (Eigen::Index k = 0; k < sh.d; ++k)
                             for (Eigen::Index j = 0; j < p; ++j) beta[k] += w[j] * V(j, k);
                           l += logistic(dot(b, beta));
                         }
                         return l / static_cast<double>(sh.rows);
                       };
                       return Vec(-central_gradient(loss, s.x));
                     }});
  }
  return cases;
}

// --- metric oracles -------------------------------------------------------------

struct HeadValue {
  double score;
  bool is_sink;
};

inline std::vector<HeadValue> sparsity(const vsflow::AttentionTensor& t, double threshold = 0.9) {
  const auto& d = t.dims();
  std::vector<HeadValue> out;
  for (std::size_t l = 0; l < d[0]; ++l)
    for (std::size_t h = 0; h < d[1]; ++h) {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t s = 0; s < d[2]; ++s)
        for (std::size_t q = 0; q < d[3]; ++q) {
          double mx = t(l, h, s, q, 0), tot = 0;
          for (std::size_t k = 0; k < d[4]; ++k) {
            mx = std::max(mx, t(l, h, s, q, k));
            tot += t(l, h, s, q, k);
          }
          if (tot == 0) continue;
          sum += mx / tot;
          ++n;
        }
      const double score = n ? sum / static_cast<double>(n) : 0.0;
      out.push_back({score, score > threshold});
    }
  return out;
}

inline std::vector<HeadValue> sink(const vsflow::AttentionTensor& t, std::size_t q0, std::size_t q1, std::size_t bos,
                                   double threshold = 0.9) {
  const auto& d = t.dims();
  std::vector<HeadValue> out;
  for (std::size_t l = 0; l < d[0]; ++l)
    for (std::size_t h = 0; h < d[1]; ++h) {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t s = 0; s < d[2]; ++s)
        for (std::size_t q = q0; q < q1; ++q) {
          double tot = 0;
          for (std::size_t k = 0; k < d[4]; ++k) tot += t(l, h, s, q, k);
          if (tot == 0) continue;
          sum += t(l, h, s, q, bos) / tot;
          ++n;
        }
      double score = n ? sum / static_cast<double>(n) : 0.0;
      score = std::min(1.0, std::max(0.0, score));
      out.push_back({score, score > threshold});
    }
  return out;
}

}  // namespace oracle
