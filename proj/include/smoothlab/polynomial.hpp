#ifndef SMOOTHLAB_POLYNOMIAL_HPP
#define SMOOTHLAB_POLYNOMIAL_HPP

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "smoothlab/errors.hpp"
#include "smoothlab/linalg.hpp"

namespace smoothlab {

/// coeff * prod_k x_k^powers[k]
struct Monomial {
  double coeff = 0.0;
  std::vector<int> powers;

  int degree() const { return std::accumulate(powers.begin(), powers.end(), 0); }
};

/// Test function supplied symbolically as a list of monomials.
struct Polynomial {
  int dim = 1;
  std::vector<Monomial> terms;

  int degree() const {
    int d = 0;
    for (const auto& t : terms)
      if (t.coeff != 0.0) d = std::max(d, t.degree());
    return d;
  }

  double operator()(const Vector& x) const {
    double sum = 0.0;
    for (const auto& t : terms) {
      double v = t.coeff;
      for (int k = 0; k < dim; ++k)
        for (int p = 0; p < t.powers[k]; ++p) v *= x[k];
      sum += v;
    }
    return sum;
  }

  static Polynomial constant(int dim, double c) { return {dim, {{c, std::vector<int>(dim, 0)}}}; }

  static Polynomial coordinate(int dim, int k) {
    std::vector<int> p(dim, 0);
    p[k] = 1;
    return {dim, {{1.0, p}}};
  }

  static Polynomial power(int dim, int k, int n) {
    std::vector<int> p(dim, 0);
    p[k] = n;
    return {dim, {{1.0, p}}};
  }

  /// Univariate polynomial from ascending coefficients c_0 + c_1 x + ...
  static Polynomial univariate(const std::vector<double>& coeffs) {
    Polynomial out{1, {}};
    for (std::size_t i = 0; i < coeffs.size(); ++i) out.terms.push_back({coeffs[i], {static_cast<int>(i)}});
    return out;
  }
};

/// f(x) = c + g'x + x'Qx with Q symmetric.
struct QuadraticForm {
  double c = 0.0;
  Vector g;
  Matrix Q;

  double value(const Vector& x) const { return c + g.dot(x) + x.dot(Q * x); }
  Vector gradient(const Vector& x) const { return g + 2.0 * (Q * x); }
  Matrix hessian() const { return 2.0 * Q; }
  bool is_constant() const { return g.isZero(0.0) && Q.isZero(0.0); }
};

/// Rejects anything above degree two.
inline QuadraticForm to_quadratic(const Polynomial& f) {
  if (f.degree() > 2) {
    throw Error(ErrorCode::UnsupportedTestFunction,
                "test functions must be polynomials of degree <= 2 (got degree " +
                    std::to_string(f.degree()) + ")");
  }
  require(f.dim >= 1 && f.dim <= kMaxDim, ErrorCode::DimensionMismatch, "polynomial dimension");
  QuadraticForm q{0.0, Vector::Zero(f.dim), Matrix::Zero(f.dim, f.dim)};
  for (const auto& t : f.terms) {
    require(static_cast<int>(t.powers.size()) == f.dim, ErrorCode::DimensionMismatch,
            "monomial exponent vector has wrong length");
    std::vector<int> vars;
    for (int k = 0; k < f.dim; ++k)
      for (int p = 0; p < t.powers[k]; ++p) vars.push_back(k);
    if (vars.empty()) {
      q.c += t.coeff;
    } else if (vars.size() == 1) {
      q.g[vars[0]] += t.coeff;
    } else if (vars[0] == vars[1]) {
      q.Q(vars[0], vars[0]) += t.coeff;
    } else {
      q.Q(vars[0], vars[1]) += 0.5 * t.coeff;
      q.Q(vars[1], vars[0]) += 0.5 * t.coeff;
    }
  }
  return q;
}

/// E f(X) for X ~ N(mean, cov).
inline double gaussian_expectation(const QuadraticForm& f, const Vector& mean, const Matrix& cov) {
  return f.value(mean) + (f.Q * cov).trace();
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_POLYNOMIAL_HPP
