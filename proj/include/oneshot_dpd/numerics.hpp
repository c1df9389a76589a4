#pragma once

// Special functions and small dense linear algebra shared by every other
// header. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oneshot_dpd {

using Vector = std::vector<double>;

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::domain_error(std::string(what) + ": non-finite input");
  }
}

}  // namespace detail

// ============================================================================
// Normal distribution
// ============================================================================

inline double std_normal_pdf(double z) {
  detail::require_finite(z, "std_normal_pdf");
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

/// Phi(z) through the complementary error function. glibc's erfc is
/// accurate to a couple of ulps over the whole line, which keeps the
/// absolute error far below 1e-14 and the relative error small in the
/// lower tail.
inline double std_normal_cdf(double z) {
  detail::require_finite(z, "std_normal_cdf");
  return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0);
}

/// Upper tail 1 - Phi(z), evaluated without cancellation.
inline double std_normal_sf(double z) {
  detail::require_finite(z, "std_normal_sf");
  return 0.5 * std::erfc(z * std::numbers::sqrt2 / 2.0);
}

/// Inverse of Phi. Acklam's rational approximation seeds two Halley
/// refinements against std_normal_cdf, which lands within an ulp or two.
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("std_normal_quantile: p must lie in (0, 1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  for (int iter = 0; iter < 2; ++iter) {
    // work on the smaller tail so the residual keeps its relative accuracy
    const double e = x < 0.0 ? std_normal_cdf(x) - p : (1.0 - p) - std_normal_sf(x);
    const double u = e / std_normal_pdf(x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

// ============================================================================
// Regularized incomplete gamma and the chi-square distribution
// ============================================================================

namespace detail {

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  double ap = a;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Lentz continued fraction; used for x >= a + 1.
inline double gamma_q_contfrac(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw std::domain_error("gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x);
  return 1.0 - detail::gamma_q_contfrac(a, x);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw std::domain_error("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_contfrac(a, x);
}

/// P(chi^2_r > x).
inline double chisq_sf(double x, int r) {
  if (r < 1) throw std::domain_error("chisq_sf: degrees of freedom must be >= 1");
  if (!(x >= 0.0)) throw std::domain_error("chisq_sf: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  return gamma_q(0.5 * r, 0.5 * x);
}

/// Upper-alpha point of chi^2_r: the x with P(chi^2_r > x) = alpha.
inline double chisq_quantile(double alpha, int r) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error("chisq_quantile: alpha must lie in (0, 1)");
  }
  if (r < 1) throw std::domain_error("chisq_quantile: degrees of freedom must be >= 1");

  // Wilson-Hilferty seed, then safeguarded Newton on log Q to stay accurate
  // for tiny alpha.
  const double z = std_normal_quantile(1.0 - alpha);
  const double k = r;
  const double v = 2.0 / (9.0 * k);
  double x = k * std::pow(std::max(1.0 - v + z * std::sqrt(v), 1e-3), 3);

  double lo = 0.0;
  double hi = std::max(2.0 * x, 10.0);
  while (chisq_sf(hi, r) > alpha) hi *= 2.0;
  x = std::clamp(x, lo, hi);

  const double half = 0.5 * k;
  for (int iter = 0; iter < 200; ++iter) {
    const double q = chisq_sf(x, r);
    if (q > alpha) lo = x; else hi = x;
    // chi^2_r density at x
    const double dens = x > 0.0
        ? std::exp((half - 1.0) * std::log(x) - 0.5 * x - half * std::numbers::ln2 - std::lgamma(half))
        : 0.0;
    double next = 0.5 * (lo + hi);
    if (dens > 0.0 && q > 0.0) {
      // d(log Q)/dx = -dens / Q
      const double step = (std::log(q) - std::log(alpha)) * q / dens;
      const double cand = x + step;
      if (cand > lo && cand < hi) next = cand;
    }
    if (std::abs(next - x) <= 1e-15 * std::max(1.0, x)) {
      x = next;
      break;
    }
    x = next;
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  return x;
}

// ============================================================================
// Dense matrices
// ============================================================================

/// Row-major dense matrix. Sizes here are tiny (a handful of parameters),
/// so everything is done with plain loops.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }

  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// this += s * u v^T
  void add_outer(std::span<const double> u, std::span<const double> v, double s) {
    if (u.size() != rows_ || v.size() != cols_) {
      throw std::invalid_argument("Matrix::add_outer: dimension mismatch");
    }
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) += s * u[i] * v[j];
  }

  double max_abs_diff(const Matrix& o) const {
    check_same_shape(o);
    double m = 0.0;
    for (std::size_t k = 0; k < data_.size(); ++k) m = std::max(m, std::abs(data_[k] - o.data_[k]));
    return m;
  }

  bool is_symmetric(double rel_tol = 1e-10) const {
    if (!is_square()) return false;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j) {
        const double a = (*this)(i, j);
        const double b = (*this)(j, i);
        if (std::abs(a - b) > rel_tol * (1.0 + std::abs(a))) return false;
      }
    return true;
  }

  std::span<const double> data() const { return data_; }

 private:
  void check_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw std::invalid_argument("Matrix: shape mismatch");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using SquareMatrix = Matrix;

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("Matrix product: dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw std::invalid_argument("Matrix-vector product: dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// x^T M x
inline double quadratic_form(const Matrix& m, std::span<const double> x) {
  const Vector mx = m * x;
  return dot(x, mx);
}

// ============================================================================
// Symmetric solves
// ============================================================================

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Columns of `vectors` are the eigenvectors.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

inline SymmetricEigen symmetric_eigen(const Matrix& m) {
  if (!m.is_square()) throw std::domain_error("symmetric_eigen: matrix is not square");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) off += a(i, j) * a(i, j);
        scale += a(i, j) * a(i, j);
      }
    if (off <= 1e-30 * scale || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  Vector values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
  return {std::move(values), std::move(v)};
}

struct SpdInverse {
  Matrix inverse;
  bool near_singular = false;
};

struct SpdSolution {
  Vector x;
  bool near_singular = false;
};

namespace detail {

inline void require_symmetric(const Matrix& m, const char* who) {
  if (!m.is_square() || !m.is_symmetric(1e-10)) {
    throw std::domain_error(std::string(who) + ": matrix is not symmetric");
  }
}

// Lower Cholesky factor; returns false if a pivot falls below the relative
// threshold.
inline bool cholesky(const Matrix& m, Matrix& l) {
  const std::size_t n = m.rows();
  l = Matrix(n, n);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(m(i, i)));
  const double floor = 1e-12 * max_diag;
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > floor) || max_diag == 0.0) return false;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return true;
}

inline Vector cholesky_solve(const Matrix& l, std::span<const double> rhs) {
  const std::size_t n = l.rows();
  Vector y(rhs.begin(), rhs.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
    y[i] /= l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
    y[ii] /= l(ii, ii);
  }
  return y;
}

inline Matrix pseudo_inverse(const Matrix& m) {
  const SymmetricEigen eig = symmetric_eigen(m);
  const std::size_t n = m.rows();
  double max_abs = 0.0;
  for (double v : eig.values) max_abs = std::max(max_abs, std::abs(v));
  const double cut = 1e-12 * max_abs;
  Matrix p(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = eig.values[k];
    if (std::abs(lam) <= cut || lam == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p(i, j) += eig.vectors(i, k) * eig.vectors(j, k) / lam;
  }
  return p;
}

}  // namespace detail

/// Inverse of a symmetric positive (semi)definite matrix. Falls back to an
/// eigenvalue-thresholded pseudo-inverse when Cholesky meets a pivot below
/// 1e-12 of the largest diagonal entry.
inline SpdInverse invert_spd(const Matrix& m) {
  detail::require_symmetric(m, "invert_spd");
  const std::size_t n = m.rows();
  Matrix l;
  if (detail::cholesky(m, l)) {
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(e.begin(), e.end(), 0.0);
      e[j] = 1.0;
      const Vector col = detail::cholesky_solve(l, e);
      for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double avg = 0.5 * (inv(i, j) + inv(j, i));
        inv(i, j) = avg;
        inv(j, i) = avg;
      }
    return {std::move(inv), false};
  }
  return {detail::pseudo_inverse(m), true};
}

inline SpdSolution solve_spd(const Matrix& m, std::span<const double> rhs) {
  detail::require_symmetric(m, "solve_spd");
  if (rhs.size() != m.rows()) throw std::invalid_argument("solve_spd: dimension mismatch");
  Matrix l;
  if (detail::cholesky(m, l)) return {detail::cholesky_solve(l, rhs), false};
  const Matrix p = detail::pseudo_inverse(m);
  return {p * rhs, true};
}

}  // namespace oneshot_dpd
