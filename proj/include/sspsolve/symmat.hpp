#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sspsolve {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/** Thrown when an iterative numerical kernel fails to converge. */
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/** Thrown on dimension mismatches and other caller contract violations. */
class DimensionError : public std::invalid_argument {
public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/** Thrown when serialized problem or matrix data cannot be read back. */
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

inline int packed_size(int dim) { return dim * (dim + 1) / 2; }

/// Index of entry (i, j), i <= j, in the packed upper triangle
/// (column-major: (0,0), (0,1), (1,1), (0,2), ...).
inline int packed_index(int i, int j) { return j * (j + 1) / 2 + i; }

/** Symmetric matrix stored as the packed upper triangle (m(m+1)/2 doubles). */
class SymMat {
public:
  SymMat() = default;

  explicit SymMat(int dim) : dim_(dim) {
    if (dim < 0) throw DimensionError("SymMat: negative dimension");
    a_ = VectorXd::Zero(packed_size(dim));
  }

  static SymMat zero(int dim) { return SymMat(dim); }

  static SymMat identity(int dim) {
    SymMat s(dim);
    for (int i = 0; i < dim; ++i) s(i, i) = 1.0;
    return s;
  }

  static SymMat from_packed(int dim, VectorXd packed) {
    if (packed.size() != packed_size(dim))
      throw DimensionError("SymMat::from_packed: packed length does not match dim");
    SymMat s;
    s.dim_ = dim;
    s.a_ = std::move(packed);
    return s;
  }

  /// Requires M square and symmetric within sym_tol * max(1, ||M||_F);
  /// the stored matrix is the symmetric part of M.
  static SymMat from_dense(const MatrixXd& M, double sym_tol = 1e-12) {
    if (M.rows() != M.cols()) throw DimensionError("SymMat::from_dense: matrix not square");
    const double scale = std::max(1.0, M.norm());
    if ((M - M.transpose()).norm() > sym_tol * scale)
      throw DimensionError("SymMat::from_dense: matrix not symmetric within tolerance");
    SymMat s(static_cast<int>(M.rows()));
    for (int j = 0; j < s.dim_; ++j)
      for (int i = 0; i <= j; ++i) s(i, j) = 0.5 * (M(i, j) + M(j, i));
    return s;
  }

  /// Symmetric part of an arbitrary square matrix (no symmetry check).
  static SymMat sym_part(const MatrixXd& M) {
    if (M.rows() != M.cols()) throw DimensionError("SymMat::sym_part: matrix not square");
    SymMat s(static_cast<int>(M.rows()));
    for (int j = 0; j < s.dim_; ++j)
      for (int i = 0; i <= j; ++i) s(i, j) = 0.5 * (M(i, j) + M(j, i));
    return s;
  }

  int dim() const { return dim_; }

  double& operator()(int i, int j) {
    if (i > j) std::swap(i, j);
    return a_[packed_index(i, j)];
  }
  double operator()(int i, int j) const {
    if (i > j) std::swap(i, j);
    return a_[packed_index(i, j)];
  }

  const VectorXd& packed() const { return a_; }
  VectorXd& packed() { return a_; }

  MatrixXd dense() const {
    MatrixXd M(dim_, dim_);
    for (int j = 0; j < dim_; ++j)
      for (int i = 0; i <= j; ++i) M(i, j) = M(j, i) = a_[packed_index(i, j)];
    return M;
  }

  SymMat& operator+=(const SymMat& o) {
    check_same_dim(o);
    a_ += o.a_;
    return *this;
  }
  SymMat& operator-=(const SymMat& o) {
    check_same_dim(o);
    a_ -= o.a_;
    return *this;
  }
  SymMat& operator*=(double t) {
    a_ *= t;
    return *this;
  }

  friend SymMat operator+(SymMat a, const SymMat& b) { return a += b; }
  friend SymMat operator-(SymMat a, const SymMat& b) { return a -= b; }
  friend SymMat operator*(double t, SymMat a) { return a *= t; }

  /// Frobenius norm, computed from packed storage.
  double frob_norm() const {
    double d2 = 0.0, o2 = 0.0;
    for (int j = 0; j < dim_; ++j) {
      d2 += a_[packed_index(j, j)] * a_[packed_index(j, j)];
      for (int i = 0; i < j; ++i) o2 += a_[packed_index(i, j)] * a_[packed_index(i, j)];
    }
    return std::sqrt(d2 + 2.0 * o2);
  }

  double trace() const {
    double t = 0.0;
    for (int j = 0; j < dim_; ++j) t += a_[packed_index(j, j)];
    return t;
  }

private:
  void check_same_dim(const SymMat& o) const {
    if (o.dim_ != dim_) throw DimensionError("SymMat: dimension mismatch");
  }

  int dim_ = 0;
  VectorXd a_;
};

inline constexpr double kSqrt2 = 1.4142135623730951;

/** svec isometry: packed upper triangle with off-diagonals scaled by sqrt(2),
 *  so that trace_inner(X, Y) == svec(X).dot(svec(Y)) exactly. */
inline VectorXd svec(const SymMat& X) {
  const int m = X.dim();
  VectorXd v(packed_size(m));
  for (int j = 0, k = 0; j < m; ++j)
    for (int i = 0; i <= j; ++i, ++k) v[k] = (i == j) ? X(i, j) : kSqrt2 * X(i, j);
  return v;
}

inline SymMat smat(int dim, const VectorXd& v) {
  if (v.size() != packed_size(dim)) throw DimensionError("smat: packed length does not match dim");
  SymMat X(dim);
  for (int j = 0, k = 0; j < dim; ++j)
    for (int i = 0; i <= j; ++i, ++k) X(i, j) = (i == j) ? v[k] : v[k] / kSqrt2;
  return X;
}

/** Trace inner product <X, Y> = trace(X^T Y). */
inline double trace_inner(const SymMat& X, const SymMat& Y) {
  if (X.dim() != Y.dim()) throw DimensionError("trace_inner: dimension mismatch");
  double d = 0.0, o = 0.0;
  for (int j = 0; j < X.dim(); ++j) {
    d += X(j, j) * Y(j, j);
    for (int i = 0; i < j; ++i) o += X(i, j) * Y(i, j);
  }
  return d + 2.0 * o;
}

struct EigDecomp {
  VectorXd values;   // non-increasing
  MatrixXd vectors;  // orthogonal; input = vectors * diag(values) * vectors^T
};

/** Deterministic symmetric eigendecomposition.
 *
 *  Householder tridiagonalization followed by the implicit-shift QL/QR sweep
 *  (Eigen's self-adjoint solver), reordered so eigenvalues are non-increasing.
 */
inline EigDecomp eig_sym(const SymMat& X) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.dense());
  if (es.info() != Eigen::Success)
    throw NumericalError("eig_sym: QL/QR iteration did not converge");
  const int m = X.dim();
  EigDecomp d;
  d.values = es.eigenvalues().reverse();
  d.vectors = MatrixXd(m, m);
  for (int j = 0; j < m; ++j) d.vectors.col(j) = es.eigenvectors().col(m - 1 - j);
  return d;
}

inline double min_eig(const SymMat& X) {
  if (X.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.dense(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("min_eig: did not converge");
  return es.eigenvalues()(0);
}

inline double max_eig(const SymMat& X) {
  if (X.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.dense(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("max_eig: did not converge");
  return es.eigenvalues()(X.dim() - 1);
}

/** Largest singular value of a (rectangular) matrix. */
inline double spectral_norm(const MatrixXd& M) {
  if (M.rows() == 0 || M.cols() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(M);
  return svd.singularValues()(0);
}

/** Projection onto the PSD cone: V max(D, floor) V^T. */
inline SymMat psd_part(const SymMat& X, double floor = 0.0) {
  EigDecomp d = eig_sym(X);
  MatrixXd R = d.vectors * d.values.cwiseMax(floor).asDiagonal() * d.vectors.transpose();
  return SymMat::sym_part(R);
}

/// Frobenius distance from -X to the PSD cone, i.e. ||max(X, 0)||_F; zero
/// exactly when X is negative semidefinite.
inline double psd_violation(const SymMat& X) {
  EigDecomp d = eig_sym(X);
  double s = 0.0;
  for (int i = 0; i < X.dim(); ++i) s += std::max(d.values[i], 0.0) * std::max(d.values[i], 0.0);
  return std::sqrt(s);
}

}  // namespace sspsolve
