#pragma once

#include <utility>
#include <vector>

#include "symmat.hpp"

namespace sspsolve {

/** Linear map A: R^n -> S^m, A(x) = sum_i x_i A_i, with coefficient matrices
 *  A_1, ..., A_n in S^m. */
class LinearMap {
public:
  LinearMap() = default;

  LinearMap(int n, int m) : n_(n), m_(m), coeff_(static_cast<size_t>(n), SymMat(m)) {
    if (n < 0 || m < 0) throw DimensionError("LinearMap: negative dimension");
  }

  static LinearMap from_coeffs(std::vector<SymMat> coeffs) {
    LinearMap a;
    a.n_ = static_cast<int>(coeffs.size());
    a.m_ = coeffs.empty() ? 0 : coeffs.front().dim();
    for (const SymMat& c : coeffs)
      if (c.dim() != a.m_) throw DimensionError("LinearMap: inconsistent coefficient dims");
    a.coeff_ = std::move(coeffs);
    return a;
  }

  int input_dim() const { return n_; }
  int matrix_dim() const { return m_; }

  SymMat& coeff(int i) { return coeff_[static_cast<size_t>(i)]; }
  const SymMat& coeff(int i) const { return coeff_[static_cast<size_t>(i)]; }

  /// A(x) = sum_i x_i A_i.
  SymMat apply(const VectorXd& x) const {
    if (x.size() != n_) throw DimensionError("LinearMap::apply: x has wrong length");
    SymMat r(m_);
    for (int i = 0; i < n_; ++i) r.packed() += x[i] * coeff_[static_cast<size_t>(i)].packed();
    return r;
  }

  /// Adjoint with respect to the trace inner product: (A^*(Y))_i = A_i . Y.
  VectorXd adjoint(const SymMat& Y) const {
    if (Y.dim() != m_) throw DimensionError("LinearMap::adjoint: Y has wrong dimension");
    VectorXd r(n_);
    for (int i = 0; i < n_; ++i) r[i] = trace_inner(coeff_[static_cast<size_t>(i)], Y);
    return r;
  }

  /// Operator norm sqrt(sum_i ||A_i||^2) with spectral norms of the
  /// coefficients; an upper bound compatible with ||A(x)|| <= ||A|| ||x||.
  double norm() const {
    double s = 0.0;
    for (const SymMat& c : coeff_) {
      const double t = spectral_norm(c.dense());
      s += t * t;
    }
    return std::sqrt(s);
  }

  /// Dense matrix of the map in the svec basis: column i is svec(A_i).
  MatrixXd svec_matrix() const {
    MatrixXd G(packed_size(m_), n_);
    for (int i = 0; i < n_; ++i) G.col(i) = svec(coeff_[static_cast<size_t>(i)]);
    return G;
  }

private:
  int n_ = 0, m_ = 0;
  std::vector<SymMat> coeff_;
};

}  // namespace sspsolve
