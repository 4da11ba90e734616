#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "conesolve.hpp"
#include "linmap.hpp"
#include "nlsdp.hpp"
#include "ssp.hpp"
#include "symmat.hpp"

namespace sspsolve {

/// Thrown when a complementary pair has a common nullspace direction, so the
/// sensitivity theory does not apply.
class NotStrictlyComplementary : public NumericalError {
public:
  explicit NotStrictlyComplementary(const std::string& what) : NumericalError(what) {}
};

/// Thrown when the tangent system is numerically singular, so the solution
/// map has no well-defined derivative at this point.
class SingularTangentSystem : public NumericalError {
public:
  explicit SingularTangentSystem(const std::string& what) : NumericalError(what) {}
};

/**
 * Quadratic semidefinite program
 *
 *   minimize b.x + x.Hx/2  subject to  A(x) + C <= 0 (PSD order),
 *
 * described by the data [A, b, C, H]. H carries no definiteness assumption;
 * the program may be nonconvex.
 */
struct QsdpData {
  LinearMap A;
  VectorXd b;
  SymMat C;
  SymMat H;

  int n() const { return A.input_dim(); }
  int m() const { return A.matrix_dim(); }

  void validate() const {
    if (b.size() != A.input_dim() || H.dim() != A.input_dim() || C.dim() != A.matrix_dim())
      throw DimensionError("QsdpData: inconsistent dimensions");
  }
};

/// Data-space direction [dA, db, dC, dH]; dimensions mirror the base data.
struct QsdpPerturbation {
  LinearMap dA;
  VectorXd db;
  SymMat dC;
  SymMat dH;
};

inline QsdpPerturbation zero_perturbation(const QsdpData& d) {
  QsdpPerturbation p;
  p.dA = LinearMap(d.n(), d.m());
  p.db = VectorXd::Zero(d.n());
  p.dC = SymMat(d.m());
  p.dH = SymMat(d.n());
  return p;
}

/// Combined data norm sqrt(||A||^2 + ||b||^2 + ||C||^2 + ||H||^2).
inline double data_norm(const QsdpData& d) {
  const double a = d.A.norm();
  return std::sqrt(a * a + d.b.squaredNorm() + d.C.frob_norm() * d.C.frob_norm() +
                   d.H.frob_norm() * d.H.frob_norm());
}

inline double perturbation_norm(const QsdpPerturbation& p) {
  const double a = p.dA.norm();
  return std::sqrt(a * a + p.db.squaredNorm() + p.dC.frob_norm() * p.dC.frob_norm() +
                   p.dH.frob_norm() * p.dH.frob_norm());
}

/**
 * Primal-dual-slack triple (x, Y, S) of a quadratic SDP. At a stationary
 * point  A(x) + C + S = 0,  b + Hx + A*(Y) = 0,  YS + SY = 0,  Y, S >= 0.
 */
struct StationaryTriple {
  VectorXd x;
  SymMat Y;
  SymMat S;
};

struct StationaryResidual {
  double primal = 0;     // ||A(x) + C + S||_F
  double dual = 0;       // ||b + Hx + A*(Y)||
  double compl_sym = 0;  // ||YS + SY||_F
  double cone = 0;       // total negative-eigenvalue mass of Y and S
  double total = 0;
};

inline StationaryResidual stationary_residual(const QsdpData& d, const StationaryTriple& p) {
  d.validate();
  if (p.x.size() != d.n() || p.Y.dim() != d.m() || p.S.dim() != d.m())
    throw DimensionError("stationary_residual: point does not match the data");
  StationaryResidual r;
  SymMat pr = d.A.apply(p.x);
  pr.packed() += d.C.packed() + p.S.packed();
  r.primal = pr.frob_norm();
  r.dual = (d.b + d.H.dense() * p.x + d.A.adjoint(p.Y)).norm();
  const MatrixXd ys = p.Y.dense() * p.S.dense();
  r.compl_sym = (ys + ys.transpose()).norm();
  SymMat negY = p.Y, negS = p.S;
  negY.packed() *= -1.0;
  negS.packed() *= -1.0;
  r.cone = psd_violation(negY) + psd_violation(negS);  // distance to Y, S >= 0
  r.total = std::sqrt(r.primal * r.primal + r.dual * r.dual + r.compl_sym * r.compl_sym +
                      r.cone * r.cone);
  return r;
}

/// Stationarity test at tolerance stat_tol, scaled by the data and point size.
inline bool is_stationary(const QsdpData& d, const StationaryTriple& p, double stat_tol = 1e-9) {
  const double scale =
      1.0 + data_norm(d) + p.x.norm() + p.Y.frob_norm() + p.S.frob_norm();
  return stationary_residual(d, p).total <= stat_tol * scale;
}

/**
 * Simultaneous spectral form of a strictly complementary pair:
 *   Y = U diag(Y1, 0) U^T,  S = U diag(0, S2) U^T,
 * with U orthogonal, Y1 the k positive eigenvalues of Y in non-increasing
 * order and S2 the m-k positive eigenvalues of S, also non-increasing.
 */
struct ComplementaryDecomposition {
  MatrixXd U;
  int k = 0;
  VectorXd Y1;
  VectorXd S2;

  MatrixXd range_basis() const { return U.leftCols(k); }     // span of Y
  MatrixXd null_basis() const { return U.rightCols(U.cols() - k); }  // span of S
};

/**
 * Splits a complementary PSD pair along the spectrum of Y - S: positive
 * eigenvalues belong to Y, negative ones to S (YS = 0 makes the two ranges
 * orthogonal, so Y - S carries both spectra intact). Column signs are
 * canonicalized so the result is reproducible.
 */
inline ComplementaryDecomposition decompose(const SymMat& Y, const SymMat& S,
                                            double strict_tol = 0.0) {
  if (Y.dim() != S.dim()) throw DimensionError("decompose: dimension mismatch");
  const int m = Y.dim();
  if (strict_tol <= 0.0) strict_tol = 1e-6 * (1.0 + Y.frob_norm() + S.frob_norm());

  SymMat sum = Y;
  sum.packed() += S.packed();
  const double gap = min_eig(sum);
  if (gap <= strict_tol)
    throw NotStrictlyComplementary("decompose: min eig(Y + S) = " + std::to_string(gap) +
                                   " is below the strict-complementarity tolerance");

  SymMat diff = Y;
  diff.packed() -= S.packed();
  const EigDecomp ed = eig_sym(diff);  // eigenvalues descending

  int k = 0;
  for (int i = 0; i < m; ++i)
    if (ed.values[i] > 0.0) ++k;

  ComplementaryDecomposition dc;
  dc.k = k;
  dc.U = MatrixXd(m, m);
  // positive spectrum in given (descending) order, negative part reversed so
  // that S2 = -lambda also comes out non-increasing
  for (int j = 0; j < k; ++j) dc.U.col(j) = ed.vectors.col(j);
  for (int j = 0; j < m - k; ++j) dc.U.col(k + j) = ed.vectors.col(m - 1 - j);
  for (int j = 0; j < m; ++j) {
    int imax = 0;
    for (int i = 1; i < m; ++i)
      if (std::abs(dc.U(i, j)) > std::abs(dc.U(imax, j))) imax = i;
    if (dc.U(imax, j) < 0.0) dc.U.col(j) = -dc.U.col(j);
  }
  // Rayleigh quotients instead of raw eigenvalues: exact for a clean pair,
  // and they shed the O(||YS||) cross-contamination of a noisy one
  dc.Y1 = VectorXd(k);
  dc.S2 = VectorXd(m - k);
  const MatrixXd Yd = Y.dense(), Sd = S.dense();
  for (int j = 0; j < k; ++j) dc.Y1[j] = dc.U.col(j).dot(Yd * dc.U.col(j));
  for (int j = 0; j < m - k; ++j) dc.S2[j] = dc.U.col(k + j).dot(Sd * dc.U.col(k + j));
  return dc;
}

/**
 * Checks the complementarity facts behind the sensitivity theory on a
 * concrete pair (Y, S) and derivative candidates (Ydot, Sdot):
 *   - the product YS and its symmetrization YS + SY vanish together,
 *   - the one-sided derivative equation Y Sdot + Ydot S = 0 and its
 *     symmetrization vanish together,
 *   - under strict complementarity, solutions of the derivative equation
 *     carry the block structure (Sdot_11 = 0, Ydot_22 = 0 in the basis that
 *     splits Y from S, coupled by Y1 Sdot_12 + Ydot_12 S2 = 0).
 */
struct Lemma1Report {
  double ys_norm = 0;         // ||YS||_F
  double sym_norm = 0;        // ||YS + SY||_F
  bool complementary = false;
  bool eqq_product_consistent = false;  // the two product forms agree

  double one_sided_norm = 0;  // ||Y Sdot + Ydot S||_F
  double two_sided_norm = 0;  // symmetrized form
  bool derivative_consistent = false;   // the two derivative forms agree
  bool satisfies_derivative = false;    // the one-sided equation holds

  bool strictly_complementary = false;
  bool block_form = false;    // candidates have the split structure
  bool ok = false;
};

inline Lemma1Report check_lemma1(const SymMat& Y, const SymMat& S, const SymMat& Ydot,
                                 const SymMat& Sdot, double rtol = 1e-9) {
  if (Y.dim() != S.dim() || Ydot.dim() != Y.dim() || Sdot.dim() != Y.dim())
    throw DimensionError("check_lemma1: dimension mismatch");
  Lemma1Report rep;
  const MatrixXd Yd = Y.dense(), Sd = S.dense();
  const MatrixXd ys = Yd * Sd;
  rep.ys_norm = ys.norm();
  rep.sym_norm = (ys + ys.transpose()).norm();
  const double ptol = rtol * (1.0 + Y.frob_norm()) * (1.0 + S.frob_norm());
  rep.complementary = rep.ys_norm <= ptol;
  rep.eqq_product_consistent = rep.complementary == (rep.sym_norm <= 2.0 * ptol);

  const MatrixXd one = Yd * Sdot.dense() + Ydot.dense() * Sd;
  rep.one_sided_norm = one.norm();
  rep.two_sided_norm = (one + one.transpose()).norm();
  const double dtol = rtol * (1.0 + Y.frob_norm() + S.frob_norm()) *
                      (1.0 + Ydot.frob_norm() + Sdot.frob_norm());
  rep.satisfies_derivative = rep.one_sided_norm <= dtol;
  rep.derivative_consistent =
      rep.satisfies_derivative == (rep.two_sided_norm <= 2.0 * dtol);

  try {
    const ComplementaryDecomposition dc = decompose(Y, S);
    rep.strictly_complementary = true;
    const int m = Y.dim(), k = dc.k;
    const MatrixXd Yu = dc.U.transpose() * Ydot.dense() * dc.U;
    const MatrixXd Su = dc.U.transpose() * Sdot.dense() * dc.U;
    const double s11 = Su.topLeftCorner(k, k).norm();
    const double y22 = Yu.bottomRightCorner(m - k, m - k).norm();
    const MatrixXd couple = dc.Y1.asDiagonal() * Su.topRightCorner(k, m - k) +
                            Yu.topRightCorner(k, m - k) * dc.S2.asDiagonal();
    rep.block_form = s11 <= dtol && y22 <= dtol && couple.norm() <= dtol;
  } catch (const NotStrictlyComplementary&) {
    rep.strictly_complementary = false;
  }

  rep.ok = rep.eqq_product_consistent && rep.derivative_consistent &&
           (!rep.strictly_complementary || rep.satisfies_derivative == rep.block_form);
  return rep;
}

/**
 * Directions (xdot, Ydot, Sdot) of the stationary point under a data
 * perturbation, plus the curvature surrogate at the base point. The three
 * defining equations are
 *   A(xdot) + Sdot              = -dC - dA(x),
 *   H xdot + A*(Ydot)           = -db - dH x - dA*(Y),
 *   Y Sdot + Ydot S + sym.      = 0.
 */
struct SensitivityDirections {
  VectorXd xdot;
  SymMat Ydot;
  SymMat Sdot;
  double sosc_modulus = 0;  // min tangent Rayleigh quotient of H; +inf if vacuous
};

namespace detail {

/// svec-basis matrix of the Lyapunov-type map X -> MX + XM on S^m.
inline MatrixXd lyap_matrix(const SymMat& M) {
  const int m = M.dim();
  const int t = packed_size(m);
  const MatrixXd Md = M.dense();
  MatrixXd K(t, t);
  int p = 0;
  MatrixXd B = MatrixXd::Zero(m, m);
  for (int c = 0; c < m; ++c)
    for (int r = 0; r <= c; ++r, ++p) {
      const double s = r == c ? 1.0 : 1.0 / kSqrt2;
      // MB for the basis element B = s (e_r e_c' + e_c e_r') (one outer
      // product on the diagonal); MB + BM = MB + (MB)' since M, B symmetric
      B.setZero();
      B.col(c) += s * Md.col(r);
      if (r != c) B.col(r) += s * Md.col(c);
      K.col(p) = svec(SymMat::sym_part(B + B.transpose()));
    }
  return K;
}

/// Jacobian of the stationarity equations at (x, Y, S) in the svec basis:
/// row blocks [slack eq | gradient eq | symmetrized complementarity] over
/// unknowns [x | svec Y | svec S]. Square of side n + m(m+1).
inline MatrixXd kkt_matrix(const QsdpData& d, const StationaryTriple& p) {
  const int n = d.n();
  const int t = packed_size(d.m());
  const MatrixXd Asv = d.A.svec_matrix();
  MatrixXd K = MatrixXd::Zero(n + 2 * t, n + 2 * t);
  K.block(0, 0, t, n) = Asv;
  K.block(0, n + t, t, t).setIdentity();
  K.block(t, 0, n, n) = d.H.dense();
  K.block(t, n, n, t) = Asv.transpose();
  K.block(t + n, n, t, t) = lyap_matrix(p.S);
  K.block(t + n, n + t, t, t) = lyap_matrix(p.Y);
  return K;
}

/// Stacked residual of the same equations (cone membership not included).
inline VectorXd kkt_residual(const QsdpData& d, const StationaryTriple& p) {
  const int n = d.n();
  const int t = packed_size(d.m());
  VectorXd F(n + 2 * t);
  SymMat r1 = d.A.apply(p.x);
  r1.packed() += d.C.packed() + p.S.packed();
  F.head(t) = svec(r1);
  F.segment(t, n) = d.b + d.H.dense() * p.x + d.A.adjoint(p.Y);
  const MatrixXd comp = p.Y.dense() * p.S.dense();
  F.tail(t) = svec(SymMat::sym_part(comp + comp.transpose()));
  return F;
}

}  // namespace detail

/// Curvature along the constraint-tangent surrogate at the decomposed point:
/// the minimum Rayleigh quotient of H over directions h that keep the active
/// block of the constraint (the Y-range corner of U^T A(h) U) and the
/// objective slope h.(b + Hx) at zero. An empty surrogate space is vacuous
/// and reports +inf.
inline double sosc_surrogate(const QsdpData& d, const StationaryTriple& p,
                             const ComplementaryDecomposition& dc) {
  d.validate();
  const int n = d.n();
  const int k = dc.k;
  const int rows = packed_size(k) + 1;
  const MatrixXd U1 = dc.U.leftCols(k);
  MatrixXd W(rows, n);
  for (int i = 0; i < n; ++i) {
    const MatrixXd Ai = U1.transpose() * d.A.coeff(i).dense() * U1;
    W.col(i).head(rows - 1) = svec(SymMat::sym_part(Ai));
  }
  W.row(rows - 1) = (d.b + d.H.dense() * p.x).transpose();

  Eigen::JacobiSVD<MatrixXd> svd(W, Eigen::ComputeFullV);
  const double smax = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
  const double thresh = std::max(rows, n) * 1e-14 * std::max(1.0, smax);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > thresh) ++rank;
  const int null_dim = n - rank;
  if (null_dim == 0) return std::numeric_limits<double>::infinity();
  const MatrixXd Z = svd.matrixV().rightCols(null_dim);  // orthonormal
  return min_eig(SymMat::sym_part(Z.transpose() * d.H.dense() * Z));
}

/**
 * Assembles and solves the square tangent system (size m^2 + m + n: the n
 * entries of xdot and the packed upper triangles of Ydot and Sdot) in the
 * svec basis by dense partial-pivot LU with one step of iterative
 * refinement. Requires a strictly complementary base point; throws
 * SingularTangentSystem when the condition estimate exceeds 1/lin_tol,
 * which signals that the smooth-dependence hypotheses fail.
 */
inline SensitivityDirections tangent_solve(const QsdpData& d, const StationaryTriple& p,
                                           const QsdpPerturbation& dD,
                                           double lin_tol = 1e-10) {
  d.validate();
  const int n = d.n();
  const int m = d.m();
  if (p.x.size() != n || p.Y.dim() != m || p.S.dim() != m)
    throw DimensionError("tangent_solve: point does not match the data");
  if (dD.dA.input_dim() != n || dD.dA.matrix_dim() != m || dD.db.size() != n ||
      dD.dC.dim() != m || dD.dH.dim() != n)
    throw DimensionError("tangent_solve: perturbation does not match the data");

  const ComplementaryDecomposition dc = decompose(p.Y, p.S);  // hypothesis gate

  const int t = packed_size(m);
  const int N = n + 2 * t;  // unknowns [xdot | svec Ydot | svec Sdot]
  const MatrixXd K = detail::kkt_matrix(d, p);

  VectorXd rhs(N);
  // A(xdot) + Sdot = -dC - dA(x)
  SymMat r1 = dD.dA.apply(p.x);
  r1.packed() += dD.dC.packed();
  rhs.head(t) = -svec(r1);
  // H xdot + A*(Ydot) = -db - dH x - dA*(Y)
  rhs.segment(t, n) = -dD.db - dD.dH.dense() * p.x - dD.dA.adjoint(p.Y);
  // (Y Sdot + Sdot Y) + (Ydot S + S Ydot) = 0
  rhs.tail(t).setZero();

  Eigen::PartialPivLU<MatrixXd> lu(K);
  const double rc = lu.rcond();
  if (!(rc > lin_tol))
    throw SingularTangentSystem("tangent_solve: reciprocal condition estimate " +
                                std::to_string(rc));
  VectorXd sol = lu.solve(rhs);
  sol += lu.solve(rhs - K * sol);

  const double res = (K * sol - rhs).norm();
  if (!(res <= lin_tol * (1.0 + rhs.norm()) * std::sqrt(static_cast<double>(N))))
    throw SingularTangentSystem("tangent_solve: residual " + std::to_string(res) +
                                " after refinement");

  SensitivityDirections out;
  out.xdot = sol.head(n);
  out.Ydot = smat(m, sol.segment(n, t));
  out.Sdot = smat(m, sol.tail(t));
  out.sosc_modulus = sosc_surrogate(d, p, dc);
  return out;
}

/**
 * Central-difference check of the tangent directions: re-solves the program
 * at data +/- t*dD and compares (x(t) - x(-t)) / 2t (and the matrix
 * analogues) against tangent_solve. The deviation shrinks as O(t^2) when
 * the sensitivity theory applies. A definite H goes straight to the conic
 * solver; otherwise the quadratic objective is lifted to an epigraph and
 * re-solved by the outer method from the base point.
 */
struct FdReport {
  bool ok = false;
  double t = 0;
  VectorXd fd_x;
  SymMat fd_Y;
  SymMat fd_S;
  double x_dev = 0, y_dev = 0, s_dev = 0;
  double rel_dev = 0;  // combined deviation over the direction magnitude
  std::string message;
};

namespace detail {

inline LinearMap shifted_map(const LinearMap& A, const LinearMap& dA, double t) {
  std::vector<SymMat> coeffs;
  coeffs.reserve(static_cast<size_t>(A.input_dim()));
  for (int i = 0; i < A.input_dim(); ++i) {
    SymMat c = A.coeff(i);
    c.packed() += t * dA.coeff(i).packed();
    coeffs.push_back(std::move(c));
  }
  return LinearMap::from_coeffs(std::move(coeffs));
}

inline QsdpData shifted_data(const QsdpData& d, const QsdpPerturbation& dD, double t) {
  QsdpData s;
  s.A = shifted_map(d.A, dD.dA, t);
  s.b = d.b + t * dD.db;
  s.C = d.C;
  s.C.packed() += t * dD.dC.packed();
  s.H = d.H;
  s.H.packed() += t * dD.dH.packed();
  return s;
}

/// Local Newton refinement of a nearly stationary triple on the square
/// symmetrized system. Interior-point and outer-method answers carry
/// solver-floor noise that central differences would amplify by 1/t; a few
/// Newton steps take them to machine accuracy whenever the tangent matrix
/// is nonsingular at the limit.
inline bool polish_stationary(const QsdpData& d, StationaryTriple& p, int max_iter = 8) {
  const int n = d.n();
  const int m = d.m();
  const int t = packed_size(m);
  const double scale =
      1.0 + data_norm(d) + p.x.norm() + p.Y.frob_norm() + p.S.frob_norm();
  double best = kkt_residual(d, p).norm();
  StationaryTriple keep = p;
  for (int it = 0; it < max_iter && best > 1e-14 * scale; ++it) {
    const VectorXd F = kkt_residual(d, p);
    Eigen::PartialPivLU<MatrixXd> lu(kkt_matrix(d, p));
    if (!(lu.rcond() > 1e-13)) break;
    const VectorXd step = lu.solve(-F);
    if (!step.allFinite()) break;
    p.x += step.head(n);
    p.Y.packed() += smat(m, step.segment(n, t)).packed();
    p.S.packed() += smat(m, step.tail(t)).packed();
    const double res = kkt_residual(d, p).norm();
    if (res < best) {
      best = res;
      keep = p;
    } else {
      break;
    }
  }
  p = std::move(keep);
  return best <= 1e-11 * scale;
}

/// Nonconvex branch of resolve_qsdp: the quadratic objective lifted to an
/// epigraph and re-solved by the outer method from the base point.
inline bool epigraph_resolve(const QsdpData& d, const StationaryTriple& base,
                             StationaryTriple& out, std::string& context,
                             std::string& message) {
  const int n = d.n();
  const int m = d.m();
  // minimize b.x + tau subject to x.Hx/2 - tau <= 0
  NlsdpProblem prob;
  prob.n = n + 1;
  prob.b = VectorXd(n + 1);
  prob.b.head(n) = d.b;
  prob.b[n] = 1.0;
  MatrixConstraint blk;
  blk.dim = m;
  blk.value = [d, n](const VectorXd& z) { return d.A.apply(z.head(n)) + d.C; };
  blk.derivative = [d, n](const VectorXd&) {
    LinearMap ext(n + 1, d.m());
    for (int i = 0; i < n; ++i) ext.coeff(i) = d.A.coeff(i);
    return ext;
  };
  blk.curvature = [n](const VectorXd&, const SymMat&) { return SymMat(n + 1); };
  prob.blocks.push_back(std::move(blk));
  prob.ineq.dim = 1;
  prob.ineq.value = [d, n](const VectorXd& z) {
    return VectorXd::Constant(1, 0.5 * z.head(n).dot(d.H.dense() * z.head(n)) - z[n]);
  };
  prob.ineq.jacobian = [d, n](const VectorXd& z) {
    MatrixXd J(1, n + 1);
    J.leftCols(n) = (d.H.dense() * z.head(n)).transpose();
    J(0, n) = -1.0;
    return J;
  };
  prob.ineq.curvature = [d, n](const VectorXd&, const VectorXd& mult) {
    SymMat c(n + 1);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i <= j; ++i) c(i, j) = mult[0] * d.H(i, j);
    return c;
  };
  prob = build_problem(std::move(prob));

  SspIterate start = make_iterate(prob, [&] {
    VectorXd z(n + 1);
    z.head(n) = base.x;
    z[n] = 0.5 * base.x.dot(d.H.dense() * base.x);
    return z;
  }());
  start.Y = base.Y;
  start.u[0] = 1.0;  // epigraph row is tight with unit multiplier

  SspOptions opt;
  opt.outer_tol = 1e-8;  // the polish owns the last stretch
  const SspRun run = solve(prob, start, opt);
  context = std::string("epigraph re-solve ") + to_string(run.result);
  if (!run.iterate.x.allFinite() || !(run.kkt.total <= 1e-4)) {
    message = context + ": " + run.message;
    return false;
  }
  out.x = run.iterate.x.head(n);
  out.Y = run.iterate.Y;
  out.S = run.iterate.S;
  return true;
}

/// One perturbed re-solve; feeds fd_verify. Returns false with a message on
/// solver failure. The solver answer is only a starting guess: acceptance is
/// decided by the stationarity residual after polishing.
inline bool resolve_qsdp(const QsdpData& d, const StationaryTriple& base, bool convex,
                         StationaryTriple& out, std::string& message) {
  std::string context;
  if (convex) {
    ConicProgram pr;
    pr.n_free = d.n();
    pr.c = d.b;
    pr.Q = d.H.dense();
    pr.psd_cs.push_back({d.A, d.C});
    SolveOptions opt;
    opt.gap_tol = 1e-10;
    opt.feas_tol = 1e-10;
    const ConicSolution sol = solve(pr, opt);
    // a stalled endgame still leaves an iterate inside the polish basin
    const bool usable = (sol.status == SolveStatus::Optimal ||
                         sol.status == SolveStatus::MaxIter ||
                         sol.status == SolveStatus::Numerical) &&
                        sol.psd.size() == 1 && sol.x.allFinite();
    if (!usable) {
      message = std::string("conic re-solve: ") + to_string(sol.status);
      return false;
    }
    out.x = sol.x;
    out.Y = sol.psd[0].dual;
    out.S = sol.psd[0].slack;
    context = std::string("conic re-solve ") + to_string(sol.status);
  } else {
    if (!epigraph_resolve(d, base, out, context, message)) return false;
  }

  polish_stationary(d, out);
  if (!is_stationary(d, out, 1e-10)) {
    message = context + ": no verified stationary point after polish";
    return false;
  }
  return true;
}

}  // namespace detail

inline FdReport fd_verify(const QsdpData& d, const StationaryTriple& p,
                          const QsdpPerturbation& dD, double t) {
  if (!(t > 0.0)) throw DimensionError("fd_verify: t must be positive");
  const SensitivityDirections dir = tangent_solve(d, p, dD);

  FdReport rep;
  rep.t = t;
  // definiteness persists under the perturbation range we probe
  const bool convex = min_eig(d.H) - t * spectral_norm(dD.dH.dense()) >= 0.0;

  StationaryTriple plus, minus;
  std::string msg;
  if (!detail::resolve_qsdp(detail::shifted_data(d, dD, t), p, convex, plus, msg)) {
    rep.message = "+t side failed: " + msg;
    return rep;
  }
  if (!detail::resolve_qsdp(detail::shifted_data(d, dD, -t), p, convex, minus, msg)) {
    rep.message = "-t side failed: " + msg;
    return rep;
  }

  rep.ok = true;
  rep.fd_x = (plus.x - minus.x) / (2.0 * t);
  rep.fd_Y = plus.Y;
  rep.fd_Y.packed() = (plus.Y.packed() - minus.Y.packed()) / (2.0 * t);
  rep.fd_S = plus.S;
  rep.fd_S.packed() = (plus.S.packed() - minus.S.packed()) / (2.0 * t);
  rep.x_dev = (rep.fd_x - dir.xdot).norm();
  rep.y_dev = (rep.fd_Y.packed() - dir.Ydot.packed()).norm();
  rep.s_dev = (rep.fd_S.packed() - dir.Sdot.packed()).norm();
  const double dev = std::sqrt(rep.x_dev * rep.x_dev + rep.y_dev * rep.y_dev +
                               rep.s_dev * rep.s_dev);
  const double mag = std::sqrt(dir.xdot.squaredNorm() + dir.Ydot.packed().squaredNorm() +
                               dir.Sdot.packed().squaredNorm());
  rep.rel_dev = dev / (1.0 + mag);
  return rep;
}

}  // namespace sspsolve
