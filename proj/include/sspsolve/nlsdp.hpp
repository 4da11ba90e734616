#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "conesolve.hpp"
#include "rng.hpp"

namespace sspsolve {

/// Cone-space image (g.x + gamma; F x + f) of the affine second-order-cone
/// constraint ||F x + f|| <= g.x + gamma.
inline VectorXd soc_eval(const SocConstraint& sc, const VectorXd& x) {
  if (sc.g.size() != x.size() || sc.F.cols() != x.size())
    throw DimensionError("soc_eval: x has wrong length");
  VectorXd s(1 + sc.F.rows());
  s[0] = sc.g.dot(x) + sc.gamma;
  s.tail(sc.F.rows()) = sc.F * x + sc.f;
  return s;
}

inline SymMat extract_block(const SymMat& M, int offset, int dim) {
  if (offset < 0 || dim < 0 || offset + dim > M.dim())
    throw DimensionError("extract_block: block out of range");
  SymMat B(dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r <= c; ++r) B(r, c) = M(offset + r, offset + c);
  return B;
}

inline void insert_block(SymMat& M, int offset, const SymMat& B) {
  if (offset < 0 || offset + B.dim() > M.dim())
    throw DimensionError("insert_block: block out of range");
  for (int c = 0; c < B.dim(); ++c)
    for (int r = 0; r <= c; ++r) M(offset + r, offset + c) = B(r, c);
}

/**
 * One PSD block of the matrix constraint B(x) <= 0.
 *
 * value(x) returns the block, derivative(x) the map dx -> D_xB(x)[dx], and
 * curvature(x, Y) the n x n second derivative of x -> B(x).Y at fixed Y.
 * Evaluators must be pure: the same x always yields the same output.
 */
struct MatrixConstraint {
  int dim = 0;
  std::function<SymMat(const VectorXd&)> value;
  std::function<LinearMap(const VectorXd&)> derivative;
  std::function<SymMat(const VectorXd&, const SymMat&)> curvature;
};

/**
 * Vector-valued constraint c(x) <= 0 or d(x) = 0 with dim components.
 * curvature(x, mult) = sum_i mult_i * Hessian(c_i); affine constraints
 * return the zero matrix. dim == 0 means the constraint is absent.
 */
struct VectorConstraint {
  int dim = 0;
  std::function<VectorXd(const VectorXd&)> value;
  std::function<MatrixXd(const VectorXd&)> jacobian;
  std::function<SymMat(const VectorXd&, const VectorXd&)> curvature;
};

/**
 * Nonlinear semidefinite program
 *
 *   minimize b.x  subject to  B(x) <= 0 (PSD order, block diagonal),
 *                             c(x) <= 0,  d(x) = 0,
 *                             ||F_k x + f_k|| <= g_k.x + gamma_k.
 *
 * The matrix constraint is kept as a list of blocks so subproblems see the
 * block structure; B(x) = diag(blocks). The affine second-order-cone rows
 * carry norm-ball and norm-epigraph constraints exactly (their linearization
 * is the constraint itself). Immutable and shareable once built.
 */
struct NlsdpProblem {
  int n = 0;
  VectorXd b;
  std::vector<MatrixConstraint> blocks;
  VectorConstraint ineq;
  VectorConstraint eq;
  std::vector<SocConstraint> soc_cs;

  int matrix_dim() const {
    int m = 0;
    for (const auto& blk : blocks) m += blk.dim;
    return m;
  }

  std::vector<int> block_dims() const {
    std::vector<int> d;
    d.reserve(blocks.size());
    for (const auto& blk : blocks) d.push_back(blk.dim);
    return d;
  }

  int block_offset(size_t j) const {
    int off = 0;
    for (size_t i = 0; i < j; ++i) off += blocks[i].dim;
    return off;
  }

  int variable_count() const { return n; }

  /// Scalar equality rows of the slacked standard form:
  /// eq rows + ineq rows + svec rows of every matrix block.
  int scalar_constraint_count() const {
    int m = eq.dim + ineq.dim;
    for (const auto& blk : blocks) m += packed_size(blk.dim);
    return m;
  }

  std::vector<SymMat> block_values(const VectorXd& x) const {
    std::vector<SymMat> vals;
    vals.reserve(blocks.size());
    for (const auto& blk : blocks) vals.push_back(blk.value(x));
    return vals;
  }

  /// Full block-diagonal B(x).
  SymMat matrix_value(const VectorXd& x) const {
    SymMat B(matrix_dim());
    int off = 0;
    for (const auto& blk : blocks) {
      insert_block(B, off, blk.value(x));
      off += blk.dim;
    }
    return B;
  }

  void validate_shapes() const {
    if (n < 1) throw DimensionError("NlsdpProblem: n must be positive");
    if (b.size() != n) throw DimensionError("NlsdpProblem: objective length != n");
    for (const auto& blk : blocks) {
      if (blk.dim < 1) throw DimensionError("NlsdpProblem: matrix block dim must be positive");
      if (!blk.value || !blk.derivative || !blk.curvature)
        throw DimensionError("NlsdpProblem: matrix block evaluator missing");
    }
    for (const VectorConstraint* vc : {&ineq, &eq}) {
      if (vc->dim < 0) throw DimensionError("NlsdpProblem: negative constraint count");
      if (vc->dim > 0 && (!vc->value || !vc->jacobian || !vc->curvature))
        throw DimensionError("NlsdpProblem: vector constraint evaluator missing");
    }
    for (const auto& sc : soc_cs) {
      if (sc.g.size() != n || sc.F.cols() != n || sc.f.size() != sc.F.rows())
        throw DimensionError("NlsdpProblem: soc constraint has wrong shape");
    }
  }
};

/**
 * Options for the construction-time derivative check. First derivatives are
 * compared coordinate by coordinate against central differences of the value
 * (step 1e-6 * (1 + ||x||), relative error <= 1e-5); the multiplier-contracted
 * second derivatives are probed along random directions through the first
 * derivatives. probe_points, when nonempty, replaces the random probes.
 */
struct DerivativeCheckOptions {
  bool enabled = true;
  int probes = 3;
  int directions = 3;
  double rel_tol = 1e-5;
  double step_scale = 1e-6;
  uint64_t seed = 1234567;
  std::vector<VectorXd> probe_points;
};

namespace detail {

[[noreturn]] inline void check_fail(const char* what, size_t index, int coord, double err) {
  char msg[160];
  std::snprintf(msg, sizeof msg, "nlsdp: %s %zu mismatch at coordinate %d (rel err %.3g)",
                what, index, coord, err);
  throw NumericalError(msg);
}

}  // namespace detail

inline void check_derivatives(const NlsdpProblem& prob, const DerivativeCheckOptions& opt = {}) {
  if (!opt.enabled) return;
  Rng rng(opt.seed);
  std::vector<VectorXd> pts = opt.probe_points;
  if (pts.empty()) {
    for (int t = 0; t < opt.probes; ++t) {
      VectorXd x(prob.n);
      for (int i = 0; i < prob.n; ++i) x[i] = rng.uniform(-1.0, 1.0);
      pts.push_back(std::move(x));
    }
  }
  for (const VectorXd& x : pts) {
    if (x.size() != prob.n) throw DimensionError("check_derivatives: probe has wrong length");
    const double h = opt.step_scale * (1.0 + x.norm());
    for (size_t bi = 0; bi < prob.blocks.size(); ++bi) {
      const auto& blk = prob.blocks[bi];
      SymMat b0 = blk.value(x);
      if (b0.dim() != blk.dim) throw DimensionError("check_derivatives: block value has wrong dim");
      if (!b0.packed().allFinite()) detail::check_fail("matrix block value of block", bi, -1, 0.0);
      LinearMap d0 = blk.derivative(x);
      if (d0.input_dim() != prob.n || d0.matrix_dim() != blk.dim)
        throw DimensionError("check_derivatives: block derivative has wrong shape");
      for (int i = 0; i < prob.n; ++i) {
        VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const VectorXd fd = (blk.value(xp).packed() - blk.value(xm).packed()) / (2.0 * h);
        const VectorXd& ex = d0.coeff(i).packed();
        const double err = (fd - ex).norm() / std::max(1.0, ex.norm());
        if (!(err <= opt.rel_tol)) detail::check_fail("matrix block derivative of block", bi, i, err);
      }
      SymMat yp(blk.dim);
      for (int c = 0; c < blk.dim; ++c)
        for (int r = 0; r <= c; ++r) yp(r, c) = rng.uniform(-1.0, 1.0);
      SymMat hc = blk.curvature(x, yp);
      if (hc.dim() != prob.n) throw DimensionError("check_derivatives: block curvature has wrong dim");
      const MatrixXd hd = hc.dense();
      for (int t = 0; t < opt.directions; ++t) {
        VectorXd dir(prob.n);
        for (int i = 0; i < prob.n; ++i) dir[i] = rng.uniform(-1.0, 1.0);
        if (dir.norm() == 0.0) continue;
        dir /= dir.norm();
        const VectorXd gp = blk.derivative(x + h * dir).adjoint(yp);
        const VectorXd gm = blk.derivative(x - h * dir).adjoint(yp);
        const VectorXd fd = (gp - gm) / (2.0 * h);
        const VectorXd ex = hd * dir;
        const double err = (fd - ex).norm() / std::max(1.0, ex.norm());
        if (!(err <= opt.rel_tol)) detail::check_fail("matrix block curvature of block", bi, t, err);
      }
    }
    const VectorConstraint* vcs[] = {&prob.ineq, &prob.eq};
    const char* names[] = {"inequality jacobian row set", "equality jacobian row set"};
    const char* cnames[] = {"inequality curvature probe", "equality curvature probe"};
    for (size_t which = 0; which < 2; ++which) {
      const VectorConstraint& vc = *vcs[which];
      if (vc.dim == 0) continue;
      VectorXd v0 = vc.value(x);
      if (v0.size() != vc.dim) throw DimensionError("check_derivatives: constraint value has wrong length");
      if (!v0.allFinite()) detail::check_fail(names[which], which, -1, 0.0);
      MatrixXd j0 = vc.jacobian(x);
      if (j0.rows() != vc.dim || j0.cols() != prob.n)
        throw DimensionError("check_derivatives: constraint jacobian has wrong shape");
      for (int i = 0; i < prob.n; ++i) {
        VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const VectorXd fd = (vc.value(xp) - vc.value(xm)) / (2.0 * h);
        const VectorXd ex = j0.col(i);
        const double err = (fd - ex).norm() / std::max(1.0, ex.norm());
        if (!(err <= opt.rel_tol)) detail::check_fail(names[which], which, i, err);
      }
      VectorXd mult(vc.dim);
      for (int i = 0; i < vc.dim; ++i) mult[i] = rng.uniform(-1.0, 1.0);
      SymMat hc = vc.curvature(x, mult);
      if (hc.dim() != prob.n) throw DimensionError("check_derivatives: constraint curvature has wrong dim");
      const MatrixXd hd = hc.dense();
      for (int t = 0; t < opt.directions; ++t) {
        VectorXd dir(prob.n);
        for (int i = 0; i < prob.n; ++i) dir[i] = rng.uniform(-1.0, 1.0);
        if (dir.norm() == 0.0) continue;
        dir /= dir.norm();
        const VectorXd fd =
            ((vc.jacobian(x + h * dir) - vc.jacobian(x - h * dir)).transpose() * mult) / (2.0 * h);
        const VectorXd ex = hd * dir;
        const double err = (fd - ex).norm() / std::max(1.0, ex.norm());
        if (!(err <= opt.rel_tol)) detail::check_fail(cnames[which], which, t, err);
      }
    }
  }
}

/// Validates shapes and (unless disabled) runs the derivative check, then
/// hands the problem back. All factory paths funnel through here.
inline NlsdpProblem build_problem(NlsdpProblem prob, const DerivativeCheckOptions& check = {}) {
  prob.validate_shapes();
  check_derivatives(prob, check);
  return prob;
}

/**
 * A primal-dual point of an NLSDP: x with the matrix-constraint multiplier Y,
 * matrix slack S (= -B(x) at feasibility), inequality multipliers u >= 0,
 * equality multipliers v, and one second-order-cone multiplier per soc row.
 * Y and S use the same block-diagonal layout as B(x).
 */
struct SspIterate {
  VectorXd x;
  SymMat Y;
  SymMat S;
  VectorXd u;
  VectorXd v;
  std::vector<VectorXd> w;
};

/// Zero multipliers, S = -B(x).
inline SspIterate make_iterate(const NlsdpProblem& prob, VectorXd x) {
  if (x.size() != prob.n) throw DimensionError("make_iterate: x has wrong length");
  SspIterate it;
  it.x = std::move(x);
  const int m = prob.matrix_dim();
  it.Y = SymMat(m);
  it.S = SymMat(m);
  int off = 0;
  for (const auto& blk : prob.blocks) {
    SymMat bj = blk.value(it.x);
    bj *= -1.0;
    insert_block(it.S, off, bj);
    off += blk.dim;
  }
  it.u = VectorXd::Zero(prob.ineq.dim);
  it.v = VectorXd::Zero(prob.eq.dim);
  it.w.reserve(prob.soc_cs.size());
  for (const auto& sc : prob.soc_cs) it.w.push_back(VectorXd::Zero(1 + sc.F.rows()));
  return it;
}

namespace detail {

inline void check_iterate(const NlsdpProblem& prob, const SspIterate& it) {
  if (it.x.size() != prob.n) throw DimensionError("iterate: x has wrong length");
  const int m = prob.matrix_dim();
  if (it.Y.dim() != m || it.S.dim() != m) throw DimensionError("iterate: Y or S has wrong dimension");
  if (it.u.size() != prob.ineq.dim) throw DimensionError("iterate: u has wrong length");
  if (it.v.size() != prob.eq.dim) throw DimensionError("iterate: v has wrong length");
  if (it.w.size() != prob.soc_cs.size()) throw DimensionError("iterate: soc multiplier count mismatch");
  for (size_t k = 0; k < it.w.size(); ++k)
    if (it.w[k].size() != 1 + prob.soc_cs[k].F.rows())
      throw DimensionError("iterate: soc multiplier has wrong length");
}

}  // namespace detail

/// b.x + B(x).Y + u.c(x) + v.d(x) - sum_k w_k.s_k(x) where s_k is the
/// cone-space image of soc constraint k.
inline double lagrangian(const NlsdpProblem& prob, const SspIterate& it) {
  detail::check_iterate(prob, it);
  double val = prob.b.dot(it.x);
  int off = 0;
  for (const auto& blk : prob.blocks) {
    val += trace_inner(blk.value(it.x), extract_block(it.Y, off, blk.dim));
    off += blk.dim;
  }
  if (prob.ineq.dim > 0) val += it.u.dot(prob.ineq.value(it.x));
  if (prob.eq.dim > 0) val += it.v.dot(prob.eq.value(it.x));
  for (size_t k = 0; k < prob.soc_cs.size(); ++k)
    val -= it.w[k].dot(soc_eval(prob.soc_cs[k], it.x));
  return val;
}

inline VectorXd grad_lagrangian(const NlsdpProblem& prob, const SspIterate& it) {
  detail::check_iterate(prob, it);
  VectorXd g = prob.b;
  int off = 0;
  for (const auto& blk : prob.blocks) {
    g += blk.derivative(it.x).adjoint(extract_block(it.Y, off, blk.dim));
    off += blk.dim;
  }
  if (prob.ineq.dim > 0) g += prob.ineq.jacobian(it.x).transpose() * it.u;
  if (prob.eq.dim > 0) g += prob.eq.jacobian(it.x).transpose() * it.v;
  for (size_t k = 0; k < prob.soc_cs.size(); ++k) {
    const auto& sc = prob.soc_cs[k];
    const VectorXd& wk = it.w[k];
    g -= sc.g * wk[0] + sc.F.transpose() * wk.tail(wk.size() - 1);
  }
  return g;
}

inline SymMat hess_lagrangian(const NlsdpProblem& prob, const SspIterate& it) {
  detail::check_iterate(prob, it);
  SymMat H(prob.n);
  int off = 0;
  for (const auto& blk : prob.blocks) {
    H += blk.curvature(it.x, extract_block(it.Y, off, blk.dim));
    off += blk.dim;
  }
  if (prob.ineq.dim > 0) H += prob.ineq.curvature(it.x, it.u);
  if (prob.eq.dim > 0) H += prob.eq.curvature(it.x, it.v);
  return H;
}

/**
 * First-order optimality report. Signed margins (y_min_eig, s_min_eig, u_min,
 * w_margin) are zero when the corresponding constraint class is absent; total
 * takes only their violation parts max(0, -margin). complementarity is the
 * unsymmetrized ||Y S||_F; the symmetrized value is reported alongside but
 * does not enter total (it never exceeds the unsymmetrized one).
 */
struct KktResidual {
  double stationarity = 0.0;
  double matrix_violation = 0.0;
  double slack_consistency = 0.0;
  double ineq_violation = 0.0;
  double eq_violation = 0.0;
  double soc_violation = 0.0;
  double complementarity = 0.0;
  double complementarity_sym = 0.0;
  double ineq_complementarity = 0.0;
  double soc_complementarity = 0.0;
  double y_min_eig = 0.0;
  double s_min_eig = 0.0;
  double u_min = 0.0;
  double w_margin = 0.0;
  double total = 0.0;
};

inline KktResidual kkt_residual(const NlsdpProblem& prob, const SspIterate& it) {
  detail::check_iterate(prob, it);
  KktResidual r;
  r.stationarity = grad_lagrangian(prob, it).norm();
  const int m = prob.matrix_dim();
  if (m > 0) {
    SymMat B = prob.matrix_value(it.x);
    r.matrix_violation = psd_violation(B);
    B += it.S;
    r.slack_consistency = B.frob_norm();
    const MatrixXd prod = it.Y.dense() * it.S.dense();
    r.complementarity = prod.norm();
    r.complementarity_sym = 0.5 * (prod + prod.transpose()).norm();
    r.y_min_eig = min_eig(it.Y);
    r.s_min_eig = min_eig(it.S);
  }
  if (prob.ineq.dim > 0) {
    const VectorXd c = prob.ineq.value(it.x);
    r.ineq_violation = c.cwiseMax(0.0).norm();
    r.ineq_complementarity = std::abs(it.u.dot(c));
    r.u_min = it.u.minCoeff();
  }
  if (prob.eq.dim > 0) r.eq_violation = prob.eq.value(it.x).norm();
  if (!prob.soc_cs.empty()) {
    double wm = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < prob.soc_cs.size(); ++k) {
      const VectorXd s = soc_eval(prob.soc_cs[k], it.x);
      const VectorXd& wk = it.w[k];
      r.soc_violation = std::max(r.soc_violation, s.tail(s.size() - 1).norm() - s[0]);
      r.soc_complementarity = std::max(r.soc_complementarity, std::abs(wk.dot(s)));
      wm = std::min(wm, wk[0] - wk.tail(wk.size() - 1).norm());
    }
    r.soc_violation = std::max(r.soc_violation, 0.0);
    r.w_margin = wm;
  }
  double t = r.stationarity;
  for (double v : {r.matrix_violation, r.slack_consistency, r.ineq_violation, r.eq_violation,
                   r.soc_violation, r.complementarity, r.ineq_complementarity,
                   r.soc_complementarity})
    t = std::max(t, v);
  for (double margin : {r.y_min_eig, r.s_min_eig, r.u_min, r.w_margin})
    t = std::max(t, -margin);
  r.total = t;
  return r;
}

/**
 * Data of the linear-quadratic model at a base point:
 *   minimize b.dx + dx.H dx / 2
 *   subject to C_j + A_j(dx) <= 0, ineq_res + ineq_jac dx <= 0,
 *              eq_res + eq_jac dx = 0, soc rows rebased to dx.
 * For affine constraints the model equals the original constraint set.
 */
struct QuadraticModel {
  VectorXd base_point;
  VectorXd b;
  SymMat H;
  std::vector<LinearMap> A;
  std::vector<SymMat> C;
  MatrixXd ineq_jac;
  VectorXd ineq_res;
  MatrixXd eq_jac;
  VectorXd eq_res;
  std::vector<SocConstraint> soc_cs;
};

inline QuadraticModel quadratic_model(const NlsdpProblem& prob, const VectorXd& x, SymMat H) {
  if (x.size() != prob.n) throw DimensionError("quadratic_model: x has wrong length");
  if (H.dim() != prob.n) throw DimensionError("quadratic_model: H has wrong dimension");
  QuadraticModel qm;
  qm.base_point = x;
  qm.b = prob.b;
  qm.H = std::move(H);
  qm.A.reserve(prob.blocks.size());
  qm.C.reserve(prob.blocks.size());
  for (const auto& blk : prob.blocks) {
    qm.A.push_back(blk.derivative(x));
    qm.C.push_back(blk.value(x));
  }
  if (prob.ineq.dim > 0) {
    qm.ineq_jac = prob.ineq.jacobian(x);
    qm.ineq_res = prob.ineq.value(x);
  } else {
    qm.ineq_jac = MatrixXd(0, prob.n);
    qm.ineq_res = VectorXd(0);
  }
  if (prob.eq.dim > 0) {
    qm.eq_jac = prob.eq.jacobian(x);
    qm.eq_res = prob.eq.value(x);
  } else {
    qm.eq_jac = MatrixXd(0, prob.n);
    qm.eq_res = VectorXd(0);
  }
  qm.soc_cs.reserve(prob.soc_cs.size());
  for (const auto& sc : prob.soc_cs) {
    SocConstraint r = sc;
    r.f = sc.F * x + sc.f;
    r.gamma = sc.gamma + sc.g.dot(x);
    qm.soc_cs.push_back(std::move(r));
  }
  return qm;
}

/**
 * Standard conic-form view: variables z = [x | s | svec(S_1) | ... ] with
 * s >= 0 slacking the inequalities and S_j PSD slacking the matrix blocks;
 * equalities F(z) = 0 stacked as [d(x); c(x)+s; svec(B_j(x)+S_j)...]. The
 * affine soc rows stay memberships of affine images and contribute no
 * equality rows. Objective cost.z = b.x.
 */
struct StandardForm {
  NlsdpProblem prob;
  int n = 0;
  int p = 0;
  std::vector<int> dims;
  std::vector<int> offsets;
  int vars = 0;
  int rows = 0;
  VectorXd cost;

  VectorXd x_part(const VectorXd& z) const { return z.head(n); }
  VectorXd slack_part(const VectorXd& z) const { return z.segment(n, p); }

  SymMat block_part(const VectorXd& z, size_t j) const {
    return smat(dims[j], z.segment(offsets[j], packed_size(dims[j])));
  }

  VectorXd pack(const VectorXd& x, const VectorXd& s, const std::vector<SymMat>& S) const {
    if (x.size() != n || s.size() != p || S.size() != dims.size())
      throw DimensionError("StandardForm::pack: component shape mismatch");
    VectorXd z(vars);
    z.head(n) = x;
    z.segment(n, p) = s;
    for (size_t j = 0; j < S.size(); ++j) {
      if (S[j].dim() != dims[j]) throw DimensionError("StandardForm::pack: block dim mismatch");
      z.segment(offsets[j], packed_size(dims[j])) = svec(S[j]);
    }
    return z;
  }

  /// Feasible-biased start: s = max(-c(x), 0), S_j = projection of -B_j(x).
  VectorXd initial_point(const VectorXd& x) const {
    VectorXd s =
        p > 0 ? VectorXd((-prob.ineq.value(x)).cwiseMax(0.0)) : VectorXd(0);
    std::vector<SymMat> S;
    S.reserve(prob.blocks.size());
    for (const auto& blk : prob.blocks) {
      SymMat bj = blk.value(x);
      bj *= -1.0;
      S.push_back(psd_part(bj));
    }
    return pack(x, s, S);
  }

  VectorXd residual(const VectorXd& z) const {
    if (z.size() != vars) throw DimensionError("StandardForm::residual: z has wrong length");
    const VectorXd x = z.head(n);
    VectorXd F(rows);
    int r = 0;
    if (prob.eq.dim > 0) {
      F.segment(0, prob.eq.dim) = prob.eq.value(x);
      r += prob.eq.dim;
    }
    if (p > 0) {
      F.segment(r, p) = prob.ineq.value(x) + z.segment(n, p);
      r += p;
    }
    for (size_t j = 0; j < prob.blocks.size(); ++j) {
      const int pk = packed_size(dims[j]);
      F.segment(r, pk) = svec(prob.blocks[j].value(x)) + z.segment(offsets[j], pk);
      r += pk;
    }
    return F;
  }

  MatrixXd jacobian(const VectorXd& z) const {
    if (z.size() != vars) throw DimensionError("StandardForm::jacobian: z has wrong length");
    const VectorXd x = z.head(n);
    MatrixXd J = MatrixXd::Zero(rows, vars);
    int r = 0;
    if (prob.eq.dim > 0) {
      J.block(0, 0, prob.eq.dim, n) = prob.eq.jacobian(x);
      r += prob.eq.dim;
    }
    if (p > 0) {
      J.block(r, 0, p, n) = prob.ineq.jacobian(x);
      J.block(r, n, p, p).setIdentity();
      r += p;
    }
    for (size_t j = 0; j < prob.blocks.size(); ++j) {
      const int pk = packed_size(dims[j]);
      J.block(r, 0, pk, n) = prob.blocks[j].derivative(x).svec_matrix();
      J.block(r, offsets[j], pk, pk).setIdentity();
      r += pk;
    }
    return J;
  }

  double objective(const VectorXd& z) const { return cost.dot(z); }

  double merit(const VectorXd& z, double M) const { return M * residual(z).norm() + cost.dot(z); }

  /// Worst cone-membership violation of the slack coordinates and the affine
  /// soc images (the equalities are measured by residual(), not here).
  double cone_violation(const VectorXd& z) const {
    double v = 0.0;
    if (p > 0) v = std::max(v, -z.segment(n, p).minCoeff());
    for (size_t j = 0; j < prob.blocks.size(); ++j) v = std::max(v, -min_eig(block_part(z, j)));
    const VectorXd x = z.head(n);
    for (const auto& sc : prob.soc_cs) {
      const VectorXd s = soc_eval(sc, x);
      v = std::max(v, s.tail(s.size() - 1).norm() - s[0]);
    }
    return std::max(v, 0.0);
  }
};

inline StandardForm lower_to_standard_form(const NlsdpProblem& prob) {
  prob.validate_shapes();
  StandardForm sf;
  sf.prob = prob;
  sf.n = prob.n;
  sf.p = prob.ineq.dim;
  sf.dims = prob.block_dims();
  int off = prob.n + sf.p;
  for (int d : sf.dims) {
    sf.offsets.push_back(off);
    off += packed_size(d);
  }
  sf.vars = off;
  sf.rows = prob.scalar_constraint_count();
  sf.cost = VectorXd::Zero(sf.vars);
  sf.cost.head(prob.n) = prob.b;
  return sf;
}

/**
 * Constraint-qualification probe at x: maximize t subject to
 * B_j(x) + D_xB_j(x)[dx] + t I <= 0, linearized inequalities c + Dc dx <= -t,
 * linearized equalities d + Dd dx = 0, and soc rows tightened by t on the
 * head. margin > 0 certifies a strictly feasible linearization direction;
 * t is capped (t <= t_cap) and dx confined to ||dx|| <= dx_ball so the
 * auxiliary program stays bounded.
 */
struct RobinsonOptions {
  double t_cap = 1e6;
  double dx_ball = 1e8;
  SolveOptions solver{};
};

struct RobinsonReport {
  double margin = std::numeric_limits<double>::quiet_NaN();
  bool capped = false;
  SolveStatus status = SolveStatus::Numerical;
  VectorXd dx;

  bool satisfied(double tol = 1e-8) const { return status == SolveStatus::Optimal && margin > tol; }
};

inline RobinsonReport robinson_check(const NlsdpProblem& prob, const VectorXd& x,
                                     const RobinsonOptions& opt = {}) {
  if (x.size() != prob.n) throw DimensionError("robinson_check: x has wrong length");
  const int n = prob.n;
  ConicProgram aux;
  aux.n_free = n + 1;
  aux.c = VectorXd::Zero(n + 1);
  aux.c[n] = -1.0;
  for (const auto& blk : prob.blocks) {
    const LinearMap d0 = blk.derivative(x);
    std::vector<SymMat> coeffs;
    coeffs.reserve(n + 1);
    for (int i = 0; i < n; ++i) coeffs.push_back(d0.coeff(i));
    coeffs.push_back(SymMat::identity(blk.dim));
    aux.psd_cs.push_back({LinearMap::from_coeffs(std::move(coeffs)), blk.value(x)});
  }
  const int p = prob.ineq.dim;
  aux.in_A = MatrixXd::Zero(p + 1, n + 1);
  aux.in_b = VectorXd(p + 1);
  if (p > 0) {
    aux.in_A.block(0, 0, p, n) = prob.ineq.jacobian(x);
    aux.in_A.block(0, n, p, 1).setOnes();
    aux.in_b.head(p) = -prob.ineq.value(x);
  }
  aux.in_A(p, n) = 1.0;
  aux.in_b[p] = opt.t_cap;
  if (prob.eq.dim > 0) {
    aux.eq_A = MatrixXd::Zero(prob.eq.dim, n + 1);
    aux.eq_A.leftCols(n) = prob.eq.jacobian(x);
    aux.eq_b = -prob.eq.value(x);
  }
  for (const auto& sc : prob.soc_cs) {
    SocConstraint r;
    r.F = MatrixXd::Zero(sc.F.rows(), n + 1);
    r.F.leftCols(n) = sc.F;
    r.f = sc.F * x + sc.f;
    r.g = VectorXd::Zero(n + 1);
    r.g.head(n) = sc.g;
    r.g[n] = -1.0;
    r.gamma = sc.gamma + sc.g.dot(x);
    aux.soc_cs.push_back(std::move(r));
  }
  SocConstraint ball;
  ball.F = MatrixXd::Zero(n, n + 1);
  ball.F.leftCols(n).setIdentity();
  ball.f = VectorXd::Zero(n);
  ball.g = VectorXd::Zero(n + 1);
  ball.gamma = opt.dx_ball;
  aux.soc_cs.push_back(std::move(ball));

  const ConicSolution sol = solve(aux, opt.solver);
  RobinsonReport rep;
  rep.status = sol.status;
  if (sol.status == SolveStatus::Optimal) {
    rep.margin = sol.x[n];
    rep.dx = sol.x.head(n);
    rep.capped = rep.margin >= opt.t_cap * (1.0 - 1e-6);
  } else if (sol.status == SolveStatus::PrimalInfeasible) {
    rep.margin = -std::numeric_limits<double>::infinity();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Concrete family: matrix constraints quadratic in x, held as sparse tuples.
// Covers the norm-bounded perturbation problems and serializes to text files
// (grammar in docs/formats.md). Arbitrary nonlinear B stays API-only.
// ---------------------------------------------------------------------------

/// Entry of a constant symmetric coefficient: value at (row, col), mirrored.
struct MatEntry {
  int row = 0, col = 0;
  double value = 0.0;
};

/// value * x_var placed at (row, col).
struct LinEntry {
  int var = 0, row = 0, col = 0;
  double value = 0.0;
};

/// value * x_i * x_j placed at (row, col); i == j means value * x_i^2.
struct BilEntry {
  int i = 0, j = 0, row = 0, col = 0;
  double value = 0.0;
};

/// value * x_i in a scalar row.
struct LinTerm {
  int i = 0;
  double value = 0.0;
};

/// value * x_i * x_j in a scalar row.
struct BilTerm {
  int i = 0, j = 0;
  double value = 0.0;
};

/** One matrix block C0 + sum x_i L_i + sum x_i x_j Q_ij given by entry lists. */
struct BilinearBlock {
  int dim = 0;
  std::vector<MatEntry> constant;
  std::vector<LinEntry> linear;
  std::vector<BilEntry> bilinear;

  SymMat value(const VectorXd& x) const {
    SymMat M(dim);
    for (const auto& e : constant) M(e.row, e.col) += e.value;
    for (const auto& e : linear) M(e.row, e.col) += x[e.var] * e.value;
    for (const auto& e : bilinear) M(e.row, e.col) += x[e.i] * x[e.j] * e.value;
    return M;
  }

  LinearMap derivative(const VectorXd& x, int n) const {
    LinearMap D(n, dim);
    for (const auto& e : linear) D.coeff(e.var)(e.row, e.col) += e.value;
    for (const auto& e : bilinear) {
      if (e.i == e.j) {
        D.coeff(e.i)(e.row, e.col) += 2.0 * x[e.i] * e.value;
      } else {
        D.coeff(e.i)(e.row, e.col) += x[e.j] * e.value;
        D.coeff(e.j)(e.row, e.col) += x[e.i] * e.value;
      }
    }
    return D;
  }

  /// Second derivative of x -> value(x).Y; independent of x.
  SymMat curvature(const SymMat& Y, int n) const {
    SymMat H(n);
    for (const auto& e : bilinear) {
      const double k = e.value * Y(e.row, e.col) * (e.row == e.col ? 1.0 : 2.0);
      if (e.i == e.j)
        H(e.i, e.i) += 2.0 * k;
      else
        H(e.i, e.j) += k;
    }
    return H;
  }
};

/** Scalar row constant + sum value*x_i + sum value*x_i*x_j. */
struct BilinearRow {
  double constant = 0.0;
  std::vector<LinTerm> linear;
  std::vector<BilTerm> bilinear;

  double value(const VectorXd& x) const {
    double v = constant;
    for (const auto& t : linear) v += t.value * x[t.i];
    for (const auto& t : bilinear) v += t.value * x[t.i] * x[t.j];
    return v;
  }

  void add_gradient(const VectorXd& x, double scale, VectorXd& g) const {
    for (const auto& t : linear) g[t.i] += scale * t.value;
    for (const auto& t : bilinear) {
      if (t.i == t.j) {
        g[t.i] += scale * 2.0 * t.value * x[t.i];
      } else {
        g[t.i] += scale * t.value * x[t.j];
        g[t.j] += scale * t.value * x[t.i];
      }
    }
  }

  void add_curvature(double scale, SymMat& H) const {
    for (const auto& t : bilinear) {
      if (t.i == t.j)
        H(t.i, t.i) += scale * 2.0 * t.value;
      else
        H(t.i, t.j) += scale * t.value;
    }
  }
};

namespace detail {

template <typename Entry>
inline void canon_sym(Entry& e) {
  if (e.row > e.col) std::swap(e.row, e.col);
}

}  // namespace detail

/**
 * Serializable quadratic-constraint problem: minimize b.x (+ objective_offset,
 * bookkeeping for partially evaluated problems) subject to matrix blocks
 * <= 0, scalar rows <= 0 / = 0, and affine soc constraints. to_problem()
 * wraps the data into evaluator form and runs the construction checks.
 */
struct BilinearProblem {
  int n = 0;
  VectorXd b;
  double objective_offset = 0.0;
  std::vector<BilinearBlock> blocks;
  std::vector<BilinearRow> ineq_rows;
  std::vector<BilinearRow> eq_rows;
  std::vector<SocConstraint> soc_cs;

  bool is_affine() const {
    for (const auto& blk : blocks)
      if (!blk.bilinear.empty()) return false;
    for (const auto* rows : {&ineq_rows, &eq_rows})
      for (const auto& row : *rows)
        if (!row.bilinear.empty()) return false;
    return true;
  }

  void validate() const {
    if (n < 1) throw DimensionError("BilinearProblem: n must be positive");
    if (b.size() != n) throw DimensionError("BilinearProblem: objective length != n");
    auto check_var = [&](int v) {
      if (v < 0 || v >= n) throw DimensionError("BilinearProblem: variable index out of range");
    };
    for (const auto& blk : blocks) {
      if (blk.dim < 1) throw DimensionError("BilinearProblem: block dim must be positive");
      auto check_pos = [&](int r, int c) {
        if (r < 0 || c < 0 || r >= blk.dim || c >= blk.dim)
          throw DimensionError("BilinearProblem: matrix entry out of range");
      };
      for (const auto& e : blk.constant) check_pos(e.row, e.col);
      for (const auto& e : blk.linear) {
        check_var(e.var);
        check_pos(e.row, e.col);
      }
      for (const auto& e : blk.bilinear) {
        check_var(e.i);
        check_var(e.j);
        check_pos(e.row, e.col);
      }
    }
    for (const auto* rows : {&ineq_rows, &eq_rows})
      for (const auto& row : *rows) {
        for (const auto& t : row.linear) check_var(t.i);
        for (const auto& t : row.bilinear) {
          check_var(t.i);
          check_var(t.j);
        }
      }
    for (const auto& sc : soc_cs)
      if (sc.g.size() != n || sc.F.cols() != n || sc.f.size() != sc.F.rows())
        throw DimensionError("BilinearProblem: soc constraint has wrong shape");
  }

  /// Normal form: row <= col, i <= j, entries sorted, duplicates merged,
  /// exact zeros dropped. Makes serialization deterministic.
  void canonicalize() {
    for (auto& blk : blocks) {
      for (auto& e : blk.constant) detail::canon_sym(e);
      for (auto& e : blk.linear) detail::canon_sym(e);
      for (auto& e : blk.bilinear) {
        detail::canon_sym(e);
        if (e.i > e.j) std::swap(e.i, e.j);
      }
      std::sort(blk.constant.begin(), blk.constant.end(), [](const MatEntry& a, const MatEntry& b2) {
        return std::tie(a.col, a.row) < std::tie(b2.col, b2.row);
      });
      std::sort(blk.linear.begin(), blk.linear.end(), [](const LinEntry& a, const LinEntry& b2) {
        return std::tie(a.var, a.col, a.row) < std::tie(b2.var, b2.col, b2.row);
      });
      std::sort(blk.bilinear.begin(), blk.bilinear.end(), [](const BilEntry& a, const BilEntry& b2) {
        return std::tie(a.i, a.j, a.col, a.row) < std::tie(b2.i, b2.j, b2.col, b2.row);
      });
      auto merge_entries = [](auto& list, auto same) {
        size_t out = 0;
        for (size_t i = 0; i < list.size(); ++i) {
          if (out > 0 && same(list[out - 1], list[i])) {
            list[out - 1].value += list[i].value;
          } else {
            list[out++] = list[i];
          }
        }
        list.resize(out);
        list.erase(std::remove_if(list.begin(), list.end(),
                                  [](const auto& e) { return e.value == 0.0; }),
                   list.end());
      };
      merge_entries(blk.constant, [](const MatEntry& a, const MatEntry& b2) {
        return a.row == b2.row && a.col == b2.col;
      });
      merge_entries(blk.linear, [](const LinEntry& a, const LinEntry& b2) {
        return a.var == b2.var && a.row == b2.row && a.col == b2.col;
      });
      merge_entries(blk.bilinear, [](const BilEntry& a, const BilEntry& b2) {
        return a.i == b2.i && a.j == b2.j && a.row == b2.row && a.col == b2.col;
      });
    }
    for (auto* rows : {&ineq_rows, &eq_rows})
      for (auto& row : *rows) {
        for (auto& t : row.bilinear)
          if (t.i > t.j) std::swap(t.i, t.j);
        std::sort(row.linear.begin(), row.linear.end(),
                  [](const LinTerm& a, const LinTerm& b2) { return a.i < b2.i; });
        std::sort(row.bilinear.begin(), row.bilinear.end(), [](const BilTerm& a, const BilTerm& b2) {
          return std::tie(a.i, a.j) < std::tie(b2.i, b2.j);
        });
        size_t out = 0;
        for (size_t i = 0; i < row.linear.size(); ++i) {
          if (out > 0 && row.linear[out - 1].i == row.linear[i].i)
            row.linear[out - 1].value += row.linear[i].value;
          else
            row.linear[out++] = row.linear[i];
        }
        row.linear.resize(out);
        out = 0;
        for (size_t i = 0; i < row.bilinear.size(); ++i) {
          if (out > 0 && row.bilinear[out - 1].i == row.bilinear[i].i &&
              row.bilinear[out - 1].j == row.bilinear[i].j)
            row.bilinear[out - 1].value += row.bilinear[i].value;
          else
            row.bilinear[out++] = row.bilinear[i];
        }
        row.bilinear.resize(out);
      }
  }

  NlsdpProblem to_problem(const DerivativeCheckOptions& check = {}) const {
    validate();
    auto sp = std::make_shared<const BilinearProblem>(*this);
    NlsdpProblem prob;
    prob.n = n;
    prob.b = b;
    const int nn = n;
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      MatrixConstraint mc;
      mc.dim = blocks[bi].dim;
      mc.value = [sp, bi](const VectorXd& x) { return sp->blocks[bi].value(x); };
      mc.derivative = [sp, bi, nn](const VectorXd& x) { return sp->blocks[bi].derivative(x, nn); };
      mc.curvature = [sp, bi, nn](const VectorXd&, const SymMat& Y) {
        return sp->blocks[bi].curvature(Y, nn);
      };
      prob.blocks.push_back(std::move(mc));
    }
    auto wrap_rows = [sp, nn](bool is_eq) {
      auto list = [sp, is_eq]() -> const std::vector<BilinearRow>& {
        return is_eq ? sp->eq_rows : sp->ineq_rows;
      };
      VectorConstraint vc;
      vc.dim = static_cast<int>(list().size());
      if (vc.dim == 0) return vc;
      vc.value = [list](const VectorXd& x) {
        const auto& rs = list();
        VectorXd v(rs.size());
        for (size_t r = 0; r < rs.size(); ++r) v[r] = rs[r].value(x);
        return v;
      };
      vc.jacobian = [list, nn](const VectorXd& x) {
        const auto& rs = list();
        MatrixXd J = MatrixXd::Zero(rs.size(), nn);
        VectorXd g(nn);
        for (size_t r = 0; r < rs.size(); ++r) {
          g.setZero();
          rs[r].add_gradient(x, 1.0, g);
          J.row(r) = g;
        }
        return J;
      };
      vc.curvature = [list, nn](const VectorXd&, const VectorXd& mult) {
        const auto& rs = list();
        SymMat H(nn);
        for (size_t r = 0; r < rs.size(); ++r) rs[r].add_curvature(mult[r], H);
        return H;
      };
      return vc;
    };
    prob.ineq = wrap_rows(false);
    prob.eq = wrap_rows(true);
    prob.soc_cs = soc_cs;
    return build_problem(std::move(prob), check);
  }
};

/**
 * Partial evaluation: variables listed in fixed are substituted at
 * fixed_values, producing a problem on the kept variables. Quadratic terms
 * touching a fixed variable drop one degree; freezing every variable of the
 * quadratic terms yields an affine problem (the corrector solve relies on
 * this). Constant soc rows keep their membership meaning.
 */
struct FrozenProblem {
  BilinearProblem problem;
  std::vector<int> kept;
  std::vector<int> fixed;
  VectorXd fixed_values;

  /// Full-length x from values of the kept variables.
  VectorXd expand(const VectorXd& y) const {
    VectorXd x(kept.size() + fixed.size());
    for (size_t i = 0; i < kept.size(); ++i) x[kept[i]] = y[static_cast<int>(i)];
    for (size_t i = 0; i < fixed.size(); ++i) x[fixed[i]] = fixed_values[static_cast<int>(i)];
    return x;
  }

  VectorXd restrict(const VectorXd& x) const {
    VectorXd y(kept.size());
    for (size_t i = 0; i < kept.size(); ++i) y[static_cast<int>(i)] = x[kept[i]];
    return y;
  }
};

inline FrozenProblem freeze(const BilinearProblem& src, const std::vector<int>& fixed,
                            const VectorXd& fixed_values) {
  src.validate();
  if (static_cast<int>(fixed.size()) != fixed_values.size())
    throw DimensionError("freeze: fixed index and value counts differ");
  std::vector<int> to_new(src.n, 0);
  for (int idx : fixed) {
    if (idx < 0 || idx >= src.n) throw DimensionError("freeze: fixed index out of range");
    if (to_new[idx] == -1) throw DimensionError("freeze: fixed index repeated");
    to_new[idx] = -1;
  }
  FrozenProblem fr;
  fr.fixed = fixed;
  fr.fixed_values = fixed_values;
  // value of a fixed variable by original index
  VectorXd fix_val = VectorXd::Zero(src.n);
  for (size_t i = 0; i < fixed.size(); ++i) fix_val[fixed[i]] = fixed_values[static_cast<int>(i)];
  for (int i = 0; i < src.n; ++i) {
    if (to_new[i] != -1) {
      to_new[i] = static_cast<int>(fr.kept.size());
      fr.kept.push_back(i);
    }
  }
  BilinearProblem& dst = fr.problem;
  dst.n = static_cast<int>(fr.kept.size());
  if (dst.n == 0) throw DimensionError("freeze: no variables left");
  dst.b = VectorXd(dst.n);
  for (size_t i = 0; i < fr.kept.size(); ++i) dst.b[static_cast<int>(i)] = src.b[fr.kept[i]];
  dst.objective_offset = src.objective_offset;
  for (int idx : fixed) dst.objective_offset += src.b[idx] * fix_val[idx];

  for (const auto& blk : src.blocks) {
    BilinearBlock nb;
    nb.dim = blk.dim;
    nb.constant = blk.constant;
    for (const auto& e : blk.linear) {
      if (to_new[e.var] == -1)
        nb.constant.push_back({e.row, e.col, e.value * fix_val[e.var]});
      else
        nb.linear.push_back({to_new[e.var], e.row, e.col, e.value});
    }
    for (const auto& e : blk.bilinear) {
      const bool fi = to_new[e.i] == -1, fj = to_new[e.j] == -1;
      if (fi && fj)
        nb.constant.push_back({e.row, e.col, e.value * fix_val[e.i] * fix_val[e.j]});
      else if (fi)
        nb.linear.push_back({to_new[e.j], e.row, e.col, e.value * fix_val[e.i]});
      else if (fj)
        nb.linear.push_back({to_new[e.i], e.row, e.col, e.value * fix_val[e.j]});
      else
        nb.bilinear.push_back({to_new[e.i], to_new[e.j], e.row, e.col, e.value});
    }
    dst.blocks.push_back(std::move(nb));
  }
  auto freeze_rows = [&](const std::vector<BilinearRow>& rows) {
    std::vector<BilinearRow> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
      BilinearRow nr;
      nr.constant = row.constant;
      for (const auto& t : row.linear) {
        if (to_new[t.i] == -1)
          nr.constant += t.value * fix_val[t.i];
        else
          nr.linear.push_back({to_new[t.i], t.value});
      }
      for (const auto& t : row.bilinear) {
        const bool fi = to_new[t.i] == -1, fj = to_new[t.j] == -1;
        if (fi && fj)
          nr.constant += t.value * fix_val[t.i] * fix_val[t.j];
        else if (fi)
          nr.linear.push_back({to_new[t.j], t.value * fix_val[t.i]});
        else if (fj)
          nr.linear.push_back({to_new[t.i], t.value * fix_val[t.j]});
        else
          nr.bilinear.push_back({to_new[t.i], to_new[t.j], t.value});
      }
      out.push_back(std::move(nr));
    }
    return out;
  };
  dst.ineq_rows = freeze_rows(src.ineq_rows);
  dst.eq_rows = freeze_rows(src.eq_rows);
  for (const auto& sc : src.soc_cs) {
    SocConstraint ns;
    ns.F = MatrixXd(sc.F.rows(), dst.n);
    ns.g = VectorXd(dst.n);
    for (size_t i = 0; i < fr.kept.size(); ++i) {
      ns.F.col(static_cast<int>(i)) = sc.F.col(fr.kept[i]);
      ns.g[static_cast<int>(i)] = sc.g[fr.kept[i]];
    }
    ns.f = sc.f;
    ns.gamma = sc.gamma;
    for (int idx : fixed) {
      ns.f += sc.F.col(idx) * fix_val[idx];
      ns.gamma += sc.g[idx] * fix_val[idx];
    }
    dst.soc_cs.push_back(std::move(ns));
  }
  dst.canonicalize();
  return fr;
}

/// Direct conic form of an affine instance (the corrector subproblem).
/// pre: prob.is_affine(). All variables free.
inline ConicProgram affine_conic_program(const BilinearProblem& prob) {
  prob.validate();
  if (!prob.is_affine()) throw DimensionError("affine_conic_program: problem has quadratic terms");
  ConicProgram pr;
  pr.n_free = prob.n;
  pr.c = prob.b;
  for (const auto& blk : prob.blocks) {
    LinearMap A(prob.n, blk.dim);
    SymMat C(blk.dim);
    for (const auto& e : blk.constant) C(e.row, e.col) += e.value;
    for (const auto& e : blk.linear) A.coeff(e.var)(e.row, e.col) += e.value;
    pr.psd_cs.push_back({std::move(A), std::move(C)});
  }
  if (!prob.eq_rows.empty()) {
    const int q = static_cast<int>(prob.eq_rows.size());
    pr.eq_A = MatrixXd::Zero(q, prob.n);
    pr.eq_b = VectorXd(q);
    for (int r = 0; r < q; ++r) {
      for (const auto& t : prob.eq_rows[static_cast<size_t>(r)].linear) pr.eq_A(r, t.i) += t.value;
      pr.eq_b[r] = -prob.eq_rows[static_cast<size_t>(r)].constant;
    }
  }
  if (!prob.ineq_rows.empty()) {
    const int p = static_cast<int>(prob.ineq_rows.size());
    pr.in_A = MatrixXd::Zero(p, prob.n);
    pr.in_b = VectorXd(p);
    for (int r = 0; r < p; ++r) {
      for (const auto& t : prob.ineq_rows[static_cast<size_t>(r)].linear) pr.in_A(r, t.i) += t.value;
      pr.in_b[r] = -prob.ineq_rows[static_cast<size_t>(r)].constant;
    }
  }
  pr.soc_cs = prob.soc_cs;
  return pr;
}

// --------------------------- serialization --------------------------------

namespace detail {

/// Whitespace tokenizer with '#' comments and line tracking for errors.
class TokenReader {
public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  bool next(std::string& tok) {
    while (pos_ >= tokens_.size()) {
      std::string line;
      if (!std::getline(in_, line)) return false;
      ++lineno_;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      tokens_.clear();
      pos_ = 0;
      size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens_.push_back(line.substr(i, j - i));
        i = j;
      }
    }
    tok = tokens_[pos_++];
    return true;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(lineno_) + ": " + what);
  }

  std::string expect() {
    std::string tok;
    if (!next(tok)) fail("unexpected end of file");
    return tok;
  }

  long expect_int() {
    const std::string tok = expect();
    size_t used = 0;
    long v = 0;
    try {
      v = std::stol(tok, &used);
    } catch (const std::exception&) {
      fail("expected an integer, got '" + tok + "'");
    }
    if (used != tok.size()) fail("expected an integer, got '" + tok + "'");
    return v;
  }

  double expect_double() {
    const std::string tok = expect();
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      fail("expected a number, got '" + tok + "'");
    }
    if (used != tok.size()) fail("expected a number, got '" + tok + "'");
    return v;
  }

private:
  std::istream& in_;
  std::vector<std::string> tokens_;
  size_t pos_ = 0;
  int lineno_ = 0;
};

inline void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace detail

/// Writes the documented plain-text form (docs/formats.md). Canonicalizes a
/// copy first so output is deterministic; round-trips bit-identically.
inline void save_bilinear(std::ostream& out, const BilinearProblem& prob) {
  BilinearProblem p = prob;
  p.validate();
  p.canonicalize();
  out << "nlsdp-bilinear 1\n";
  out << "vars " << p.n << "\n";
  out << "objective";
  for (int i = 0; i < p.n; ++i) {
    out << ' ';
    detail::write_double(out, p.b[i]);
  }
  out << "\n";
  if (p.objective_offset != 0.0) {
    out << "offset ";
    detail::write_double(out, p.objective_offset);
    out << "\n";
  }
  for (const auto& blk : p.blocks) {
    out << "block " << blk.dim << "\n";
    for (const auto& e : blk.constant) {
      out << "const " << e.row << ' ' << e.col << ' ';
      detail::write_double(out, e.value);
      out << "\n";
    }
    for (const auto& e : blk.linear) {
      out << "lin " << e.var << ' ' << e.row << ' ' << e.col << ' ';
      detail::write_double(out, e.value);
      out << "\n";
    }
    for (const auto& e : blk.bilinear) {
      out << "bil " << e.i << ' ' << e.j << ' ' << e.row << ' ' << e.col << ' ';
      detail::write_double(out, e.value);
      out << "\n";
    }
    out << "end\n";
  }
  auto write_rows = [&](const std::vector<BilinearRow>& rows, const char* tag) {
    for (const auto& row : rows) {
      out << tag << "\n";
      if (row.constant != 0.0) {
        out << "const ";
        detail::write_double(out, row.constant);
        out << "\n";
      }
      for (const auto& t : row.linear) {
        out << "lin " << t.i << ' ';
        detail::write_double(out, t.value);
        out << "\n";
      }
      for (const auto& t : row.bilinear) {
        out << "bil " << t.i << ' ' << t.j << ' ';
        detail::write_double(out, t.value);
        out << "\n";
      }
      out << "end\n";
    }
  };
  write_rows(p.ineq_rows, "ineq");
  write_rows(p.eq_rows, "eq");
  for (const auto& sc : p.soc_cs) {
    out << "soc " << sc.F.rows() << "\n";
    if (sc.gamma != 0.0) {
      out << "gamma ";
      detail::write_double(out, sc.gamma);
      out << "\n";
    }
    for (int i = 0; i < sc.g.size(); ++i) {
      if (sc.g[i] == 0.0) continue;
      out << "g " << i << ' ';
      detail::write_double(out, sc.g[i]);
      out << "\n";
    }
    for (int r = 0; r < sc.f.size(); ++r) {
      if (sc.f[r] == 0.0) continue;
      out << "f " << r << ' ';
      detail::write_double(out, sc.f[r]);
      out << "\n";
    }
    for (int r = 0; r < sc.F.rows(); ++r)
      for (int i = 0; i < sc.F.cols(); ++i) {
        if (sc.F(r, i) == 0.0) continue;
        out << "F " << r << ' ' << i << ' ';
        detail::write_double(out, sc.F(r, i));
        out << "\n";
      }
    out << "end\n";
  }
}

inline void save_bilinear(const std::string& path, const BilinearProblem& prob) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  save_bilinear(out, prob);
  out.flush();
  if (!out) throw ParseError("write to '" + path + "' failed");
}

inline BilinearProblem load_bilinear(std::istream& in) {
  detail::TokenReader tr(in);
  std::string tok;
  if (!tr.next(tok) || tok != "nlsdp-bilinear") tr.fail("expected header 'nlsdp-bilinear 1'");
  if (tr.expect_int() != 1) tr.fail("unsupported format version");
  if (tr.expect() != "vars") tr.fail("expected 'vars'");
  BilinearProblem p;
  const long n = tr.expect_int();
  if (n < 1) tr.fail("variable count must be positive");
  p.n = static_cast<int>(n);
  if (tr.expect() != "objective") tr.fail("expected 'objective'");
  p.b = VectorXd(p.n);
  for (int i = 0; i < p.n; ++i) p.b[i] = tr.expect_double();
  auto read_index = [&](long hi, const char* what) {
    const long v = tr.expect_int();
    if (v < 0 || v >= hi) tr.fail(std::string(what) + " index out of range");
    return static_cast<int>(v);
  };
  auto read_row_body = [&](BilinearRow& row) {
    for (;;) {
      const std::string key = tr.expect();
      if (key == "end") return;
      if (key == "const") {
        row.constant += tr.expect_double();
      } else if (key == "lin") {
        const int i = read_index(p.n, "variable");
        row.linear.push_back({i, tr.expect_double()});
      } else if (key == "bil") {
        const int i = read_index(p.n, "variable");
        const int j = read_index(p.n, "variable");
        row.bilinear.push_back({i, j, tr.expect_double()});
      } else {
        tr.fail("unknown row entry '" + key + "'");
      }
    }
  };
  while (tr.next(tok)) {
    if (tok == "offset") {
      p.objective_offset = tr.expect_double();
    } else if (tok == "block") {
      BilinearBlock blk;
      const long dim = tr.expect_int();
      if (dim < 1) tr.fail("block dim must be positive");
      blk.dim = static_cast<int>(dim);
      for (;;) {
        const std::string key = tr.expect();
        if (key == "end") break;
        if (key == "const") {
          const int r = read_index(blk.dim, "row");
          const int c = read_index(blk.dim, "column");
          blk.constant.push_back({r, c, tr.expect_double()});
        } else if (key == "lin") {
          const int i = read_index(p.n, "variable");
          const int r = read_index(blk.dim, "row");
          const int c = read_index(blk.dim, "column");
          blk.linear.push_back({i, r, c, tr.expect_double()});
        } else if (key == "bil") {
          const int i = read_index(p.n, "variable");
          const int j = read_index(p.n, "variable");
          const int r = read_index(blk.dim, "row");
          const int c = read_index(blk.dim, "column");
          blk.bilinear.push_back({i, j, r, c, tr.expect_double()});
        } else {
          tr.fail("unknown block entry '" + key + "'");
        }
      }
      p.blocks.push_back(std::move(blk));
    } else if (tok == "ineq") {
      BilinearRow row;
      read_row_body(row);
      p.ineq_rows.push_back(std::move(row));
    } else if (tok == "eq") {
      BilinearRow row;
      read_row_body(row);
      p.eq_rows.push_back(std::move(row));
    } else if (tok == "soc") {
      const long rows = tr.expect_int();
      if (rows < 0) tr.fail("soc row count must be nonnegative");
      SocConstraint sc;
      sc.F = MatrixXd::Zero(rows, p.n);
      sc.f = VectorXd::Zero(rows);
      sc.g = VectorXd::Zero(p.n);
      for (;;) {
        const std::string key = tr.expect();
        if (key == "end") break;
        if (key == "gamma") {
          sc.gamma += tr.expect_double();
        } else if (key == "g") {
          const int i = read_index(p.n, "variable");
          sc.g[i] += tr.expect_double();
        } else if (key == "f") {
          const int r = read_index(rows, "soc row");
          sc.f[r] += tr.expect_double();
        } else if (key == "F") {
          const int r = read_index(rows, "soc row");
          const int i = read_index(p.n, "variable");
          sc.F(r, i) += tr.expect_double();
        } else {
          tr.fail("unknown soc entry '" + key + "'");
        }
      }
      p.soc_cs.push_back(std::move(sc));
    } else {
      tr.fail("unknown section '" + tok + "'");
    }
  }
  p.validate();
  p.canonicalize();
  return p;
}

inline BilinearProblem load_bilinear(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_bilinear(in);
}

}  // namespace sspsolve
