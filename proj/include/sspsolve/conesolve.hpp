#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include "cones.hpp"
#include "linmap.hpp"

namespace sspsolve {

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, MaxIter, Numerical };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::PrimalInfeasible: return "primal_infeasible";
    case SolveStatus::DualInfeasible: return "dual_infeasible";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Numerical: return "numerical";
  }
  return "unknown";
}

/** Second-order-cone constraint ||F x + f|| <= g.x + gamma. */
struct SocConstraint {
  MatrixXd F;
  VectorXd f;
  VectorXd g;
  double gamma = 0.0;
};

/** PSD constraint A(x) + C <= 0 (negative semidefinite). */
struct PsdConstraint {
  LinearMap A;
  SymMat C;
};

/** Linear-quadratic conic program
 *
 *    minimize    c.x + 1/2 x' Q x
 *    subject to  eq_A x = eq_b
 *                in_A x <= in_b
 *                ||F_i x + f_i|| <= g_i.x + gamma_i        (soc_cs)
 *                A_j(x) + C_j negative semidefinite        (psd_cs)
 *                x = [free | nonneg | soc segments]
 *
 *  The variable vector is split into a free block (n_free), a nonnegative
 *  block (n_nonneg) and second-order-cone segments (soc_dims).  Q may be
 *  0 x 0 for a linear objective; it must be PSD otherwise.
 */
struct ConicProgram {
  int n_free = 0;
  int n_nonneg = 0;
  std::vector<int> soc_dims;

  VectorXd c;   // size num_vars() (or 0 for a zero objective)
  MatrixXd Q;   // 0 x 0 or num_vars() square, PSD

  MatrixXd eq_A;
  VectorXd eq_b;
  MatrixXd in_A;
  VectorXd in_b;
  std::vector<SocConstraint> soc_cs;
  std::vector<PsdConstraint> psd_cs;

  int num_vars() const {
    int t = n_free + n_nonneg;
    for (int d : soc_dims) t += d;
    return t;
  }
  int nonneg_offset() const { return n_free; }
  int soc_seg_offset(int k) const {
    int off = n_free + n_nonneg;
    for (int i = 0; i < k; ++i) off += soc_dims[static_cast<size_t>(i)];
    return off;
  }

  /// Structural validation; throws DimensionError.  With check_psd the
  /// quadratic term is verified PSD (min eig >= -1e-10 * max(1, ||Q||)).
  void validate(bool check_psd = true) const {
    const int n = num_vars();
    if (n_free < 0 || n_nonneg < 0) throw DimensionError("ConicProgram: negative block size");
    for (int d : soc_dims)
      if (d < 1) throw DimensionError("ConicProgram: soc segment dim must be >= 1");
    if (c.size() != 0 && c.size() != n) throw DimensionError("ConicProgram: c length mismatch");
    if (Q.size() != 0 && (Q.rows() != n || Q.cols() != n))
      throw DimensionError("ConicProgram: Q shape mismatch");
    if (eq_A.rows() != eq_b.size() || (eq_A.rows() > 0 && eq_A.cols() != n))
      throw DimensionError("ConicProgram: equality shape mismatch");
    if (in_A.rows() != in_b.size() || (in_A.rows() > 0 && in_A.cols() != n))
      throw DimensionError("ConicProgram: inequality shape mismatch");
    for (const auto& sc : soc_cs) {
      if (sc.F.rows() != sc.f.size() || sc.F.cols() != n || sc.g.size() != n)
        throw DimensionError("ConicProgram: soc constraint shape mismatch");
    }
    for (const auto& pc : psd_cs) {
      if (pc.A.input_dim() != n || pc.A.matrix_dim() != pc.C.dim())
        throw DimensionError("ConicProgram: psd constraint shape mismatch");
    }
    if (check_psd && Q.size() != 0) {
      const double scale = std::max(1.0, Q.norm());
      if ((Q - Q.transpose()).norm() > 1e-10 * scale)
        throw DimensionError("ConicProgram: Q not symmetric");
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(Q, Eigen::EigenvaluesOnly);
      if (es.eigenvalues()(0) < -1e-10 * scale)
        throw DimensionError("ConicProgram: Q not positive semidefinite");
    }
  }
};

struct PsdBlockSolution {
  SymMat slack;  // S_j = -(A_j(x) + C_j)
  SymMat dual;   // Y_j
};

struct IterRecord {
  int k = 0;
  double mu = 0, gap = 0, pres = 0, dres = 0, step = 0;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::Numerical;
  VectorXd x;
  VectorXd eq_dual;     // y: stationarity Qx + c + eq_A'y + (cone dual terms) = 0
  VectorXd nonneg_dual;
  VectorXd ineq_dual;
  std::vector<VectorXd> soc_seg_dual;
  std::vector<VectorXd> soc_dual;
  std::vector<VectorXd> soc_slack;
  std::vector<PsdBlockSolution> psd;
  double obj = 0, gap = 0, rel_gap = 0, pres = 0, dres = 0, mu = 0;
  int iterations = 0;
  std::vector<IterRecord> history;
  // Normalized Farkas certificates, populated for the infeasible statuses.
  VectorXd cert_y, cert_z;  // primal infeasibility: eq_A'y + G'z = 0, <h,z>+<b,y> = -1
  VectorXd cert_ray;        // dual infeasibility: improving feasible ray in x
};

struct SolveOptions {
  double gap_tol = 1e-9;
  double feas_tol = 1e-9;
  double cone_tol = 1e-10;
  int max_iter = 200;
  double step_fraction = 0.99;
  bool check_quadratic = true;  // verify Q is PSD before solving
};

namespace detail {

struct Melt {
  int n = 0;
  MatrixXd P;
  VectorXd q;
  MatrixXd A;
  VectorXd b;
  MatrixXd G;
  VectorXd h;
  ConeLayout L;
  int n_ineq = 0;  // inequality rows (second part of the nonneg segment)
};

inline Melt melt_program(const ConicProgram& pr) {
  Melt m;
  const int n = pr.num_vars();
  m.n = n;
  m.P = (pr.Q.size() == 0) ? MatrixXd::Zero(n, n) : MatrixXd(0.5 * (pr.Q + pr.Q.transpose()));
  m.q = (pr.c.size() == 0) ? VectorXd::Zero(n) : pr.c;
  m.A = pr.eq_A.rows() ? pr.eq_A : MatrixXd::Zero(0, n);
  m.b = pr.eq_b;
  m.n_ineq = static_cast<int>(pr.in_A.rows());

  m.L.nn = pr.n_nonneg + m.n_ineq;
  for (int d : pr.soc_dims) m.L.soc.push_back(d);
  for (const auto& sc : pr.soc_cs) m.L.soc.push_back(static_cast<int>(sc.F.rows()) + 1);
  for (const auto& pc : pr.psd_cs) m.L.psd.push_back(pc.C.dim());

  const int M = m.L.scalar_len();
  m.G = MatrixXd::Zero(M, n);
  m.h = VectorXd::Zero(M);
  int r = 0;
  for (int i = 0; i < pr.n_nonneg; ++i, ++r) m.G(r, pr.nonneg_offset() + i) = -1.0;
  if (m.n_ineq) {
    m.G.middleRows(r, m.n_ineq) = pr.in_A;
    m.h.segment(r, m.n_ineq) = pr.in_b;
    r += m.n_ineq;
  }
  for (size_t k = 0; k < pr.soc_dims.size(); ++k) {
    const int d = pr.soc_dims[k], off = pr.soc_seg_offset(static_cast<int>(k));
    for (int i = 0; i < d; ++i) m.G(r + i, off + i) = -1.0;
    r += d;
  }
  for (const auto& sc : pr.soc_cs) {
    const int d = static_cast<int>(sc.F.rows());
    m.G.row(r) = -sc.g.transpose();
    m.h[r] = sc.gamma;
    m.G.middleRows(r + 1, d) = -sc.F;
    m.h.segment(r + 1, d) = sc.f;
    r += d + 1;
  }
  for (const auto& pc : pr.psd_cs) {
    const int pd = packed_size(pc.C.dim());
    m.G.middleRows(r, pd) = pc.A.svec_matrix();
    m.h.segment(r, pd) = -svec(pc.C);
    r += pd;
  }
  return m;
}

struct IpmState {
  VectorXd x, y, s, z;
  SolveStatus status = SolveStatus::MaxIter;
  int iterations = 0;
  std::vector<IterRecord> history;
  VectorXd cert_y, cert_z, cert_ray;
};

/// Solve the reduced KKT system
///   [P + Gt'Gt  A'] [dx]   [bx]
///   [A          0 ] [dy] = [by]
/// with one step of iterative refinement.  Returns false on a singular or
/// non-finite factorization.
struct KktSolver {
  int n = 0, p = 0;
  MatrixXd K;
  Eigen::PartialPivLU<MatrixXd> lu;

  bool factor(const MatrixXd& P, const MatrixXd& Gt, const MatrixXd& A) {
    n = static_cast<int>(P.rows());
    p = static_cast<int>(A.rows());
    K.setZero(n + p, n + p);
    K.topLeftCorner(n, n) = P;
    if (Gt.rows() > 0)
      K.topLeftCorner(n, n).selfadjointView<Eigen::Lower>().rankUpdate(Gt.transpose());
    K.topLeftCorner(n, n).triangularView<Eigen::StrictlyUpper>() =
        K.topLeftCorner(n, n).triangularView<Eigen::StrictlyLower>().transpose();
    if (p) {
      K.topRightCorner(n, p) = A.transpose();
      K.bottomLeftCorner(p, n) = A;
      K.bottomRightCorner(p, p).setZero();
    }
    if (!K.allFinite()) return false;
    lu.compute(K);
    return true;
  }

  bool solve(const VectorXd& bx, const VectorXd& by, VectorXd& dx, VectorXd& dy) const {
    VectorXd rhs(n + p);
    rhs.head(n) = bx;
    rhs.tail(p) = by;
    VectorXd u = lu.solve(rhs);
    u += lu.solve(rhs - K * u);
    if (!u.allFinite()) return false;
    dx = u.head(n);
    dy = u.tail(p);
    return true;
  }
};

inline IpmState ipm_solve(const Melt& mp, const SolveOptions& opt) {
  IpmState st;
  const int n = mp.n;
  const int p = static_cast<int>(mp.A.rows());
  const int M = static_cast<int>(mp.G.rows());
  const ConeLayout& L = mp.L;

  if (M == 0) {
    // Equality-constrained quadratic program: one KKT solve.
    KktSolver kkt;
    if (!kkt.factor(mp.P, MatrixXd::Zero(0, n), mp.A) || !kkt.solve(-mp.q, mp.b, st.x, st.y)) {
      st.status = SolveStatus::Numerical;
      st.x = VectorXd::Zero(n);
      st.y = VectorXd::Zero(p);
      return st;
    }
    st.s.resize(0);
    st.z.resize(0);
    const double res = (mp.P * st.x + mp.q + mp.A.transpose() * st.y).norm() +
                       (mp.A * st.x - mp.b).norm();
    st.status = res <= opt.feas_tol * std::max(1.0, mp.q.norm() + mp.b.norm())
                    ? SolveStatus::Optimal
                    : SolveStatus::Numerical;
    return st;
  }

  const int deg = L.degree();
  const double nb = std::max(1.0, mp.b.norm());
  const double nh = std::max(1.0, mp.h.norm());
  const double nq = std::max(1.0, mp.q.norm());
  const double data_scale = std::max({1.0, mp.A.norm(), mp.G.norm()});

  // Initial point: NT scaling = identity.
  KktSolver kkt;
  if (!kkt.factor(mp.P, mp.G, mp.A) ||
      !kkt.solve(-mp.q + mp.G.transpose() * mp.h, mp.b, st.x, st.y)) {
    st.status = SolveStatus::Numerical;
    st.x = VectorXd::Zero(n);
    st.y = VectorXd::Zero(p);
    return st;
  }
  st.z = mp.G * st.x - mp.h;
  st.s = -st.z;
  shift_into_cone(L, st.s);
  shift_into_cone(L, st.z);

  VectorXd best_x = st.x, best_y = st.y, best_s = st.s, best_z = st.z;
  double best_score = std::numeric_limits<double>::infinity();

  MatrixXd Gt(M, n);
  for (int it = 0; it <= opt.max_iter; ++it) {
    const VectorXd resx = mp.P * st.x + mp.q + mp.A.transpose() * st.y + mp.G.transpose() * st.z;
    const VectorXd resy = mp.A * st.x - mp.b;
    const VectorXd resz = mp.G * st.x + st.s - mp.h;
    const double gap = st.s.dot(st.z);
    const double mu = gap / deg;
    const double pcost = 0.5 * st.x.dot(mp.P * st.x) + mp.q.dot(st.x);
    const double pres = std::max(resy.norm() / nb, resz.norm() / nh);
    const double dres = resx.norm() / nq;
    const double relgap = gap / std::max(1.0, std::abs(pcost));

    st.iterations = it;
    st.history.push_back({it, mu, gap, pres, dres, 0.0});

    const double score = std::max({pres, dres, relgap});
    if (score < best_score) {
      best_score = score;
      best_x = st.x;
      best_y = st.y;
      best_s = st.s;
      best_z = st.z;
    }

    if (pres <= opt.feas_tol && dres <= opt.feas_tol &&
        (gap <= opt.gap_tol || relgap <= opt.gap_tol)) {
      st.status = SolveStatus::Optimal;
      return st;
    }

    // Farkas-type infeasibility certificates on the raw iterates.
    const double theta_p = -(mp.h.dot(st.z) + mp.b.dot(st.y));
    if (it > 0 && theta_p > 1e-10 * (st.z.norm() + st.y.norm() + 1.0)) {
      const double cres = (mp.A.transpose() * st.y + mp.G.transpose() * st.z).norm() / theta_p;
      if (cres <= opt.feas_tol * data_scale) {
        st.status = SolveStatus::PrimalInfeasible;
        st.cert_y = st.y / theta_p;
        st.cert_z = st.z / theta_p;
        return st;
      }
    }
    const double theta_d = -mp.q.dot(st.x);
    if (it > 0 && theta_d > 1e-10 * (st.x.norm() + 1.0)) {
      VectorXd ray = st.x / theta_d;
      const bool ray_ok = (mp.P * ray).norm() <= opt.feas_tol * std::max(1.0, mp.P.norm()) &&
                          (mp.A * ray).norm() <= opt.feas_tol * data_scale &&
                          min_margin(L, VectorXd(-mp.G * ray)) >= -opt.feas_tol * data_scale;
      if (ray_ok) {
        st.status = SolveStatus::DualInfeasible;
        st.cert_ray = ray;
        return st;
      }
    }

    if (it == opt.max_iter) break;

    NTScaling sc = compute_scaling(L, st.s, st.z);
    if (!sc.ok) {
      st.status = SolveStatus::Numerical;
      break;
    }
    for (int j = 0; j < n; ++j)
      Gt.col(j) = apply_scaling(L, sc, mp.G.col(j), ScaleOp::WinvT);
    if (!kkt.factor(mp.P, Gt, mp.A)) {
      st.status = SolveStatus::Numerical;
      break;
    }

    const VectorXd rz_sc = apply_scaling(L, sc, resz, ScaleOp::WinvT);
    const VectorXd lam2 = lambda_squared(L, sc);

    // One Newton solve for a given target ds of the linearized
    // complementarity lambda o (W^{-T}ds + Wdz) = ds.
    VectorXd dx, dy, dz_sc, ds_sc;
    auto newton = [&](const VectorXd& ds) -> bool {
      const VectorXd ld = jordan_div_lambda(L, sc, ds);
      const VectorXd bx = -resx - Gt.transpose() * (rz_sc + ld);
      if (!kkt.solve(bx, -resy, dx, dy)) return false;
      dz_sc = Gt * dx + rz_sc + ld;
      ds_sc = ld - dz_sc;
      return dz_sc.allFinite() && ds_sc.allFinite();
    };

    // Predictor.
    if (!newton(-lam2)) {
      st.status = SolveStatus::Numerical;
      break;
    }
    const double a_aff =
        std::min({1.0, max_step_scaled(L, sc, ds_sc), max_step_scaled(L, sc, dz_sc)});
    const double gap_aff =
        (sc.lambda + a_aff * ds_sc).dot(sc.lambda + a_aff * dz_sc);
    double sigma = std::pow(std::max(0.0, gap_aff / gap), 3.0);
    sigma = std::min(1.0, sigma);

    // Corrector (Mehrotra combined direction).
    const VectorXd corr = jordan_prod(L, ds_sc, dz_sc);
    if (!newton(-lam2 - corr + sigma * mu * cone_e(L))) {
      st.status = SolveStatus::Numerical;
      break;
    }
    double alpha = std::min({1.0, opt.step_fraction * max_step_scaled(L, sc, ds_sc),
                             opt.step_fraction * max_step_scaled(L, sc, dz_sc)});

    const VectorXd dz = apply_scaling(L, sc, dz_sc, ScaleOp::Winv);
    const VectorXd ds = apply_scaling(L, sc, ds_sc, ScaleOp::WT);

    // Keep the duality measure decreasing (backtrack in the rare overshoot).
    double mu_new;
    for (int t = 0;; ++t) {
      mu_new = (st.s + alpha * ds).dot(st.z + alpha * dz) / deg;
      if (mu_new < mu || t >= 12) break;
      alpha *= 0.6;
    }

    st.x += alpha * dx;
    st.y += alpha * dy;
    st.s += alpha * ds;
    st.z += alpha * dz;
    st.history.back().step = alpha;
  }

  if (st.status == SolveStatus::MaxIter || st.status == SolveStatus::Numerical) {
    st.x = best_x;
    st.y = best_y;
    st.s = best_s;
    st.z = best_z;
  }
  return st;
}

}  // namespace detail

/** Solve a linear-quadratic conic program with a Nesterov-Todd scaled,
 *  Mehrotra predictor-corrector, infeasible-start interior-point method. */
inline ConicSolution solve(const ConicProgram& pr, const SolveOptions& opt = {}) {
  pr.validate(opt.check_quadratic);
  detail::Melt mp = detail::melt_program(pr);
  detail::IpmState st = detail::ipm_solve(mp, opt);

  ConicSolution sol;
  sol.status = st.status;
  sol.x = st.x;
  sol.eq_dual = st.y;
  sol.iterations = st.iterations;
  sol.history = std::move(st.history);
  sol.cert_y = st.cert_y;
  sol.cert_z = st.cert_z;
  sol.cert_ray = st.cert_ray;
  if (!sol.history.empty()) {
    sol.pres = sol.history.back().pres;
    sol.dres = sol.history.back().dres;
    sol.mu = sol.history.back().mu;
    sol.gap = sol.history.back().gap;
  }
  const detail::ConeLayout& L = mp.L;
  if (st.s.size() == L.scalar_len() && L.scalar_len() > 0) {
    sol.gap = st.s.dot(st.z);
    sol.mu = sol.gap / std::max(1, L.degree());
  }
  sol.obj = 0.5 * st.x.dot(mp.P * st.x) + mp.q.dot(st.x);
  sol.rel_gap = sol.gap / std::max(1.0, std::abs(sol.obj));

  // Unpack slacks/duals blockwise.
  int r = 0;
  if (st.z.size() == L.scalar_len() && L.scalar_len() > 0) {
    sol.nonneg_dual = st.z.segment(0, pr.n_nonneg);
    r = pr.n_nonneg;
    sol.ineq_dual = st.z.segment(r, mp.n_ineq);
    r += mp.n_ineq;
    for (int d : pr.soc_dims) {
      sol.soc_seg_dual.push_back(st.z.segment(r, d));
      r += d;
    }
    for (const auto& scst : pr.soc_cs) {
      const int d = static_cast<int>(scst.F.rows()) + 1;
      sol.soc_dual.push_back(st.z.segment(r, d));
      sol.soc_slack.push_back(st.s.segment(r, d));
      r += d;
    }
    for (const auto& pc : pr.psd_cs) {
      const int d = pc.C.dim();
      PsdBlockSolution bs;
      bs.slack = smat(d, st.s.segment(r, packed_size(d)));
      bs.dual = smat(d, st.z.segment(r, packed_size(d)));
      sol.psd.push_back(std::move(bs));
      r += packed_size(d);
    }
  }
  return sol;
}

struct PsdBlockCert {
  double feas = 0;
  double slack_min_eig = 0;
  double dual_min_eig = 0;
  double comp = 0;
  double comp_sym = 0;
};

/** Every KKT residual of a claimed solution, recomputed from the program data
 *  alone (independent of the solver's internal bookkeeping). */
struct CertificateReport {
  double stationarity = 0;
  double eq_residual = 0;
  double ineq_violation = 0;
  double ineq_comp = 0;
  double nonneg_violation = 0;
  double nonneg_comp = 0;
  double nonneg_dual_violation = 0;
  double soc_seg_violation = 0;
  double soc_seg_comp = 0;
  double soc_seg_dual_violation = 0;
  double soc_violation = 0;
  double soc_comp = 0;
  double soc_dual_violation = 0;
  std::vector<PsdBlockCert> psd;
  double gap = 0;
  double primal_obj = 0;
  double dual_obj = 0;
  double max_residual = 0;
};

inline CertificateReport check_certificate(const ConicProgram& pr, const ConicSolution& sol) {
  CertificateReport rep;
  const int n = pr.num_vars();
  const VectorXd& x = sol.x;
  const VectorXd q = (pr.c.size() == 0) ? VectorXd::Zero(n) : pr.c;

  VectorXd grad = q;
  if (pr.Q.size()) grad += 0.5 * (pr.Q + pr.Q.transpose()) * x;
  if (pr.eq_A.rows()) grad += pr.eq_A.transpose() * sol.eq_dual;

  rep.primal_obj = q.dot(x) + (pr.Q.size() ? 0.5 * x.dot(pr.Q * x) : 0.0);

  if (pr.eq_A.rows()) rep.eq_residual = (pr.eq_A * x - pr.eq_b).norm();

  double gap = 0.0;
  if (pr.in_A.rows()) {
    VectorXd slack = pr.in_b - pr.in_A * x;
    rep.ineq_violation = slack.cwiseMin(0.0).norm();
    rep.ineq_comp = std::abs(sol.ineq_dual.dot(slack));
    rep.nonneg_dual_violation =
        std::max(rep.nonneg_dual_violation, -sol.ineq_dual.minCoeff());
    grad += pr.in_A.transpose() * sol.ineq_dual;
    gap += sol.ineq_dual.dot(slack);
  }
  if (pr.n_nonneg) {
    VectorXd xs = x.segment(pr.nonneg_offset(), pr.n_nonneg);
    rep.nonneg_violation = xs.cwiseMin(0.0).norm();
    rep.nonneg_comp = std::abs(sol.nonneg_dual.dot(xs));
    rep.nonneg_dual_violation = std::max(rep.nonneg_dual_violation, -sol.nonneg_dual.minCoeff());
    grad.segment(pr.nonneg_offset(), pr.n_nonneg) -= sol.nonneg_dual;
    gap += sol.nonneg_dual.dot(xs);
  }
  for (size_t k = 0; k < pr.soc_dims.size(); ++k) {
    const int d = pr.soc_dims[k], off = pr.soc_seg_offset(static_cast<int>(k));
    VectorXd xs = x.segment(off, d);
    const double margin = xs[0] - xs.tail(d - 1).norm();
    rep.soc_seg_violation = std::max(rep.soc_seg_violation, -margin);
    const VectorXd& w = sol.soc_seg_dual[k];
    rep.soc_seg_dual_violation =
        std::max(rep.soc_seg_dual_violation, w.tail(d - 1).norm() - w[0]);
    rep.soc_seg_comp = std::max(rep.soc_seg_comp, std::abs(w.dot(xs)));
    grad.segment(off, d) -= w;
    gap += w.dot(xs);
  }
  for (size_t k = 0; k < pr.soc_cs.size(); ++k) {
    const auto& c = pr.soc_cs[k];
    VectorXd expr(c.F.rows() + 1);
    expr[0] = c.g.dot(x) + c.gamma;
    expr.tail(c.F.rows()) = c.F * x + c.f;
    const double margin = expr[0] - expr.tail(c.F.rows()).norm();
    rep.soc_violation = std::max(rep.soc_violation, -margin);
    const VectorXd& w = sol.soc_dual[k];
    rep.soc_dual_violation =
        std::max(rep.soc_dual_violation, w.tail(c.F.rows()).norm() - w[0]);
    rep.soc_comp = std::max(rep.soc_comp, std::abs(w.dot(expr)));
    grad += -(c.g * w[0]) - c.F.transpose() * w.tail(c.F.rows());
    gap += w.dot(expr);
  }
  for (size_t k = 0; k < pr.psd_cs.size(); ++k) {
    const auto& pc = pr.psd_cs[k];
    const SymMat& S = sol.psd[k].slack;
    const SymMat& Y = sol.psd[k].dual;
    PsdBlockCert bc;
    SymMat resid = pc.A.apply(x) + pc.C + S;
    bc.feas = resid.frob_norm();
    bc.slack_min_eig = min_eig(S);
    bc.dual_min_eig = min_eig(Y);
    bc.comp = trace_inner(Y, S);
    MatrixXd YS = Y.dense() * S.dense();
    bc.comp_sym = (YS + YS.transpose()).norm();
    rep.psd.push_back(bc);
    grad += pc.A.adjoint(Y);
    gap += bc.comp;
  }
  rep.gap = gap;
  rep.dual_obj = rep.primal_obj - gap;
  rep.stationarity = grad.norm();

  double mr = std::max({rep.stationarity, rep.eq_residual, rep.ineq_violation, rep.ineq_comp,
                        rep.nonneg_violation, rep.nonneg_comp, rep.nonneg_dual_violation,
                        rep.soc_seg_violation, rep.soc_seg_comp, rep.soc_seg_dual_violation,
                        rep.soc_violation, rep.soc_comp, rep.soc_dual_violation});
  for (const auto& bc : rep.psd)
    mr = std::max({mr, bc.feas, -bc.slack_min_eig, -bc.dual_min_eig, std::abs(bc.comp)});
  rep.max_residual = mr;
  return rep;
}

struct SlaterReport {
  double margin = 0;
  bool capped = false;
  SolveStatus status = SolveStatus::Numerical;
  VectorXd witness;
};

namespace detail {
inline MatrixXd insert_zero_col(const MatrixXd& M, int pos) {
  MatrixXd R(M.rows(), M.cols() + 1);
  R.leftCols(pos) = M.leftCols(pos);
  R.col(pos).setZero();
  R.rightCols(M.cols() - pos) = M.rightCols(M.cols() - pos);
  return R;
}
inline VectorXd insert_zero(const VectorXd& v, int pos) {
  VectorXd r(v.size() + 1);
  r.head(pos) = v.head(pos);
  r[pos] = 0.0;
  r.tail(v.size() - pos) = v.tail(v.size() - pos);
  return r;
}
}  // namespace detail

/** Slater margin of the constraint system: the largest t such that every
 *  inequality-type constraint holds with margin t (PSD blocks shifted by tI,
 *  scalar rows by t, cone memberships by t).  Positive margin certifies a
 *  strictly feasible point, returned as witness.  The margin is capped at
 *  `cap` for systems with unbounded margin. */
inline SlaterReport detect_slater(const ConicProgram& pr, double cap = 1e8,
                                  SolveOptions opt = {}) {
  ConicProgram aux;
  const int t = pr.n_free;  // index of the margin variable
  aux.n_free = pr.n_free + 1;
  aux.n_nonneg = pr.n_nonneg;
  aux.soc_dims = pr.soc_dims;
  const int n_aux = aux.num_vars();
  aux.c = VectorXd::Zero(n_aux);
  aux.c[t] = -1.0;  // maximize t

  if (pr.eq_A.rows()) {
    aux.eq_A = detail::insert_zero_col(pr.eq_A, t);
    aux.eq_b = pr.eq_b;
  }
  MatrixXd base_in = pr.in_A.rows() ? detail::insert_zero_col(pr.in_A, t)
                                    : MatrixXd::Zero(0, n_aux);
  const int extra = pr.n_nonneg + 1;
  MatrixXd in(base_in.rows() + extra, n_aux);
  VectorXd inb(base_in.rows() + extra);
  in.topRows(base_in.rows()) = base_in;
  inb.head(base_in.rows()) = pr.in_b;
  in.middleRows(base_in.rows(), pr.n_nonneg).setZero();
  for (int j = 0; j < pr.n_nonneg; ++j) {
    // margin inside the nonneg segment: t - x_j <= 0
    in(base_in.rows() + j, t) = 1.0;
    in(base_in.rows() + j, 1 + pr.nonneg_offset() + j) = -1.0;
    inb[base_in.rows() + j] = 0.0;
  }
  in.bottomRows(1).setZero();
  in(in.rows() - 1, t) = 1.0;  // t <= cap
  inb[inb.size() - 1] = cap;
  for (int r = 0; r < base_in.rows(); ++r) in(r, t) = 1.0;  // row + t <= rhs
  aux.in_A = in;
  aux.in_b = inb;

  for (const auto& scst : pr.soc_cs) {
    SocConstraint c;
    c.F = detail::insert_zero_col(scst.F, t);
    c.f = scst.f;
    c.g = detail::insert_zero(scst.g, t);
    c.g[t] = -1.0;
    c.gamma = scst.gamma;
    aux.soc_cs.push_back(std::move(c));
  }
  for (size_t k = 0; k < pr.soc_dims.size(); ++k) {
    // segment interior margin: ||x_tail|| <= x_head - t
    const int d = pr.soc_dims[k], off = 1 + pr.soc_seg_offset(static_cast<int>(k));
    SocConstraint c;
    c.F = MatrixXd::Zero(d - 1, n_aux);
    for (int i = 0; i < d - 1; ++i) c.F(i, off + 1 + i) = 1.0;
    c.f = VectorXd::Zero(d - 1);
    c.g = VectorXd::Zero(n_aux);
    c.g[off] = 1.0;
    c.g[t] = -1.0;
    c.gamma = 0.0;
    aux.soc_cs.push_back(std::move(c));
  }
  for (const auto& pc : pr.psd_cs) {
    PsdConstraint c;
    std::vector<SymMat> coeffs;
    coeffs.reserve(static_cast<size_t>(n_aux));
    for (int i = 0; i < pr.num_vars() + 1; ++i) {
      if (i == t)
        coeffs.push_back(SymMat::identity(pc.C.dim()));
      else
        coeffs.push_back(pc.A.coeff(i < t ? i : i - 1));
    }
    c.A = LinearMap::from_coeffs(std::move(coeffs));
    c.C = pc.C;
    aux.psd_cs.push_back(std::move(c));
  }

  opt.check_quadratic = false;
  ConicSolution sol = solve(aux, opt);
  SlaterReport rep;
  rep.status = sol.status;
  if (sol.status == SolveStatus::PrimalInfeasible) {
    rep.margin = -std::numeric_limits<double>::infinity();
    return rep;
  }
  rep.margin = sol.x.size() ? sol.x[t] : 0.0;
  rep.capped = rep.margin >= cap * (1.0 - 1e-6);
  if (sol.x.size()) {
    rep.witness = VectorXd(pr.num_vars());
    rep.witness.head(t) = sol.x.head(t);
    rep.witness.tail(pr.num_vars() - t) = sol.x.tail(pr.num_vars() - t);
  }
  return rep;
}

}  // namespace sspsolve
