#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nlsdp.hpp"

namespace sspsolve {

/// How the subproblem curvature term is produced from the Lagrangian Hessian.
enum class HessianStrategy {
  Exact,          // pass through, clamped only when indefinite beyond rounding
  PsdProjection,  // eigenvalue clamp to a positive floor every iteration
  DampedBfgs,     // quasi-Newton update with Powell damping
};

enum class StepController {
  TrustRegion,        // ball on the step, ratio test, corrector compatible
  PenaltyLineSearch,  // merit backtracking with a second-order correction
  Filter,             // violation/objective pairs plus backtracking fallback
  UnitStep,           // always take the full subproblem step
};

enum class SspResult { Converged, MaxIter, SubproblemFailure, StepFailure };

inline const char* to_string(SspResult r) {
  switch (r) {
    case SspResult::Converged: return "converged";
    case SspResult::MaxIter: return "max-iterations";
    case SspResult::SubproblemFailure: return "subproblem-failure";
    case SspResult::StepFailure: return "step-failure";
  }
  return "unknown";
}

inline const char* to_string(HessianStrategy h) {
  switch (h) {
    case HessianStrategy::Exact: return "exact";
    case HessianStrategy::PsdProjection: return "project";
    case HessianStrategy::DampedBfgs: return "bfgs";
  }
  return "unknown";
}

inline const char* to_string(StepController c) {
  switch (c) {
    case StepController::TrustRegion: return "trust";
    case StepController::PenaltyLineSearch: return "penalty";
    case StepController::Filter: return "filter";
    case StepController::UnitStep: return "unit";
  }
  return "unknown";
}

struct SspOptions {
  HessianStrategy hessian = HessianStrategy::PsdProjection;
  StepController controller = StepController::TrustRegion;
  double outer_tol = 1e-9;
  int max_iter = 100;
  double hessian_floor = 1e-8;  // eigenvalue floor for clamped strategies
  double initial_radius = 1.0;
  double initial_penalty = 0.0;  // 0 means 10 * (1 + ||b||)
  double penalty_cap = 1e12;
  double sigma = 1e-4;              // Armijo fraction
  std::vector<int> trust_subset;    // ball coordinates; empty = all of them
  std::vector<int> corrector_fixed; // nonempty enables the corrector pass
  int solver_retries = 4;
  SolveOptions subproblem{};
};

/// One outer iteration, written exactly once per subproblem accepted or
/// rejected. All fields are value-deterministic for a fixed problem/options.
struct SspIterationRecord {
  int k = 0;
  double kkt = 0;        // residual total at the iteration's start
  double step_norm = 0;  // ||x_next - x||
  double radius = 0;     // trust radius in force (0 when no ball)
  double lambda = 1;     // accepted step fraction (line-search modes)
  double merit = 0;      // merit at the end of the iteration
  double penalty = 0;    // M in force
  SolveStatus sub_status = SolveStatus::Optimal;
  int sub_iterations = 0;
  int retries = 0;  // extra subproblem solves forced by solver failures
  bool accepted = true;
  bool hessian_clamped = false;
  bool corrector_applied = false;
};

struct SspRun {
  SspResult result = SspResult::MaxIter;
  SspIterate iterate;
  KktResidual kkt;
  std::vector<SspIterationRecord> history;
  int iterations = 0;
  std::string message;
};

/// Eigenvalue clamp V max(D, floor) V^T.
inline SymMat psd_project(const SymMat& H, double floor_value) {
  const EigDecomp ed = eig_sym(H);
  const VectorXd d = ed.values.cwiseMax(floor_value);
  return SymMat::sym_part(ed.vectors * d.asDiagonal() * ed.vectors.transpose());
}

struct BfgsUpdate {
  SymMat H;
  bool updated = false;
  double damping = 1.0;  // 1 means the raw secant pair was used
};

/**
 * Damped quasi-Newton update. The secant pair is mixed toward the current
 * model, y~ = theta y + (1 - theta) H s, so that s.y~ >= 0.2 s.Hs, which
 * keeps the update positive definite. The updated matrix satisfies
 * H+ s = y~ exactly. A zero step, or a base H with s.Hs <= 0, is a no-op
 * with updated = false.
 */
inline BfgsUpdate bfgs_update(const SymMat& H, const VectorXd& s, const VectorXd& y) {
  if (s.size() != y.size() || s.size() != H.dim())
    throw DimensionError("bfgs_update: dimension mismatch");
  if (s.norm() == 0.0) return {H, false, 1.0};
  const MatrixXd Hd = H.dense();
  const VectorXd Hs = Hd * s;
  const double sHs = s.dot(Hs);
  if (!(sHs > 0.0)) return {H, false, 1.0};
  const double sy = s.dot(y);
  double theta = 1.0;
  VectorXd yt = y;
  if (sy < 0.2 * sHs) {
    theta = 0.8 * sHs / (sHs - sy);
    yt = theta * y + (1.0 - theta) * Hs;
  }
  const double syt = s.dot(yt);
  const MatrixXd Hn = Hd - (Hs * Hs.transpose()) / sHs + (yt * yt.transpose()) / syt;
  return {SymMat::sym_part(Hn), true, theta};
}

/// Euclidean distance of a cone-space point (t; u) to the second-order cone.
inline double soc_cone_distance(const VectorXd& s) {
  const double t = s[0];
  const double un = s.tail(s.size() - 1).norm();
  if (un <= t) return 0.0;
  if (un <= -t) return s.norm();
  return (un - t) / kSqrt2;
}

/// Slack-optimal infeasibility: the norm of the residual of the slacked
/// standard form with every slack chosen to minimize it, soc distances
/// included. Zero exactly on the feasible set.
inline double constraint_violation(const NlsdpProblem& prob, const VectorXd& x) {
  double sq = 0.0;
  for (const auto& blk : prob.blocks) {
    const double v = psd_violation(blk.value(x));
    sq += v * v;
  }
  if (prob.ineq.dim > 0) sq += prob.ineq.value(x).cwiseMax(0.0).squaredNorm();
  if (prob.eq.dim > 0) sq += prob.eq.value(x).squaredNorm();
  for (const auto& sc : prob.soc_cs) {
    const double v = soc_cone_distance(soc_eval(sc, x));
    sq += v * v;
  }
  return std::sqrt(sq);
}

inline double merit_value(const NlsdpProblem& prob, const VectorXd& x, double M) {
  return prob.b.dot(x) + M * constraint_violation(prob, x);
}

/// constraint_violation of the linearized rows at a step dx (zero for any
/// feasible subproblem solution, up to the inner solver's tolerance).
inline double model_violation(const QuadraticModel& qm, const VectorXd& dx) {
  double sq = 0.0;
  for (size_t j = 0; j < qm.A.size(); ++j) {
    SymMat L = qm.C[j];
    L += qm.A[j].apply(dx);
    const double v = psd_violation(L);
    sq += v * v;
  }
  if (qm.ineq_res.size() > 0) sq += (qm.ineq_res + qm.ineq_jac * dx).cwiseMax(0.0).squaredNorm();
  if (qm.eq_res.size() > 0) sq += (qm.eq_res + qm.eq_jac * dx).squaredNorm();
  for (const auto& sc : qm.soc_cs) {
    const double v = soc_cone_distance(soc_eval(sc, dx));
    sq += v * v;
  }
  return std::sqrt(sq);
}

/**
 * Linear-quadratic conic subproblem in the step dx:
 *   minimize  b.dx + dx.H dx / 2
 *   subject to C_j + A_j(dx) <= 0, linearized scalar rows, rebased soc rows,
 *              and, for finite radius, ||dx restricted to subset|| <= radius.
 * The ball is appended as the LAST soc constraint so dual extraction can
 * skip it by position. An empty subset means the ball covers every
 * coordinate.
 */
inline ConicProgram build_subproblem(const QuadraticModel& qm, double radius,
                                     const std::vector<int>& subset = {}) {
  const int n = static_cast<int>(qm.b.size());
  ConicProgram pr;
  pr.n_free = n;
  pr.c = qm.b;
  pr.Q = qm.H.dense();
  for (size_t j = 0; j < qm.A.size(); ++j) pr.psd_cs.push_back({qm.A[j], qm.C[j]});
  if (qm.ineq_res.size() > 0) {
    pr.in_A = qm.ineq_jac;
    pr.in_b = -qm.ineq_res;
  }
  if (qm.eq_res.size() > 0) {
    pr.eq_A = qm.eq_jac;
    pr.eq_b = -qm.eq_res;
  }
  pr.soc_cs = qm.soc_cs;
  if (std::isfinite(radius)) {
    std::vector<int> idx = subset;
    if (idx.empty())
      for (int i = 0; i < n; ++i) idx.push_back(i);
    SocConstraint ball;
    ball.F = MatrixXd::Zero(static_cast<int>(idx.size()), n);
    for (size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= n) throw DimensionError("build_subproblem: subset index out of range");
      ball.F(static_cast<int>(r), idx[r]) = 1.0;
    }
    ball.f = VectorXd::Zero(static_cast<int>(idx.size()));
    ball.g = VectorXd::Zero(n);
    ball.gamma = radius;
    pr.soc_cs.push_back(std::move(ball));
  }
  return pr;
}

inline ConicProgram build_subproblem(const NlsdpProblem& prob, const VectorXd& x, const SymMat& H,
                                     double radius, const std::vector<int>& subset = {}) {
  return build_subproblem(quadratic_model(prob, x, H), radius, subset);
}

struct TrustUpdate {
  bool accept = false;
  double ratio = 0.0;
  double radius = 0.0;
};

/// Ratio test: accept when actual/predicted >= 0.1, grow the radius by 1.5
/// at ratios >= 0.75, halve it on rejection. predicted <= 0 rejects.
inline TrustUpdate trust_region_step(double actual, double predicted, double radius) {
  TrustUpdate tu;
  tu.radius = radius;
  tu.ratio = predicted > 0.0 ? actual / predicted : -1.0;
  if (tu.ratio >= 0.1) {
    tu.accept = true;
    if (tu.ratio >= 0.75) tu.radius = radius * 1.5;
  } else {
    tu.radius = radius * 0.5;
  }
  return tu;
}

struct PenaltyOutcome {
  bool accepted = false;
  double lambda = 0.0;
  VectorXd z;
  double merit = 0.0;
  double predicted = 0.0;
};

namespace detail {

/// Clips the slack parts of z onto their cones (the x part is free). The
/// correction term of the line search can push slacks outside the cone,
/// which would understate ||F|| and defeat the merit comparison.
inline VectorXd clip_slacks(const StandardForm& sf, const VectorXd& z) {
  VectorXd s = sf.p > 0 ? VectorXd(sf.slack_part(z).cwiseMax(0.0)) : VectorXd(0);
  std::vector<SymMat> S;
  S.reserve(sf.prob.blocks.size());
  for (size_t j = 0; j < sf.prob.blocks.size(); ++j) S.push_back(psd_part(sf.block_part(z, j)));
  return sf.pack(sf.x_part(z), s, S);
}

}  // namespace detail

/**
 * Backtracking on the standard-form merit M ||F|| + cost.z along the
 * second-order corrected curve z(t) = z + t dz + t^2 q, where q is the
 * minimum-norm least-squares solution of J_F(z) q = -F(z + dz). The first
 * t in {1, 1/2, 1/4, ...} with merit(z(t)) <= merit(z) - sigma t pred is
 * accepted; pred is the linear-model decrease. Fails with accepted = false
 * when pred <= 0 (caller should raise M) or t underflows 2^-20.
 */
inline PenaltyOutcome penalty_step(const StandardForm& sf, const VectorXd& z, const VectorXd& dz,
                                   double M, double sigma = 1e-4) {
  const MatrixXd J = sf.jacobian(z);
  const VectorXd q = J.completeOrthogonalDecomposition().solve(-sf.residual(z + dz));
  const double m0 = sf.merit(z, M);
  const double lin = (sf.residual(z) + J * dz).norm();
  PenaltyOutcome out;
  out.predicted = m0 - (M * lin + sf.objective(z + dz));
  if (!(out.predicted > 0.0)) return out;
  // sub-rounding decreases cannot be resolved by the merit comparison; the
  // evaluation error scales with the penalty weight
  const double fuzz = 32.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(m0) + M);
  const double lambda_min = std::pow(2.0, -20);
  for (double lambda = 1.0; lambda >= lambda_min; lambda *= 0.5) {
    VectorXd zl = detail::clip_slacks(sf, z + lambda * dz + (lambda * lambda) * q);
    const double ml = sf.merit(zl, M);
    if (ml <= m0 - sigma * lambda * out.predicted + fuzz) {
      out.accepted = true;
      out.lambda = lambda;
      out.z = std::move(zl);
      out.merit = ml;
      return out;
    }
  }
  return out;
}

struct CorrectorOutcome {
  bool applied = false;
  SolveStatus status = SolveStatus::Numerical;
  VectorXd x;
  double merit_change = 0.0;
};

/**
 * Re-solves the variables NOT in fixed, holding the fixed coordinates at
 * their current values, through the constraint linearization at x (exact
 * whenever the problem is affine in the moving variables, the intended
 * use). The move is kept only if the merit does not increase; an infeasible
 * or failed solve leaves x untouched with applied = false.
 */
inline CorrectorOutcome corrector_step(const NlsdpProblem& prob, const VectorXd& x,
                                       const std::vector<int>& fixed, double M,
                                       const SolveOptions& opt = {}) {
  if (x.size() != prob.n) throw DimensionError("corrector_step: x has wrong length");
  std::vector<char> isfix(static_cast<size_t>(prob.n), 0);
  for (int f : fixed) {
    if (f < 0 || f >= prob.n) throw DimensionError("corrector_step: fixed index out of range");
    isfix[static_cast<size_t>(f)] = 1;
  }
  std::vector<int> kept;
  for (int i = 0; i < prob.n; ++i)
    if (!isfix[static_cast<size_t>(i)]) kept.push_back(i);
  if (kept.empty()) throw DimensionError("corrector_step: every variable is fixed");
  const int nk = static_cast<int>(kept.size());

  ConicProgram pr;
  pr.n_free = nk;
  pr.c = VectorXd(nk);
  for (int i = 0; i < nk; ++i) pr.c[i] = prob.b[kept[static_cast<size_t>(i)]];
  for (const auto& blk : prob.blocks) {
    const LinearMap D = blk.derivative(x);
    LinearMap A(nk, blk.dim);
    for (int i = 0; i < nk; ++i) A.coeff(i) = D.coeff(kept[static_cast<size_t>(i)]);
    pr.psd_cs.push_back({std::move(A), blk.value(x)});
  }
  if (prob.ineq.dim > 0) {
    const MatrixXd J = prob.ineq.jacobian(x);
    pr.in_A = MatrixXd(prob.ineq.dim, nk);
    for (int i = 0; i < nk; ++i) pr.in_A.col(i) = J.col(kept[static_cast<size_t>(i)]);
    pr.in_b = -prob.ineq.value(x);
  }
  if (prob.eq.dim > 0) {
    const MatrixXd J = prob.eq.jacobian(x);
    pr.eq_A = MatrixXd(prob.eq.dim, nk);
    for (int i = 0; i < nk; ++i) pr.eq_A.col(i) = J.col(kept[static_cast<size_t>(i)]);
    pr.eq_b = -prob.eq.value(x);
  }
  for (const auto& sc : prob.soc_cs) {
    SocConstraint r;
    r.F = MatrixXd(sc.F.rows(), nk);
    r.g = VectorXd(nk);
    for (int i = 0; i < nk; ++i) {
      r.F.col(i) = sc.F.col(kept[static_cast<size_t>(i)]);
      r.g[i] = sc.g[kept[static_cast<size_t>(i)]];
    }
    r.f = sc.F * x + sc.f;
    r.gamma = sc.gamma + sc.g.dot(x);
    pr.soc_cs.push_back(std::move(r));
  }

  CorrectorOutcome out;
  const ConicSolution sol = solve(pr, opt);
  out.status = sol.status;
  if (sol.status != SolveStatus::Optimal) return out;
  VectorXd xc = x;
  for (int i = 0; i < nk; ++i) xc[kept[static_cast<size_t>(i)]] += sol.x[i];
  const double m0 = merit_value(prob, x, M);
  const double m1 = merit_value(prob, xc, M);
  if (m1 <= m0 + 1e-12 * (1.0 + std::abs(m0))) {
    out.applied = true;
    out.x = std::move(xc);
    out.merit_change = m1 - m0;
  }
  return out;
}

/// Equality rows rescaled so the leading coefficient (first linear term in
/// canonical order, else first bilinear term, else the constant) is
/// positive. signs[r] is the factor applied to row r; multipliers of the
/// normalized problem relate to the original by the same factors.
struct SignNormalization {
  BilinearProblem problem;
  VectorXd signs;
};

inline SignNormalization equality_sign_normalize(const BilinearProblem& src) {
  SignNormalization out;
  out.problem = src;
  out.problem.canonicalize();
  out.signs = VectorXd::Ones(static_cast<int>(out.problem.eq_rows.size()));
  for (size_t r = 0; r < out.problem.eq_rows.size(); ++r) {
    BilinearRow& row = out.problem.eq_rows[r];
    double lead = 0.0;
    if (!row.linear.empty())
      lead = row.linear.front().value;
    else if (!row.bilinear.empty())
      lead = row.bilinear.front().value;
    else
      lead = row.constant;
    if (lead < 0.0) {
      out.signs[static_cast<int>(r)] = -1.0;
      row.constant = -row.constant;
      for (auto& t : row.linear) t.value = -t.value;
      for (auto& t : row.bilinear) t.value = -t.value;
    }
  }
  return out;
}

namespace detail {

inline void adopt_duals(const NlsdpProblem& prob, const ConicSolution& sol, SspIterate& it) {
  int off = 0;
  for (size_t j = 0; j < prob.blocks.size(); ++j) {
    insert_block(it.Y, off, sol.psd[j].dual);
    off += prob.blocks[j].dim;
  }
  if (prob.ineq.dim > 0) it.u = sol.ineq_dual;
  if (prob.eq.dim > 0) it.v = sol.eq_dual;
  for (size_t k = 0; k < prob.soc_cs.size(); ++k) it.w[k] = sol.soc_dual[k];
}

inline void refresh_slack(const NlsdpProblem& prob, SspIterate& it) {
  int off = 0;
  for (const auto& blk : prob.blocks) {
    SymMat bj = blk.value(it.x);
    bj *= -1.0;
    insert_block(it.S, off, bj);
    off += blk.dim;
  }
}

/// Step of the slack coordinates implied by a subproblem solution: the
/// subproblem's own slacks, clamped into their cones against solver noise.
inline VectorXd standard_step(const StandardForm& sf, const VectorXd& z, const QuadraticModel& qm,
                              const VectorXd& dx) {
  VectorXd s_new(sf.p);
  if (sf.p > 0) s_new = (-(qm.ineq_res + qm.ineq_jac * dx)).cwiseMax(0.0);
  std::vector<SymMat> S_new;
  S_new.reserve(qm.A.size());
  for (size_t j = 0; j < qm.A.size(); ++j) {
    SymMat L = qm.C[j];
    L += qm.A[j].apply(dx);
    L *= -1.0;
    S_new.push_back(psd_part(L));
  }
  const VectorXd z_new = sf.pack(sf.x_part(z) + dx, s_new, S_new);
  return z_new - z;
}

struct FilterEntry {
  double viol = 0.0;
  double obj = 0.0;
};

inline bool filter_accepts(const std::vector<FilterEntry>& filter, const FilterEntry& current,
                           double viol, double obj, double margin = 1e-6) {
  auto beats = [&](const FilterEntry& e) { return viol <= e.viol - margin || obj <= e.obj - margin; };
  if (!beats(current)) return false;
  for (const auto& e : filter)
    if (!beats(e)) return false;
  return true;
}

}  // namespace detail

inline SspRun solve(const NlsdpProblem& prob, SspIterate start, const SspOptions& opt = {}) {
  detail::check_iterate(prob, start);
  for (int f : opt.corrector_fixed)
    if (f < 0 || f >= prob.n) throw DimensionError("solve: corrector index out of range");
  for (int t : opt.trust_subset)
    if (t < 0 || t >= prob.n) throw DimensionError("solve: trust subset index out of range");

  SspRun run;
  run.iterate = std::move(start);
  SspIterate& it = run.iterate;

  const bool has_ball =
      opt.controller == StepController::TrustRegion || opt.controller == StepController::Filter;
  const bool line_search = opt.controller == StepController::PenaltyLineSearch ||
                           opt.controller == StepController::Filter;
  double radius = opt.initial_radius;
  double M = opt.initial_penalty > 0.0 ? opt.initial_penalty : 10.0 * (1.0 + prob.b.norm());

  const StandardForm sf = lower_to_standard_form(prob);
  VectorXd z;
  if (line_search) z = sf.initial_point(it.x);

  std::vector<detail::FilterEntry> filter;

  SymMat bfgs_H(0);
  bool bfgs_reset_done = false;
  if (opt.hessian == HessianStrategy::DampedBfgs)
    bfgs_H = psd_project(hess_lagrangian(prob, it), opt.hessian_floor);

  const auto viol_of = [&](const VectorXd& x) { return constraint_violation(prob, x); };

  for (int k = 0; k < opt.max_iter; ++k) {
    run.kkt = kkt_residual(prob, it);
    if (run.kkt.total <= opt.outer_tol) {
      run.result = SspResult::Converged;
      run.iterations = k;
      return run;
    }

    SspIterationRecord rec;
    rec.k = k;
    rec.kkt = run.kkt.total;
    rec.radius = has_ball ? radius : 0.0;

    // curvature term
    SymMat H(prob.n);
    switch (opt.hessian) {
      case HessianStrategy::Exact: {
        H = hess_lagrangian(prob, it);
        const double scale = std::max(1.0, H.frob_norm());
        if (min_eig(H) < -1e-10 * scale) {
          H = psd_project(H, opt.hessian_floor);
          rec.hessian_clamped = true;
        }
        break;
      }
      case HessianStrategy::PsdProjection:
        H = psd_project(hess_lagrangian(prob, it), opt.hessian_floor);
        break;
      case HessianStrategy::DampedBfgs:
        H = bfgs_H;
        break;
    }

    const QuadraticModel qm = quadratic_model(prob, it.x, H);

    // subproblem, with the documented failure policies; tolerances tighten
    // with the outer residual so multiplier accuracy keeps pace (retries fall
    // back to the configured values in case the tight ones are unreachable)
    SolveOptions sub_opt = opt.subproblem;
    {
      const double tight = std::max(5e-14, 1e-3 * run.kkt.total);
      sub_opt.gap_tol = std::min(sub_opt.gap_tol, tight);
      sub_opt.feas_tol = std::min(sub_opt.feas_tol, tight);
    }
    ConicSolution sol;
    {
      double r_try = has_ball ? radius : std::numeric_limits<double>::infinity();
      // the filter ball tracks the previous step; once it shrinks below the
      // iterate scale it only degrades subproblem conditioning, so drop it
      if (opt.controller == StepController::Filter && radius < 1e-8 * (1.0 + it.x.norm()))
        r_try = std::numeric_limits<double>::infinity();
      bool forced_ball = false;
      bool widened_once = false;
      int tries = 0;
      for (;;) {
        sol = solve(build_subproblem(qm, r_try, opt.trust_subset), sub_opt);
        if (sol.status == SolveStatus::Optimal) break;
        if (++tries > opt.solver_retries) break;
        sub_opt = opt.subproblem;
        rec.retries = tries;
        if (sol.status == SolveStatus::PrimalInfeasible) {
          // linearization infeasible inside the ball: widen it
          if (!std::isfinite(r_try)) break;
          r_try *= 4.0;
        } else if (sol.status == SolveStatus::DualInfeasible) {
          // unbounded model: impose or keep a ball
          if (!std::isfinite(r_try)) {
            r_try = std::max(1.0, it.x.norm());
            forced_ball = true;
          } else {
            r_try *= 0.5;
          }
        } else {
          // numerical stall: a ball-infeasible linearization the solver
          // cannot certify looks exactly like this, so widen once before
          // falling back to shrinking for conditioning
          if (!std::isfinite(r_try)) {
            r_try = std::max(1.0, it.x.norm());
            forced_ball = true;
          } else if (!widened_once) {
            r_try *= 4.0;
            widened_once = true;
          } else {
            r_try *= 0.25;
          }
        }
      }
      rec.sub_status = sol.status;
      rec.sub_iterations = sol.iterations;
      if (sol.status != SolveStatus::Optimal) {
        rec.accepted = false;
        rec.merit = merit_value(prob, it.x, M);
        rec.penalty = M;
        run.history.push_back(rec);
        run.result = SspResult::SubproblemFailure;
        run.iterations = k + 1;
        run.message = std::string("subproblem ") + to_string(sol.status);
        return run;
      }
      if (has_ball && !forced_ball) radius = r_try;  // keep any widening
      rec.radius = has_ball ? radius : 0.0;
    }

    const VectorXd dx = sol.x;
    const double dx_norm = dx.norm();
    rec.penalty = M;

    // negligible step: refresh multipliers and slack only, and only when the
    // refreshed multipliers do not degrade the residual
    if (dx_norm <= 1e-14 * (1.0 + it.x.norm())) {
      SspIterate cand = it;
      detail::adopt_duals(prob, sol, cand);
      detail::refresh_slack(prob, cand);
      if (kkt_residual(prob, cand).total <= run.kkt.total) it = std::move(cand);
      rec.step_norm = dx_norm;
      rec.merit = merit_value(prob, it.x, M);
      run.history.push_back(rec);
      continue;
    }

    bool accepted = false;
    VectorXd x_next;

    // last resort before declaring failure: a rejected step's subproblem can
    // still carry multipliers that lower the residual (step stays put)
    const auto dual_rescue = [&]() -> bool {
      SspIterate cand = it;
      detail::adopt_duals(prob, sol, cand);
      detail::refresh_slack(prob, cand);
      if (kkt_residual(prob, cand).total < run.kkt.total) {
        it = std::move(cand);
        return true;
      }
      return false;
    };

    // a quasi-Newton model that blocks every step is re-seeded once from the
    // projected exact curvature; an accepted step re-arms the reset
    const auto bfgs_recover = [&]() -> bool {
      if (opt.hessian != HessianStrategy::DampedBfgs || bfgs_reset_done) return false;
      bfgs_H = psd_project(hess_lagrangian(prob, it), opt.hessian_floor);
      bfgs_reset_done = true;
      return true;
    };

    // near a stationary point the merit cannot resolve changes below the
    // penalty-weighted restoration error; a halved residual is then the
    // honest progress certificate for the candidate
    const auto local_accept = [&](const VectorXd& x_cand) -> bool {
      SspIterate cand = it;
      cand.x = x_cand;
      detail::adopt_duals(prob, sol, cand);
      detail::refresh_slack(prob, cand);
      return kkt_residual(prob, cand).total <= 0.5 * run.kkt.total;
    };

    switch (opt.controller) {
      case StepController::UnitStep: {
        accepted = true;
        x_next = it.x + dx;
        rec.lambda = 1.0;
        break;
      }
      case StepController::TrustRegion: {
        const double viol_x = viol_of(it.x);
        const double lin_viol = model_violation(qm, dx);
        const double quad = prob.b.dot(it.x + dx) + 0.5 * dx.dot(qm.H.dense() * dx);
        double m0 = merit_value(prob, it.x, M);
        double pred = m0 - (quad + M * lin_viol);
        double noise = 1e-13 * (1.0 + std::abs(m0));
        // raising M helps only while the step actually reduces infeasibility
        int escal = 0;
        while (pred <= noise && viol_x > lin_viol + noise && M < opt.penalty_cap && escal < 12) {
          M *= 10.0;
          ++escal;
          m0 = merit_value(prob, it.x, M);
          pred = m0 - (quad + M * lin_viol);
          noise = 1e-13 * (1.0 + std::abs(m0));
        }
        rec.penalty = M;
        const double actual = m0 - merit_value(prob, it.x + dx, M);
        // the model cannot see the curvature the penalty term picks up along
        // the constraint boundary; when the raw step fails, retest at the
        // point corrected back toward feasibility to second order
        const auto corrected_point = [&]() {
          const VectorXd z0 = sf.initial_point(it.x);
          const VectorXd dz0 = detail::standard_step(sf, z0, qm, dx);
          const VectorXd q =
              sf.jacobian(z0).completeOrthogonalDecomposition().solve(-sf.residual(z0 + dz0));
          return VectorXd(sf.x_part(z0 + dz0 + q));
        };
        if (pred <= noise) {
          // model decrease below merit rounding: the ratio is meaningless,
          // take any non-worsening step so the multipliers keep moving
          if (actual >= -noise) {
            accepted = true;
            x_next = it.x + dx;
          } else {
            const VectorXd x_corr = corrected_point();
            if (m0 - merit_value(prob, x_corr, M) >= -noise || local_accept(x_corr)) {
              accepted = true;
              x_next = x_corr;
            } else {
              radius *= 0.5;
            }
          }
          if (!accepted && radius < 1e-12) {
            if (dual_rescue() || bfgs_recover()) {
              radius = std::max(radius, 1e-3 * (1.0 + it.x.norm()));
              break;
            }
            rec.accepted = false;
            rec.step_norm = dx_norm;
            rec.merit = m0;
            run.history.push_back(rec);
            run.result = SspResult::StepFailure;
            run.iterations = k + 1;
            run.message = "trust radius underflow";
            return run;
          }
          break;
        }
        TrustUpdate tu = trust_region_step(actual, pred, radius);
        x_next = it.x + dx;
        if (!tu.accept) {
          const VectorXd x_corr = corrected_point();
          const double actual_corr = m0 - merit_value(prob, x_corr, M);
          const TrustUpdate tc = trust_region_step(actual_corr, pred, radius);
          if (tc.accept) {
            tu = tc;
            x_next = x_corr;
          } else if (local_accept(x_corr)) {
            tu.accept = true;
            tu.radius = radius;
            x_next = x_corr;
          }
        }
        radius = tu.radius;
        if (tu.accept) {
          accepted = true;
        } else if (radius < 1e-12) {
          if (dual_rescue() || bfgs_recover()) {
            radius = std::max(radius, 1e-3 * (1.0 + it.x.norm()));
            break;
          }
          rec.accepted = false;
          rec.step_norm = dx_norm;
          rec.merit = m0;
          run.history.push_back(rec);
          run.result = SspResult::StepFailure;
          run.iterations = k + 1;
          run.message = "trust radius underflow";
          return run;
        }
        break;
      }
      case StepController::PenaltyLineSearch:
      case StepController::Filter: {
        const VectorXd dz = detail::standard_step(sf, z, qm, dx);
        if (opt.controller == StepController::Filter) {
          // full corrected step first, judged by the filter
          const MatrixXd J = sf.jacobian(z);
          const VectorXd q = J.completeOrthogonalDecomposition().solve(-sf.residual(z + dz));
          const VectorXd z1 = z + dz + q;
          const VectorXd x1 = sf.x_part(z1);
          const detail::FilterEntry cur{viol_of(it.x), prob.b.dot(it.x)};
          const detail::FilterEntry cand{viol_of(x1), prob.b.dot(x1)};
          if (detail::filter_accepts(filter, cur, cand.viol, cand.obj)) {
            accepted = true;
            x_next = x1;
            rec.lambda = 1.0;
            filter.push_back(cand);
          }
        }
        if (!accepted) {
          const double res_z = sf.residual(z).norm();
          PenaltyOutcome po = penalty_step(sf, z, dz, M, opt.sigma);
          int escal = 0;
          while (!po.accepted && !(po.predicted > 0.0) && res_z > 1e-13 &&
                 M < opt.penalty_cap && escal < 12) {
            M *= 10.0;
            ++escal;
            po = penalty_step(sf, z, dz, M, opt.sigma);
          }
          rec.penalty = M;
          if (!po.accepted) {
            // endgame: the predicted decrease is within a few orders of the
            // merit's own rounding, so the line search cannot resolve it;
            // take the corrected full step if it does not worsen the merit.
            // candidates are judged at slack-optimal points, since carried
            // slacks add consistency error at exactly this scale
            const double m0 = sf.merit(z, M);
            const double fuzz =
                32.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(m0) + M);
            if (po.predicted <= 1e3 * fuzz) {
              const VectorXd qf =
                  sf.jacobian(z).completeOrthogonalDecomposition().solve(-sf.residual(z + dz));
              const VectorXd xc = sf.x_part(z + dz + qf);
              VectorXd z1 = sf.initial_point(xc);
              double m1 = sf.merit(z1, M);
              if (m1 > m0 + fuzz) {
                z1 = sf.initial_point(sf.x_part(z + dz));
                m1 = sf.merit(z1, M);
              }
              if (m1 <= m0 + fuzz) {
                po.accepted = true;
                po.lambda = 1.0;
                po.z = std::move(z1);
                po.merit = m1;
              } else if (local_accept(xc)) {
                po.accepted = true;
                po.lambda = 1.0;
                po.z = sf.initial_point(xc);
                po.merit = sf.merit(po.z, M);
              }
            }
          }
          if (!po.accepted) {
            if (dual_rescue() || bfgs_recover()) break;
            rec.accepted = false;
            rec.step_norm = dx_norm;
            rec.merit = sf.merit(z, M);
            run.history.push_back(rec);
            run.result = SspResult::StepFailure;
            run.iterations = k + 1;
            char msg[160];
            std::snprintf(msg, sizeof(msg), "%s (predicted %.3e, residual %.3e, step %.3e)",
                          po.predicted > 0.0 ? "line search underflow" : "no merit descent direction",
                          po.predicted, res_z, dx_norm);
            run.message = msg;
            return run;
          }
          accepted = true;
          rec.lambda = po.lambda;
          x_next = sf.x_part(po.z);
          if (opt.controller == StepController::Filter)
            filter.push_back({viol_of(x_next), prob.b.dot(x_next)});
        }
        break;
      }
    }

    if (accepted) {
      const double step_norm = (x_next - it.x).norm();
      // ball size for the next filter subproblem tracks the accepted step
      if (opt.controller == StepController::Filter && step_norm > 0.0) {
        double sub_norm = 0.0;
        if (opt.trust_subset.empty()) {
          sub_norm = step_norm;
        } else {
          for (int i : opt.trust_subset) {
            const double d = x_next[i] - it.x[i];
            sub_norm += d * d;
          }
          sub_norm = std::sqrt(sub_norm);
        }
        radius = std::max(1.5 * sub_norm, 1e-10);
      }
      it.x = x_next;
      {
        // keep the old multipliers when the subproblem's are worse (the
        // solve can be scale-limited near convergence)
        SspIterate cand = it;
        detail::adopt_duals(prob, sol, cand);
        detail::refresh_slack(prob, cand);
        detail::refresh_slack(prob, it);
        if (kkt_residual(prob, cand).total <= kkt_residual(prob, it).total) it = std::move(cand);
      }

      if (!opt.corrector_fixed.empty()) {
        const CorrectorOutcome co =
            corrector_step(prob, it.x, opt.corrector_fixed, M, opt.subproblem);
        if (co.applied) {
          it.x = co.x;
          detail::refresh_slack(prob, it);
          rec.corrector_applied = true;
        }
      }
      if (line_search) z = sf.initial_point(it.x);

      if (opt.hessian == HessianStrategy::DampedBfgs) {
        bfgs_reset_done = false;
        // gradient difference at the new multipliers
        SspIterate probe = it;
        const VectorXd g_new = grad_lagrangian(prob, probe);
        probe.x = qm.base_point;
        const VectorXd g_old = grad_lagrangian(prob, probe);
        bfgs_H = bfgs_update(bfgs_H, it.x - qm.base_point, g_new - g_old).H;
      }
      rec.step_norm = step_norm;
    } else {
      rec.accepted = false;
      rec.step_norm = 0.0;
      if (opt.hessian == HessianStrategy::DampedBfgs) {
        // a rejected trial still carries curvature; fold it in so the next
        // model sees what the merit saw
        SspIterate probe = it;
        detail::adopt_duals(prob, sol, probe);
        probe.x = it.x + dx;
        const VectorXd g_new = grad_lagrangian(prob, probe);
        probe.x = it.x;
        const VectorXd g_old = grad_lagrangian(prob, probe);
        bfgs_H = bfgs_update(bfgs_H, dx, g_new - g_old).H;
      }
    }
    rec.merit = merit_value(prob, it.x, M);
    run.history.push_back(rec);
  }

  run.kkt = kkt_residual(prob, it);
  run.result = run.kkt.total <= opt.outer_tol ? SspResult::Converged : SspResult::MaxIter;
  run.iterations = opt.max_iter;
  return run;
}

/// Entry point with the default multiplier guess Y = max(1, ||b||) I.
inline SspRun solve(const NlsdpProblem& prob, const VectorXd& x0, const SspOptions& opt = {}) {
  SspIterate it = make_iterate(prob, x0);
  const double y0 = std::max(1.0, prob.b.norm());
  int off = 0;
  for (const auto& blk : prob.blocks) {
    SymMat Yj(blk.dim);
    for (int i = 0; i < blk.dim; ++i) Yj(i, i) = y0;
    insert_block(it.Y, off, Yj);
    off += blk.dim;
  }
  return solve(prob, std::move(it), opt);
}

}  // namespace sspsolve
