#pragma once

// Passivity toolbox for descriptor models Z(s) = B2' (G + sC)^{-1} B1:
// transfer evaluation, positive-real certification through the multiplier
// LMI, frequency sampling, random non-passive instance generation, and
// assembly of the repair problem (find patterned perturbations X_G, X_C and
// a multiplier P so the perturbed model is certifiably positive real).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sspsolve/conesolve.hpp"
#include "sspsolve/nlsdp.hpp"
#include "sspsolve/rng.hpp"
#include "sspsolve/ssp.hpp"
#include "sspsolve/symmat.hpp"

namespace sspsolve {

using Eigen::MatrixXcd;

/** Thrown when a transfer evaluation or pencil check hits a (near-)pole. */
class PoleError : public NumericalError {
public:
  explicit PoleError(const std::string& what) : NumericalError(what) {}
};

/** Thrown when instance generation cannot break passivity within its retry
 *  budget (for example with zero perturbation norms). */
class GeneratorFailed : public NumericalError {
public:
  explicit GeneratorFailed(const std::string& what) : NumericalError(what) {}
};

/**
 * Reduced-order descriptor model. The transfer function is
 * Z(s) = B2' (G + sC)^{-1} B1 with G, C square and B1, B2 of matching shape.
 * s0 is the regularity witness: G + s0*C must be invertible, which is checked
 * by make_system so a constructed value always carries a regular pencil.
 */
struct DescriptorSystem {
  MatrixXd G;
  MatrixXd C;
  MatrixXd B1;
  MatrixXd B2;
  double s0 = 1.0;

  int n() const { return static_cast<int>(G.rows()); }
  int m() const { return static_cast<int>(B1.cols()); }
};

inline DescriptorSystem make_system(MatrixXd G, MatrixXd C, MatrixXd B1, MatrixXd B2,
                                    double s0 = 1.0) {
  const auto n = G.rows();
  if (n < 1 || G.cols() != n) throw DimensionError("make_system: G must be square");
  if (C.rows() != n || C.cols() != n) throw DimensionError("make_system: C must match G");
  if (B1.rows() != n || B1.cols() < 1) throw DimensionError("make_system: B1 must be n x m");
  if (B2.rows() != B1.rows() || B2.cols() != B1.cols())
    throw DimensionError("make_system: B2 must match B1");
  Eigen::PartialPivLU<MatrixXd> lu(G + s0 * C);
  if (!(lu.rcond() > 1e-14))
    throw PoleError("make_system: pencil G + s0*C is singular at the witness point");
  DescriptorSystem sys;
  sys.G = std::move(G);
  sys.C = std::move(C);
  sys.B1 = std::move(B1);
  sys.B2 = std::move(B2);
  sys.s0 = s0;
  return sys;
}

/// Z(s) = B2' (G + sC)^{-1} B1. Throws PoleError near a pole of the pencil.
inline MatrixXcd transfer_eval(const DescriptorSystem& sys, std::complex<double> s) {
  const MatrixXcd A = sys.G.cast<std::complex<double>>() + s * sys.C.cast<std::complex<double>>();
  Eigen::PartialPivLU<MatrixXcd> lu(A);
  if (!(lu.rcond() > 1e-14)) throw PoleError("transfer_eval: pencil singular near sample point");
  return sys.B2.transpose().cast<std::complex<double>>() *
         lu.solve(sys.B1.cast<std::complex<double>>());
}

// ---------------------------------------------------------------------------
// Positive-real certification via the multiplier LMI
//
//   find P with  P'G + G'P >= 0,  P'C = C'P >= 0,  P'B1 = B2.
//
// Feasibility is sufficient for positive realness of Z, so a verified
// multiplier is a certificate. The check maximizes the common margin t with
// both semidefinite rows shifted by t*I (on scale-normalized G, C), bounds P
// inside an explicit ball so the margin stays finite, and re-verifies any
// claimed multiplier directly on the unscaled data before certifying.
// ---------------------------------------------------------------------------

enum class PrStatus { Certified, NotCertified, Indeterminate };

inline const char* to_string(PrStatus s) {
  switch (s) {
    case PrStatus::Certified: return "certified";
    case PrStatus::NotCertified: return "not-certified";
    case PrStatus::Indeterminate: return "indeterminate";
  }
  return "unknown";
}

struct PrReport {
  PrStatus status = PrStatus::Indeterminate;
  double margin = 0.0;  // best scaled Slater margin found by the SDP
  MatrixXd P;           // multiplier attempt (meaningful when the SDP solved)
  double g_min_eig = 0.0;
  double c_min_eig = 0.0;
  double c_skew_norm = 0.0;
  double b_residual = 0.0;
  SolveStatus solver_status = SolveStatus::Numerical;
  std::string message;
};

namespace detail {

/// Minimum-Frobenius-norm solution of P'B1 = B2, i.e. B1'P = B2'.
inline MatrixXd multiplier_least_squares(const DescriptorSystem& sys) {
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(sys.B1.transpose());
  return cod.solve(sys.B2.transpose());
}

}  // namespace detail

inline PrReport pr_lmi_check(const DescriptorSystem& sys, const SolveOptions& solver_opts = {}) {
  const int n = sys.n();
  const int m = sys.m();
  const int np = n * n;
  const int nv = np + 1;  // vec(P) column-major, then the margin t
  const auto vp = [n](int r, int c) { return c * n + r; };

  PrReport rep;

  // The equality P'B1 = B2 is linear; if even its least-squares solution
  // misses, no multiplier exists and the SDP is pointless.
  const MatrixXd P_ls = detail::multiplier_least_squares(sys);
  const double b_scale = 1.0 + sys.B1.norm() * (1.0 + P_ls.norm()) + sys.B2.norm();
  if ((P_ls.transpose() * sys.B1 - sys.B2).norm() > 1e-8 * b_scale) {
    rep.status = PrStatus::NotCertified;
    rep.message = "multiplier equality P'B1 = B2 has no solution";
    return rep;
  }

  // Margins on normalized data keep t comparable across instances.
  const double gn = std::max(sys.G.norm(), 1e-12);
  const double cn = std::max(sys.C.norm(), 1e-12);
  const MatrixXd Gs = sys.G / gn;
  const MatrixXd Cs = sys.C / cn;

  ConicProgram pr;
  pr.n_free = nv;
  pr.c = VectorXd::Zero(nv);
  pr.c[np] = -1.0;  // maximize t

  // t*I - (P'M + M'P) <= 0 for M in {Gs, Cs}.
  for (const MatrixXd* M : {&Gs, &Cs}) {
    PsdConstraint pc;
    pc.A = LinearMap(nv, n);
    pc.C = SymMat::zero(n);
    for (int v = 0; v < n; ++v)
      for (int u = 0; u < n; ++u) {
        SymMat& D = pc.A.coeff(vp(u, v));
        for (int c = 0; c < n; ++c) D(v, c) -= (*M)(u, c);
        D(v, v) -= (*M)(u, v);
      }
    for (int d = 0; d < n; ++d) pc.A.coeff(np)(d, d) = 1.0;
    pr.psd_cs.push_back(std::move(pc));
  }

  // Equality rows: P'B1 = B2 and skew(P'Cs) = 0, zero rows dropped.
  std::vector<VectorXd> rows;
  std::vector<double> rhs;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      VectorXd row = VectorXd::Zero(nv);
      for (int k = 0; k < n; ++k) row[vp(k, i)] = sys.B1(k, j);
      if (row.cwiseAbs().maxCoeff() == 0.0) {
        if (std::abs(sys.B2(i, j)) > 0.0) {
          rep.status = PrStatus::NotCertified;
          rep.message = "multiplier equality P'B1 = B2 has no solution";
          return rep;
        }
        continue;
      }
      rows.push_back(std::move(row));
      rhs.push_back(sys.B2(i, j));
    }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      VectorXd row = VectorXd::Zero(nv);
      for (int k = 0; k < n; ++k) {
        row[vp(k, i)] += Cs(k, j);
        row[vp(k, j)] -= Cs(k, i);
      }
      if (row.cwiseAbs().maxCoeff() == 0.0) continue;
      rows.push_back(std::move(row));
      rhs.push_back(0.0);
    }
  pr.eq_A = MatrixXd::Zero(static_cast<int>(rows.size()), nv);
  pr.eq_b = VectorXd::Zero(static_cast<int>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    pr.eq_A.row(static_cast<int>(r)) = rows[r].transpose();
    pr.eq_b[static_cast<int>(r)] = rhs[r];
  }

  // ||vec(P)|| <= R keeps the margin bounded; R is generous around the
  // least-squares multiplier so it never cuts off a genuine certificate.
  SocConstraint ball;
  ball.F = MatrixXd::Zero(np, nv);
  ball.F.leftCols(np).setIdentity();
  ball.f = VectorXd::Zero(np);
  ball.g = VectorXd::Zero(nv);
  ball.gamma = 10.0 * (std::sqrt(static_cast<double>(n)) + P_ls.norm());
  pr.soc_cs.push_back(std::move(ball));

  ConicSolution sol;
  try {
    sol = solve(pr, solver_opts);
  } catch (const NumericalError& e) {
    rep.message = std::string("multiplier SDP failed: ") + e.what();
    return rep;
  }
  rep.solver_status = sol.status;

  if (sol.status == SolveStatus::PrimalInfeasible) {
    rep.status = PrStatus::NotCertified;
    rep.message = "multiplier LMI is infeasible";
    return rep;
  }
  // A stalled endgame still leaves a usable candidate; boundary systems make
  // the margin maximization genuinely hard, and the verification below is
  // what decides anyway.
  if (sol.x.size() != nv || !sol.x.allFinite()) {
    rep.message = std::string("multiplier SDP inconclusive: ") + to_string(sol.status);
    return rep;
  }

  rep.margin = sol.x[np];
  rep.P = Eigen::Map<const MatrixXd>(sol.x.data(), n, n);

  // Certify only from the unscaled rows; the SDP result is just a candidate.
  const MatrixXd sym_g = rep.P.transpose() * sys.G + sys.G.transpose() * rep.P;
  const MatrixXd pc_prod = rep.P.transpose() * sys.C;
  const MatrixXd sym_c = 0.5 * (pc_prod + pc_prod.transpose());
  rep.g_min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (sym_g + sym_g.transpose()),
                                                          Eigen::EigenvaluesOnly)
                      .eigenvalues()(0);
  rep.c_min_eig =
      Eigen::SelfAdjointEigenSolver<MatrixXd>(sym_c, Eigen::EigenvaluesOnly).eigenvalues()(0);
  rep.c_skew_norm = (pc_prod - pc_prod.transpose()).norm();
  rep.b_residual = (rep.P.transpose() * sys.B1 - sys.B2).norm();

  const double pn = rep.P.norm();
  const double tol_g = 1e-9 * (1.0 + pn) * (1.0 + sys.G.norm());
  const double tol_c = 1e-9 * (1.0 + pn) * (1.0 + sys.C.norm());
  const double tol_b = 1e-9 * b_scale * (1.0 + pn);
  if (rep.g_min_eig >= -tol_g && rep.c_min_eig >= -tol_c && rep.c_skew_norm <= tol_c &&
      rep.b_residual <= tol_b) {
    rep.status = PrStatus::Certified;
    rep.message = "multiplier verified on unscaled data";
  } else if (sol.status == SolveStatus::Optimal && rep.margin < 1e-6) {
    rep.status = PrStatus::NotCertified;
    rep.message = "no multiplier with a positive margin inside the search ball";
  } else {
    rep.message = sol.status == SolveStatus::Optimal
                      ? "solver reported a margin but direct verification failed"
                      : std::string("multiplier SDP inconclusive: ") + to_string(sol.status);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Frequency-domain sampling: min eig of Z(iw) + Z(iw)^H per sample. Any
// negative value witnesses non-positive-realness; the converse needs the LMI.
// ---------------------------------------------------------------------------

struct FrequencySample {
  double omega = 0.0;
  double min_eig = 0.0;
  bool pole = false;
};

struct SampleProfile {
  std::vector<FrequencySample> samples;
  double worst = std::numeric_limits<double>::infinity();
  double worst_omega = 0.0;
  int poles = 0;

  bool witness(double tol = 0.0) const { return worst < -tol; }
};

inline SampleProfile pr_sample_check(const DescriptorSystem& sys,
                                     const std::vector<double>& omegas) {
  SampleProfile prof;
  prof.samples.reserve(omegas.size());
  for (double w : omegas) {
    FrequencySample fs;
    fs.omega = w;
    try {
      const MatrixXcd Z = transfer_eval(sys, std::complex<double>(0.0, w));
      const MatrixXcd H = Z + Z.adjoint();
      Eigen::SelfAdjointEigenSolver<MatrixXcd> es(H, Eigen::EigenvaluesOnly);
      if (es.info() != Eigen::Success) throw PoleError("eigenvalue iteration failed");
      fs.min_eig = es.eigenvalues()(0);
      if (fs.min_eig < prof.worst) {
        prof.worst = fs.min_eig;
        prof.worst_omega = w;
      }
    } catch (const PoleError&) {
      fs.pole = true;
      ++prof.poles;
    }
    prof.samples.push_back(fs);
  }
  return prof;
}

/// Zero plus a log grid around the pencil's characteristic frequency.
inline std::vector<double> sample_frequencies(const DescriptorSystem& sys, int count = 100) {
  if (count < 2) throw DimensionError("sample_frequencies: count must be at least 2");
  const double pivot = (1.0 + sys.G.norm()) / (1.0 + sys.C.norm());
  std::vector<double> w;
  w.reserve(static_cast<size_t>(count));
  w.push_back(0.0);
  const int grid = count - 1;
  for (int i = 0; i < grid; ++i) {
    const double e = grid == 1 ? 0.0 : -3.0 + 6.0 * static_cast<double>(i) / (grid - 1);
    w.push_back(pivot * std::pow(10.0, e));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Enforcement problem assembly
//
//   minimize t  over  P, X_G, X_C, S, t
//   s.t.  P'(G+X_G) + (G+X_G)'P >= eps_G * I
//         P'(C+X_C) + (C+X_C)'P >= eps_C * I
//         P'(C+X_C) - (C+X_C)'P  = 0
//         P'B1 + S = B2
//         ||X_G|| <= r_G,  ||X_C|| <= r_C,  ||S|| <= t
//
// X_G, X_C live on caller-chosen sparsity patterns. Norms are either
// spectral (PSD-block encodings) or Frobenius (second-order cones).
// ---------------------------------------------------------------------------

enum class NormKind { Spectral, Frobenius };

inline const char* to_string(NormKind k) {
  return k == NormKind::Spectral ? "spectral" : "frobenius";
}

using IndexPattern = std::vector<std::pair<int, int>>;

/// Sorted (row, col) positions where |M| exceeds tol.
inline IndexPattern nonzero_pattern(const MatrixXd& M, double tol = 0.0) {
  IndexPattern p;
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c)
      if (std::abs(M(r, c)) > tol) p.emplace_back(static_cast<int>(r), static_cast<int>(c));
  return p;
}

struct EnforcementSpec {
  double r_g = 0.0;  // norm budget for X_G (0 pins X_G to zero)
  double r_c = 0.0;
  double eps_g = -1.0;  // definiteness offsets; <= 0 resolves to 1e-8 * ||G||_2
  double eps_c = -1.0;
  IndexPattern pattern_g;  // allowed perturbation positions; empty = nonzeros of G
  IndexPattern pattern_c;
  NormKind norm = NormKind::Spectral;
};

/** Variable layout of the assembled problem:
 *  [ vec(P) | X_G entries | X_C entries | vec(S) | t ], all column-major. */
struct EnforcementLayout {
  int n = 0;
  int m = 0;
  IndexPattern pattern_g;
  IndexPattern pattern_c;
  int xg_offset = 0;
  int xc_offset = 0;
  int s_offset = 0;
  int t_index = 0;
  int total = 0;

  int idx_p(int r, int c) const { return c * n + r; }
  int idx_xg(size_t k) const { return xg_offset + static_cast<int>(k); }
  int idx_xc(size_t k) const { return xc_offset + static_cast<int>(k); }
  int idx_s(int i, int j) const { return s_offset + j * n + i; }

  MatrixXd extract_p(const VectorXd& x) const {
    return Eigen::Map<const MatrixXd>(x.data(), n, n);
  }
  MatrixXd extract_xg(const VectorXd& x) const {
    MatrixXd X = MatrixXd::Zero(n, n);
    for (size_t k = 0; k < pattern_g.size(); ++k)
      X(pattern_g[k].first, pattern_g[k].second) = x[idx_xg(k)];
    return X;
  }
  MatrixXd extract_xc(const VectorXd& x) const {
    MatrixXd X = MatrixXd::Zero(n, n);
    for (size_t k = 0; k < pattern_c.size(); ++k)
      X(pattern_c[k].first, pattern_c[k].second) = x[idx_xc(k)];
    return X;
  }
  MatrixXd extract_s(const VectorXd& x) const {
    return Eigen::Map<const MatrixXd>(x.data() + s_offset, n, m);
  }
  double extract_t(const VectorXd& x) const { return x[t_index]; }
};

struct EnforcementProblem {
  BilinearProblem problem;
  EnforcementLayout layout;
  double eps_g = 0.0;  // resolved offsets actually used in the blocks
  double eps_c = 0.0;
};

namespace detail {

inline IndexPattern resolve_pattern(const IndexPattern& requested, const MatrixXd& M,
                                    const char* which) {
  IndexPattern p = requested.empty() ? nonzero_pattern(M) : requested;
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  for (const auto& [r, c] : p) {
    if (r < 0 || c < 0 || r >= M.rows() || c >= M.cols())
      throw DimensionError(std::string("assemble_enforcement: ") + which +
                           " pattern entry out of range");
    if (M(r, c) == 0.0)
      throw DimensionError(std::string("assemble_enforcement: ") + which +
                           " pattern entry outside the nonzero structure");
  }
  return p;
}

/// eps*I - (P'M + M'P) - (P'X + X'P) <= 0 with X the patterned variables.
inline BilinearBlock definiteness_block(const EnforcementLayout& lo, const MatrixXd& M,
                                        const IndexPattern& pat, int x_offset, double eps) {
  const int n = lo.n;
  BilinearBlock blk;
  blk.dim = n;
  for (int d = 0; d < n; ++d) blk.constant.push_back({d, d, eps});
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c)
      for (int k = 0; k < n; ++k) {
        blk.linear.push_back({lo.idx_p(k, r), r, c, -M(k, c)});
        blk.linear.push_back({lo.idx_p(k, c), r, c, -M(k, r)});
      }
  for (size_t v = 0; v < pat.size(); ++v) {
    const auto [a, b] = pat[v];
    for (int r = 0; r < n; ++r)
      blk.bilinear.push_back({lo.idx_p(a, r), x_offset + static_cast<int>(v), std::min(r, b),
                              std::max(r, b), r == b ? -2.0 : -1.0});
  }
  return blk;
}

/// -[[r*I, X], [X', r*I]] <= 0, i.e. ||X||_2 <= r on the patterned variables.
inline BilinearBlock spectral_ball_block(const EnforcementLayout& lo, const IndexPattern& pat,
                                         int x_offset, double radius) {
  const int n = lo.n;
  BilinearBlock blk;
  blk.dim = 2 * n;
  for (int d = 0; d < 2 * n; ++d) blk.constant.push_back({d, d, -radius});
  for (size_t v = 0; v < pat.size(); ++v)
    blk.linear.push_back({x_offset + static_cast<int>(v), pat[v].first, n + pat[v].second, -1.0});
  return blk;
}

inline SocConstraint selector_cone(int total, const std::vector<int>& vars, int bound_var,
                                   double gamma) {
  SocConstraint sc;
  sc.F = MatrixXd::Zero(static_cast<int>(vars.size()), total);
  for (size_t r = 0; r < vars.size(); ++r) sc.F(static_cast<int>(r), vars[r]) = 1.0;
  sc.f = VectorXd::Zero(static_cast<int>(vars.size()));
  sc.g = VectorXd::Zero(total);
  if (bound_var >= 0)
    sc.g[bound_var] = 1.0;
  else
    sc.gamma = gamma;
  return sc;
}

}  // namespace detail

inline EnforcementProblem assemble_enforcement(const DescriptorSystem& sys,
                                               const EnforcementSpec& spec) {
  if (spec.r_g < 0.0 || spec.r_c < 0.0)
    throw DimensionError("assemble_enforcement: negative norm budget");
  const int n = sys.n();
  const int m = sys.m();

  EnforcementLayout lo;
  lo.n = n;
  lo.m = m;
  lo.pattern_g = detail::resolve_pattern(spec.pattern_g, sys.G, "G");
  lo.pattern_c = detail::resolve_pattern(spec.pattern_c, sys.C, "C");
  lo.xg_offset = n * n;
  lo.xc_offset = lo.xg_offset + static_cast<int>(lo.pattern_g.size());
  lo.s_offset = lo.xc_offset + static_cast<int>(lo.pattern_c.size());
  lo.t_index = lo.s_offset + n * m;
  lo.total = lo.t_index + 1;

  EnforcementProblem ep;
  ep.layout = lo;
  ep.eps_g = spec.eps_g > 0.0 ? spec.eps_g : 1e-8 * spectral_norm(sys.G);
  ep.eps_c = spec.eps_c > 0.0 ? spec.eps_c : 1e-8 * spectral_norm(sys.C);

  BilinearProblem& bp = ep.problem;
  bp.n = lo.total;
  bp.b = VectorXd::Zero(lo.total);
  bp.b[lo.t_index] = 1.0;

  bp.blocks.push_back(detail::definiteness_block(lo, sys.G, lo.pattern_g, lo.xg_offset, ep.eps_g));
  bp.blocks.push_back(detail::definiteness_block(lo, sys.C, lo.pattern_c, lo.xc_offset, ep.eps_c));

  if (spec.norm == NormKind::Spectral) {
    if (!lo.pattern_g.empty())
      bp.blocks.push_back(detail::spectral_ball_block(lo, lo.pattern_g, lo.xg_offset, spec.r_g));
    if (!lo.pattern_c.empty())
      bp.blocks.push_back(detail::spectral_ball_block(lo, lo.pattern_c, lo.xc_offset, spec.r_c));
    // -[[t*I, S], [S', t*I]] <= 0 puts t on top of the spectral norm of S.
    BilinearBlock epi;
    epi.dim = n + m;
    for (int d = 0; d < n + m; ++d) epi.linear.push_back({lo.t_index, d, d, -1.0});
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) epi.linear.push_back({lo.idx_s(i, j), i, n + j, -1.0});
    bp.blocks.push_back(std::move(epi));
  } else {
    std::vector<int> vars;
    for (size_t k = 0; k < lo.pattern_g.size(); ++k) vars.push_back(lo.idx_xg(k));
    if (!vars.empty()) bp.soc_cs.push_back(detail::selector_cone(lo.total, vars, -1, spec.r_g));
    vars.clear();
    for (size_t k = 0; k < lo.pattern_c.size(); ++k) vars.push_back(lo.idx_xc(k));
    if (!vars.empty()) bp.soc_cs.push_back(detail::selector_cone(lo.total, vars, -1, spec.r_c));
    vars.clear();
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) vars.push_back(lo.idx_s(i, j));
    bp.soc_cs.push_back(detail::selector_cone(lo.total, vars, lo.t_index, 0.0));
  }

  // P'B1 + S = B2, one row per (i, j).
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      BilinearRow row;
      row.constant = -sys.B2(i, j);
      for (int k = 0; k < n; ++k) row.linear.push_back({lo.idx_p(k, i), sys.B1(k, j)});
      row.linear.push_back({lo.idx_s(i, j), 1.0});
      bp.eq_rows.push_back(std::move(row));
    }

  // Strict upper triangle of P'(C+X_C) - (C+X_C)'P = 0; the diagonal of a
  // skew-symmetric matrix is identically zero and would only add null rows.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      BilinearRow row;
      for (int k = 0; k < n; ++k) {
        row.linear.push_back({lo.idx_p(k, i), sys.C(k, j)});
        row.linear.push_back({lo.idx_p(k, j), -sys.C(k, i)});
      }
      for (size_t v = 0; v < lo.pattern_c.size(); ++v) {
        const auto [a, b] = lo.pattern_c[v];
        if (b == j) row.bilinear.push_back({lo.idx_p(a, i), lo.idx_xc(v), 1.0});
        if (b == i) row.bilinear.push_back({lo.idx_p(a, j), lo.idx_xc(v), -1.0});
      }
      bp.eq_rows.push_back(std::move(row));
    }

  bp.canonicalize();
  return ep;
}

// ---------------------------------------------------------------------------
// Enforcement drive: assemble, solve with the sequential method, verify.
// ---------------------------------------------------------------------------

struct EnforceOptions {
  SspOptions ssp;
  DerivativeCheckOptions check;  // build-time derivative validation, on by default
  double s_tol = -1.0;           // residual gate for certification; <0: 1e-6*(1+||B2||)
  bool certify = true;
};

struct EnforcementResult {
  SspResult result = SspResult::MaxIter;
  int iterations = 0;
  KktResidual kkt;
  MatrixXd P;
  MatrixXd X_G;
  MatrixXd X_C;
  MatrixXd S;
  double s_norm = 0.0;
  double t = 0.0;
  bool certificate_checked = false;
  PrReport certificate;
  EnforcementLayout layout;
  std::vector<SspIterationRecord> history;
  std::string message;
};

inline EnforcementResult enforce(const DescriptorSystem& sys, const EnforcementSpec& spec,
                                 const EnforceOptions& opts = {}) {
  EnforcementProblem ep = assemble_enforcement(sys, spec);
  const EnforcementLayout& lo = ep.layout;
  NlsdpProblem prob = ep.problem.to_problem(opts.check);

  // Feasible-biased start: P from least squares, perturbations zero, t above
  // the residual norm so the epigraph block begins strictly inside.
  VectorXd x0 = VectorXd::Zero(lo.total);
  const MatrixXd P0 = detail::multiplier_least_squares(sys);
  for (int c = 0; c < lo.n; ++c)
    for (int r = 0; r < lo.n; ++r) x0[lo.idx_p(r, c)] = P0(r, c);
  const MatrixXd S0 = sys.B2 - P0.transpose() * sys.B1;
  for (int j = 0; j < lo.m; ++j)
    for (int i = 0; i < lo.n; ++i) x0[lo.idx_s(i, j)] = S0(i, j);
  x0[lo.t_index] = spectral_norm(S0) + 0.1 * (1.0 + sys.B2.norm());

  // The bilinear terms always pair a multiplier variable with a perturbation
  // variable, so fixing the perturbations makes the problem affine; that set
  // drives both the trust-region ball and the corrector pass.
  SspOptions sopt = opts.ssp;
  if (sopt.trust_subset.empty() || sopt.corrector_fixed.empty()) {
    std::vector<int> xvars;
    for (size_t k = 0; k < lo.pattern_g.size(); ++k) xvars.push_back(lo.idx_xg(k));
    for (size_t k = 0; k < lo.pattern_c.size(); ++k) xvars.push_back(lo.idx_xc(k));
    if (sopt.trust_subset.empty()) sopt.trust_subset = xvars;
    if (sopt.corrector_fixed.empty()) sopt.corrector_fixed = xvars;
  }

  SspRun run = solve(prob, make_iterate(prob, std::move(x0)), sopt);

  EnforcementResult res;
  res.result = run.result;
  res.iterations = run.iterations;
  res.kkt = run.kkt;
  res.layout = lo;
  res.history = std::move(run.history);
  res.message = std::move(run.message);
  res.P = lo.extract_p(run.iterate.x);
  res.X_G = lo.extract_xg(run.iterate.x);
  res.X_C = lo.extract_xc(run.iterate.x);
  res.S = lo.extract_s(run.iterate.x);
  res.t = lo.extract_t(run.iterate.x);
  res.s_norm = spec.norm == NormKind::Spectral ? spectral_norm(res.S) : res.S.norm();

  const double s_tol = opts.s_tol >= 0.0 ? opts.s_tol : 1e-6 * (1.0 + sys.B2.norm());
  if (opts.certify && run.result == SspResult::Converged && res.s_norm <= s_tol) {
    try {
      const DescriptorSystem fixed =
          make_system(sys.G + res.X_G, sys.C + res.X_C, sys.B1, sys.B2, sys.s0);
      res.certificate = pr_lmi_check(fixed);
      res.certificate_checked = true;
    } catch (const PoleError& e) {
      res.message += std::string("; certificate skipped: ") + e.what();
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Random instance generation: a positive-real model by construction, plus a
// patterned perturbation large enough to break passivity with a recorded
// frequency witness.
// ---------------------------------------------------------------------------

struct GeneratedInstance {
  DescriptorSystem system;    // perturbed, carries a non-positive-real witness
  DescriptorSystem original;  // certified positive real
  EnforcementSpec spec;       // budgets sized to cover the injected noise
  double witness_omega = 0.0;
  double witness_eig = 0.0;
  int attempts = 0;
};

namespace detail {

inline MatrixXd tridiagonal_normal(Rng& rng, int n) {
  MatrixXd K = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    K(i, i) = rng.normal();
    if (i + 1 < n) {
      K(i + 1, i) = rng.normal();
      K(i, i + 1) = rng.normal();
    }
  }
  return K;
}

/// Symmetric shift of K + K' to minimum eigenvalue floor.
inline MatrixXd shifted_gram(const MatrixXd& K, double floor) {
  const MatrixXd A = K + K.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A, Eigen::EigenvaluesOnly);
  return A + (floor - es.eigenvalues()(0)) * MatrixXd::Identity(K.rows(), K.cols());
}

/// Uniform noise on the pattern, scaled to exact Frobenius norm (zero stays zero).
inline MatrixXd pattern_noise(Rng& rng, int n, const IndexPattern& pat, double norm) {
  MatrixXd N = MatrixXd::Zero(n, n);
  for (const auto& [r, c] : pat) N(r, c) = rng.uniform(-1.0, 1.0);
  const double f = N.norm();
  if (norm > 0.0 && f > 0.0) N *= norm / f;
  if (norm == 0.0) N.setZero();
  return N;
}

}  // namespace detail

inline GeneratedInstance generate_instance(int n, int m, std::uint64_t seed, double eps_g = 0.1,
                                           double eps_c = 0.1, int max_attempts = 50) {
  if (n < 2) throw DimensionError("generate_instance: n must be at least 2");
  if (m < 1 || m > n) throw DimensionError("generate_instance: need 1 <= m <= n");
  if (eps_g < 0.0 || eps_c < 0.0) throw DimensionError("generate_instance: negative noise norm");

  Rng rng(seed);
  // The conductance part sits close to the semidefinite boundary so noise of
  // norm eps_g can push it across; the capacitance part stays comfortably
  // definite so the G row is the one that breaks.
  const double delta_g = eps_g > 0.0 ? 0.35 * eps_g : 0.5;
  const double delta_c = 1.0 + eps_c;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    const MatrixXd G_org = detail::shifted_gram(detail::tridiagonal_normal(rng, n), delta_g);
    const MatrixXd C_org = detail::shifted_gram(detail::tridiagonal_normal(rng, n), delta_c);
    MatrixXd B1(n, m);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) B1(i, j) = rng.normal();

    DescriptorSystem original;
    try {
      original = make_system(G_org, C_org, B1, B1);
    } catch (const PoleError&) {
      continue;
    }
    if (pr_lmi_check(original).status != PrStatus::Certified) continue;

    const IndexPattern pat_g = nonzero_pattern(G_org);
    const IndexPattern pat_c = nonzero_pattern(C_org);
    const MatrixXd N_g = detail::pattern_noise(rng, n, pat_g, eps_g);
    const MatrixXd N_c = detail::pattern_noise(rng, n, pat_c, eps_c);

    DescriptorSystem perturbed;
    try {
      perturbed = make_system(G_org + N_g, C_org + N_c, B1, B1);
    } catch (const PoleError&) {
      continue;
    }

    const SampleProfile prof = pr_sample_check(perturbed, sample_frequencies(perturbed, 100));
    if (prof.poles > 0 || !(prof.worst < -1e-8)) continue;

    GeneratedInstance inst;
    inst.system = std::move(perturbed);
    inst.original = std::move(original);
    inst.spec.r_g = 1.25 * eps_g;
    inst.spec.r_c = 1.25 * eps_c;
    inst.spec.pattern_g = nonzero_pattern(inst.system.G);
    inst.spec.pattern_c = nonzero_pattern(inst.system.C);
    inst.spec.norm = NormKind::Spectral;
    inst.witness_omega = prof.worst_omega;
    inst.witness_eig = prof.worst;
    inst.attempts = attempt;
    return inst;
  }
  throw GeneratorFailed(
      "generate_instance: perturbation norms too small to break passivity within the retry "
      "budget");
}

}  // namespace sspsolve
