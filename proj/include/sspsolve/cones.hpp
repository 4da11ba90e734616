#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "symmat.hpp"

namespace sspsolve::detail {

/** Block structure of the slack/dual vectors inside the interior-point
 *  solver: [nonneg | second-order blocks | PSD blocks in svec]. */
struct ConeLayout {
  int nn = 0;
  std::vector<int> soc;
  std::vector<int> psd;

  int scalar_len() const {
    int t = nn;
    for (int d : soc) t += d;
    for (int m : psd) t += packed_size(m);
    return t;
  }
  /// Barrier degree: mu = <s, z> / degree.
  int degree() const {
    int t = nn + static_cast<int>(soc.size());
    for (int m : psd) t += m;
    return t;
  }
  int soc_offset(int k) const {
    int off = nn;
    for (int i = 0; i < k; ++i) off += soc[static_cast<size_t>(i)];
    return off;
  }
  int psd_offset(int k) const {
    int off = nn;
    for (int d : soc) off += d;
    for (int i = 0; i < k; ++i) off += packed_size(psd[static_cast<size_t>(i)]);
    return off;
  }
};

/// Identity element of the cone product (1 on nonneg, (1,0,..) per SOC,
/// svec(I) per PSD block).
inline VectorXd cone_e(const ConeLayout& L) {
  VectorXd e = VectorXd::Zero(L.scalar_len());
  e.head(L.nn).setOnes();
  for (size_t k = 0; k < L.soc.size(); ++k) e[L.soc_offset(static_cast<int>(k))] = 1.0;
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k));
    for (int j = 0; j < L.psd[k]; ++j) e[off + packed_index(j, j)] = 1.0;
  }
  return e;
}

/// Minimum interior margin over all blocks: distance of u to the cone
/// boundary (negative when u is outside the cone).
inline double min_margin(const ConeLayout& L, const VectorXd& u) {
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < L.nn; ++i) m = std::min(m, u[i]);
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    m = std::min(m, u[off] - u.segment(off + 1, d - 1).norm());
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    m = std::min(m, min_eig(smat(d, u.segment(off, packed_size(d)))));
  }
  return m;
}

/// Shift u into the strict interior by a multiple of e when it is on or near
/// the boundary (used only to seed the interior-point iteration).
inline void shift_into_cone(const ConeLayout& L, VectorXd& u) {
  if (L.scalar_len() == 0) return;
  const double viol = -min_margin(L, u);
  if (viol >= -1e-8 * std::max(1.0, u.norm())) {
    VectorXd e = cone_e(L);
    u += (1.0 + std::max(viol, 0.0)) * e;
  }
}

/** Nesterov-Todd scaling computed from a strictly interior pair (s, z).
 *
 *  The scaled point lambda satisfies lambda = W(z) = W^{-T}(s).  For PSD
 *  blocks W acts by congruence: W(Z) = R^T Z R, adjoint W^T(U) = R U R^T.
 */
struct NTScaling {
  bool ok = false;
  VectorXd w;                     // nonneg: w_i = sqrt(s_i / z_i)
  std::vector<double> beta;       // per SOC block
  std::vector<VectorXd> v;        // per SOC block, v^T J v = 1
  std::vector<MatrixXd> R, Rinv;  // per PSD block
  std::vector<VectorXd> sigma;    // per PSD block: lambda eigenvalues
  VectorXd lambda;                // scaled point, packed
};

inline NTScaling compute_scaling(const ConeLayout& L, const VectorXd& s, const VectorXd& z) {
  NTScaling sc;
  sc.lambda = VectorXd::Zero(L.scalar_len());
  sc.w = VectorXd::Zero(L.nn);
  for (int i = 0; i < L.nn; ++i) {
    if (s[i] <= 0.0 || z[i] <= 0.0) return sc;
    sc.w[i] = std::sqrt(s[i] / z[i]);
    sc.lambda[i] = std::sqrt(s[i] * z[i]);
  }
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    auto sb = s.segment(off, d);
    auto zb = z.segment(off, d);
    const double s_res = sb[0] * sb[0] - sb.tail(d - 1).squaredNorm();
    const double z_res = zb[0] * zb[0] - zb.tail(d - 1).squaredNorm();
    if (s_res <= 0.0 || z_res <= 0.0 || sb[0] <= 0.0 || zb[0] <= 0.0) return sc;
    const double rs = std::sqrt(s_res), rz = std::sqrt(z_res);
    VectorXd sbar = sb / rs, zbar = zb / rz;
    const double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
    if (!(gamma > 0.0)) return sc;
    // J-normalized direction of the scaling point w: v = (sbar + J zbar)/(2 gamma),
    // then the Jordan square root of v (half-angle step), since
    // W = Q(w^{1/2}) = beta (2 vhat vhat' - J) reflects about w^{1/2}, not w.
    VectorXd vk(d);
    vk[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
    vk.tail(d - 1) = (sbar.tail(d - 1) - zbar.tail(d - 1)) / (2.0 * gamma);
    VectorXd vhat(d);
    vhat[0] = std::sqrt(0.5 * (vk[0] + 1.0));
    vhat.tail(d - 1) = vk.tail(d - 1) / (2.0 * vhat[0]);
    sc.beta.push_back(std::sqrt(rs / rz));
    sc.v.push_back(vhat);
    // lambda = sqrt(rs * rz) * (gamma; lbar1), lbar1 from the scaled means
    VectorXd lam(d);
    lam[0] = gamma;
    // lambda_1 = ((gamma + zbar0) sbar1 + (gamma + sbar0) zbar1) / (sbar0 + zbar0 + 2 gamma)
    lam.tail(d - 1) = ((gamma + zbar[0]) * sbar.tail(d - 1) + (gamma + sbar[0]) * zbar.tail(d - 1)) /
                      (sbar[0] + zbar[0] + 2.0 * gamma);
    sc.lambda.segment(off, d) = std::sqrt(rs * rz) * lam;
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    MatrixXd S = smat(d, s.segment(off, packed_size(d))).dense();
    MatrixXd Z = smat(d, z.segment(off, packed_size(d))).dense();
    Eigen::LLT<MatrixXd> lltS(S), lltZ(Z);
    if (lltS.info() != Eigen::Success || lltZ.info() != Eigen::Success) return sc;
    MatrixXd Ls = lltS.matrixL(), Lz = lltZ.matrixL();
    Eigen::JacobiSVD<MatrixXd> svd(Lz.transpose() * Ls, Eigen::ComputeFullU | Eigen::ComputeFullV);
    VectorXd sig = svd.singularValues();
    if (sig.minCoeff() <= 0.0) return sc;
    VectorXd sig_isqrt = sig.cwiseSqrt().cwiseInverse();
    MatrixXd Rk = Ls * svd.matrixV() * sig_isqrt.asDiagonal();
    // R^{-1} = sqrt(Sigma) V' Ls^{-1}
    MatrixXd LsInv = Ls.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(d, d));
    MatrixXd Rinvk = sig.cwiseSqrt().asDiagonal() * svd.matrixV().transpose() * LsInv;
    sc.R.push_back(Rk);
    sc.Rinv.push_back(Rinvk);
    sc.sigma.push_back(sig);
    SymMat lam(d);
    for (int j = 0; j < d; ++j) lam(j, j) = sig[j];
    sc.lambda.segment(off, packed_size(d)) = svec(lam);
  }
  sc.ok = true;
  return sc;
}

enum class ScaleOp { W, WT, Winv, WinvT };

/// Apply the NT scaling (or its transpose/inverse) blockwise to a packed
/// vector.  W is symmetric on nonneg and SOC blocks; on PSD blocks the four
/// variants are the congruences R' U R, R U R', R^{-T} U R^{-1}, R^{-1} U R^{-T}.
inline VectorXd apply_scaling(const ConeLayout& L, const NTScaling& sc, const VectorXd& u, ScaleOp op) {
  VectorXd r(L.scalar_len());
  for (int i = 0; i < L.nn; ++i) {
    const double w = sc.w[i];
    r[i] = (op == ScaleOp::W || op == ScaleOp::WT) ? w * u[i] : u[i] / w;
  }
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    auto ub = u.segment(off, d);
    const VectorXd& vk = sc.v[k];
    const bool fwd = (op == ScaleOp::W || op == ScaleOp::WT);
    // W = beta (2 v v' - J); W^{-1} = beta^{-1} (2 (Jv)(Jv)' - J)
    VectorXd a = vk;
    if (!fwd) a.tail(d - 1) = -a.tail(d - 1);
    const double va = 2.0 * (a[0] * ub[0] + a.tail(d - 1).dot(ub.tail(d - 1)));
    VectorXd out = va * a;
    out[0] -= ub[0];
    out.tail(d - 1) += ub.tail(d - 1);
    r.segment(off, d) = (fwd ? sc.beta[k] : 1.0 / sc.beta[k]) * out;
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    MatrixXd U = smat(d, u.segment(off, packed_size(d))).dense();
    const MatrixXd& R = sc.R[k];
    const MatrixXd& Ri = sc.Rinv[k];
    MatrixXd out;
    switch (op) {
      case ScaleOp::W: out = R.transpose() * U * R; break;
      case ScaleOp::WT: out = R * U * R.transpose(); break;
      case ScaleOp::Winv: out = Ri.transpose() * U * Ri; break;
      case ScaleOp::WinvT: out = Ri * U * Ri.transpose(); break;
    }
    r.segment(off, packed_size(d)) = svec(SymMat::sym_part(out));
  }
  return r;
}

/// Jordan product u o v blockwise (componentwise / arrow / symmetrized matrix
/// product).
inline VectorXd jordan_prod(const ConeLayout& L, const VectorXd& u, const VectorXd& v) {
  VectorXd r(L.scalar_len());
  for (int i = 0; i < L.nn; ++i) r[i] = u[i] * v[i];
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    auto ub = u.segment(off, d);
    auto vb = v.segment(off, d);
    r[off] = ub.dot(vb);
    r.segment(off + 1, d - 1) = ub[0] * vb.tail(d - 1) + vb[0] * ub.tail(d - 1);
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    MatrixXd U = smat(d, u.segment(off, packed_size(d))).dense();
    MatrixXd V = smat(d, v.segment(off, packed_size(d))).dense();
    MatrixXd P = 0.5 * (U * V + V * U);
    r.segment(off, packed_size(d)) = svec(SymMat::sym_part(P));
  }
  return r;
}

/// Solve lambda o x = d for x, where lambda is the scaled point of sc
/// (diagonal on PSD blocks, so the Lyapunov solve is entrywise).
inline VectorXd jordan_div_lambda(const ConeLayout& L, const NTScaling& sc, const VectorXd& d) {
  const VectorXd& lam = sc.lambda;
  VectorXd r(L.scalar_len());
  for (int i = 0; i < L.nn; ++i) r[i] = d[i] / lam[i];
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), dd = L.soc[k];
    auto lb = lam.segment(off, dd);
    auto db = d.segment(off, dd);
    const double a = lb[0];
    const double det = a * a - lb.tail(dd - 1).squaredNorm();
    const double x0 = (a * db[0] - lb.tail(dd - 1).dot(db.tail(dd - 1))) / det;
    r[off] = x0;
    r.segment(off + 1, dd - 1) = (db.tail(dd - 1) - x0 * lb.tail(dd - 1)) / a;
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), dd = L.psd[k];
    const VectorXd& sig = sc.sigma[k];
    MatrixXd D = smat(dd, d.segment(off, packed_size(dd))).dense();
    MatrixXd X(dd, dd);
    for (int j = 0; j < dd; ++j)
      for (int i = 0; i < dd; ++i) X(i, j) = 2.0 * D(i, j) / (sig[i] + sig[j]);
    r.segment(off, packed_size(dd)) = svec(SymMat::sym_part(X));
  }
  return r;
}

/// lambda o lambda for the scaled point.
inline VectorXd lambda_squared(const ConeLayout& L, const NTScaling& sc) {
  const VectorXd& lam = sc.lambda;
  VectorXd r = VectorXd::Zero(L.scalar_len());
  for (int i = 0; i < L.nn; ++i) r[i] = lam[i] * lam[i];
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    auto lb = lam.segment(off, d);
    r[off] = lb.squaredNorm();
    r.segment(off + 1, d - 1) = 2.0 * lb[0] * lb.tail(d - 1);
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    const VectorXd& sig = sc.sigma[k];
    SymMat lam2(d);
    for (int j = 0; j < d; ++j) lam2(j, j) = sig[j] * sig[j];
    r.segment(off, packed_size(d)) = svec(lam2);
  }
  return r;
}

/// Largest alpha such that lambda + alpha * du stays in the cone (du in
/// scaled coordinates); +inf when the ray never leaves.
inline double max_step_scaled(const ConeLayout& L, const NTScaling& sc, const VectorXd& du) {
  const VectorXd& lam = sc.lambda;
  double alpha = std::numeric_limits<double>::infinity();
  for (int i = 0; i < L.nn; ++i)
    if (du[i] < 0.0) alpha = std::min(alpha, -lam[i] / du[i]);
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    auto lb = lam.segment(off, d);
    auto db = du.segment(off, d);
    // boundary: (l0 + a d0)^2 = ||l1 + a d1||^2 with head nonnegative
    const double A = db[0] * db[0] - db.tail(d - 1).squaredNorm();
    const double B = 2.0 * (lb[0] * db[0] - lb.tail(d - 1).dot(db.tail(d - 1)));
    const double C = lb[0] * lb[0] - lb.tail(d - 1).squaredNorm();
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double a) {
      if (a > 0.0 && lb[0] + a * db[0] >= -1e-14 * std::abs(lb[0])) best = std::min(best, a);
    };
    if (std::abs(A) < 1e-300) {
      if (B < 0.0) consider(-C / B);
    } else {
      const double disc = B * B - 4.0 * A * C;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        // stable quadratic roots
        const double q = -0.5 * (B + (B >= 0.0 ? sq : -sq));
        consider(q / A);
        if (q != 0.0) consider(C / q);
      }
    }
    if (db[0] < 0.0) consider(-lb[0] / db[0]);
    alpha = std::min(alpha, best);
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    const VectorXd& sig = sc.sigma[k];
    MatrixXd M = smat(d, du.segment(off, packed_size(d))).dense();
    VectorXd isq = sig.cwiseSqrt().cwiseInverse();
    MatrixXd T = isq.asDiagonal() * M * isq.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (T + T.transpose()), Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues()(0);
    if (lmin < 0.0) alpha = std::min(alpha, -1.0 / lmin);
  }
  return alpha;
}

}  // namespace sspsolve::detail
