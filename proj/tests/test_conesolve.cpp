#include <catch2/catch_amalgamated.hpp>

#include "sspsolve/conesolve.hpp"
#include "sspsolve/rng.hpp"

using namespace sspsolve;
using detail::ConeLayout;
using detail::ScaleOp;

namespace {

SymMat random_sym(Rng& rng, int m, double scale = 1.0) {
  SymMat X(m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i <= j; ++i) X(i, j) = scale * rng.normal();
  return X;
}

MatrixXd random_dense(Rng& rng, int r, int c) {
  MatrixXd M(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) M(i, j) = rng.normal();
  return M;
}

VectorXd random_vec(Rng& rng, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// Strictly interior point of the cone described by L.
VectorXd random_interior(Rng& rng, const ConeLayout& L) {
  VectorXd u = VectorXd::Zero(L.scalar_len());
  for (int i = 0; i < L.nn; ++i) u[i] = 0.2 + std::abs(rng.normal());
  for (size_t k = 0; k < L.soc.size(); ++k) {
    const int off = L.soc_offset(static_cast<int>(k)), d = L.soc[k];
    for (int i = 1; i < d; ++i) u[off + i] = rng.normal();
    u[off] = u.segment(off + 1, d - 1).norm() + 0.3 + std::abs(rng.normal());
  }
  for (size_t k = 0; k < L.psd.size(); ++k) {
    const int off = L.psd_offset(static_cast<int>(k)), d = L.psd[k];
    MatrixXd B = random_dense(rng, d, d);
    SymMat S = SymMat::sym_part(B * B.transpose());
    for (int j = 0; j < d; ++j) S(j, j) += 0.2;
    u.segment(off, packed_size(d)) = svec(S);
  }
  return u;
}

}  // namespace

TEST_CASE("NT scaling maps both cone points to the same scaled point") {
  Rng rng(21);
  ConeLayout L;
  L.nn = 3;
  L.soc = {4, 2};
  L.psd = {3};
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd s = random_interior(rng, L), z = random_interior(rng, L);
    detail::NTScaling sc = detail::compute_scaling(L, s, z);
    REQUIRE(sc.ok);
    const VectorXd wz = detail::apply_scaling(L, sc, z, ScaleOp::W);
    const VectorXd ws = detail::apply_scaling(L, sc, s, ScaleOp::WinvT);
    const double scale = std::max(1.0, sc.lambda.norm());
    REQUIRE((wz - sc.lambda).norm() < 1e-10 * scale);
    REQUIRE((ws - sc.lambda).norm() < 1e-10 * scale);
    // Inverses really invert, transpose pairs agree on the self-adjoint blocks.
    VectorXd u = random_vec(rng, L.scalar_len());
    REQUIRE((detail::apply_scaling(L, sc, detail::apply_scaling(L, sc, u, ScaleOp::W),
                                   ScaleOp::Winv) -
             u).norm() < 1e-10 * std::max(1.0, u.norm()));
    REQUIRE((detail::apply_scaling(L, sc, detail::apply_scaling(L, sc, u, ScaleOp::WT),
                                   ScaleOp::WinvT) -
             u).norm() < 1e-10 * std::max(1.0, u.norm()));
    // <W' a, W^{-1} b> = <a, b>
    VectorXd a = random_vec(rng, L.scalar_len()), b = random_vec(rng, L.scalar_len());
    const double lhs = detail::apply_scaling(L, sc, a, ScaleOp::WT)
                           .dot(detail::apply_scaling(L, sc, b, ScaleOp::Winv));
    REQUIRE(lhs == Catch::Approx(a.dot(b)).margin(1e-9 * (1 + std::abs(lhs))));
  }
}

TEST_CASE("Jordan algebra kernels are mutually consistent") {
  Rng rng(22);
  ConeLayout L;
  L.nn = 2;
  L.soc = {3};
  L.psd = {4};
  VectorXd s = random_interior(rng, L), z = random_interior(rng, L);
  detail::NTScaling sc = detail::compute_scaling(L, s, z);
  REQUIRE(sc.ok);
  REQUIRE((detail::lambda_squared(L, sc) - detail::jordan_prod(L, sc.lambda, sc.lambda)).norm() <
          1e-11 * std::max(1.0, sc.lambda.squaredNorm()));
  VectorXd d = random_vec(rng, L.scalar_len());
  const VectorXd x = detail::jordan_div_lambda(L, sc, d);
  REQUIRE((detail::jordan_prod(L, sc.lambda, x) - d).norm() < 1e-9 * std::max(1.0, d.norm()));
  // e is the identity of the product.
  const VectorXd e = detail::cone_e(L);
  REQUIRE((detail::jordan_prod(L, e, d) - d).norm() < 1e-13 * std::max(1.0, d.norm()));
  REQUIRE(detail::min_margin(L, e) == Catch::Approx(1.0));
}

TEST_CASE("max_step_scaled finds the cone boundary") {
  Rng rng(23);
  ConeLayout L;
  L.nn = 2;
  L.soc = {3};
  L.psd = {3};
  VectorXd s = random_interior(rng, L), z = random_interior(rng, L);
  detail::NTScaling sc = detail::compute_scaling(L, s, z);
  REQUIRE(sc.ok);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd d = random_vec(rng, L.scalar_len());
    const double a = detail::max_step_scaled(L, sc, d);
    if (std::isfinite(a)) {
      REQUIRE(detail::min_margin(L, VectorXd(sc.lambda + 0.95 * a * d)) >= -1e-9);
      REQUIRE(detail::min_margin(L, VectorXd(sc.lambda + 1.05 * a * d)) <= 1e-9);
    } else {
      REQUIRE(detail::min_margin(L, VectorXd(sc.lambda + 1e3 * d)) >= -1e-9);
    }
  }
}

TEST_CASE("scalar LP with nonneg variables solves to the vertex with exact duals") {
  // min x1 + 2 x2  s.t.  x1 + x2 >= 1, x >= 0.
  ConicProgram pr;
  pr.n_nonneg = 2;
  pr.c = VectorXd(2);
  pr.c << 1.0, 2.0;
  pr.in_A = MatrixXd(1, 2);
  pr.in_A << -1.0, -1.0;
  pr.in_b = VectorXd(1);
  pr.in_b << -1.0;
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::Optimal);
  REQUIRE(sol.x[0] == Catch::Approx(1.0).margin(1e-7));
  REQUIRE(sol.x[1] == Catch::Approx(0.0).margin(1e-7));
  REQUIRE(sol.obj == Catch::Approx(1.0).margin(1e-7));
  REQUIRE(sol.ineq_dual[0] == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(sol.nonneg_dual[0] == Catch::Approx(0.0).margin(1e-6));
  REQUIRE(sol.nonneg_dual[1] == Catch::Approx(1.0).margin(1e-6));
  CertificateReport rep = check_certificate(pr, sol);
  REQUIRE(rep.max_residual < 1e-7);
}

TEST_CASE("projection onto the unit ball via a quadratic objective and one SOC") {
  // min 1/2||x||^2 - p.x  s.t. ||x|| <= 1; solution p/||p|| for ||p|| > 1.
  ConicProgram pr;
  pr.n_free = 2;
  pr.Q = MatrixXd::Identity(2, 2);
  pr.c = VectorXd(2);
  pr.c << -3.0, -4.0;
  SocConstraint ball;
  ball.F = MatrixXd::Identity(2, 2);
  ball.f = VectorXd::Zero(2);
  ball.g = VectorXd::Zero(2);
  ball.gamma = 1.0;
  pr.soc_cs.push_back(ball);
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::Optimal);
  REQUIRE(sol.x[0] == Catch::Approx(0.6).margin(1e-7));
  REQUIRE(sol.x[1] == Catch::Approx(0.8).margin(1e-7));
  REQUIRE(check_certificate(pr, sol).max_residual < 1e-7);
}

TEST_CASE("SOC variable segment with pinned head minimizes along the boundary") {
  // min c0 u0 + c1.u1  s.t.  u in SOC(3), u0 = 1; optimum u1 = -c1/||c1||.
  ConicProgram pr;
  pr.soc_dims = {3};
  pr.c = VectorXd(3);
  pr.c << 0.5, 1.0, -2.0;
  pr.eq_A = MatrixXd::Zero(1, 3);
  pr.eq_A(0, 0) = 1.0;
  pr.eq_b = VectorXd::Ones(1);
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::Optimal);
  const double nc = std::sqrt(5.0);
  REQUIRE(sol.x[0] == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(sol.x[1] == Catch::Approx(-1.0 / nc).margin(1e-7));
  REQUIRE(sol.x[2] == Catch::Approx(2.0 / nc).margin(1e-7));
  REQUIRE(sol.obj == Catch::Approx(0.5 - nc).margin(1e-7));
  REQUIRE(check_certificate(pr, sol).max_residual < 1e-7);
}

TEST_CASE("smallest upper spectral bound of a fixed symmetric matrix") {
  // min t  s.t.  X0 - t I <= 0; optimum t = max eigenvalue of X0.
  Rng rng(24);
  SymMat X0 = random_sym(rng, 5);
  ConicProgram pr;
  pr.n_free = 1;
  pr.c = VectorXd::Ones(1);
  PsdConstraint pc;
  SymMat mI = SymMat::identity(5);
  mI *= -1.0;
  pc.A = LinearMap::from_coeffs({mI});
  pc.C = X0;
  pr.psd_cs.push_back(pc);
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::Optimal);
  REQUIRE(sol.x[0] == Catch::Approx(max_eig(X0)).margin(1e-7));
  CertificateReport rep = check_certificate(pr, sol);
  REQUIRE(rep.max_residual < 1e-7);
  // Dual matrix is PSD with unit trace (a spectral measure at the top eigenvector).
  REQUIRE(sol.psd[0].dual.trace() == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("equality-constrained QP takes the direct KKT path") {
  // min 1/2||x||^2 - c.x  s.t. sum x = 1; x = c + nu
  Rng rng(25);
  const int n = 6;
  ConicProgram pr;
  pr.n_free = n;
  pr.Q = MatrixXd::Identity(n, n);
  pr.c = -random_vec(rng, n);
  pr.eq_A = MatrixXd::Ones(1, n);
  pr.eq_b = VectorXd::Ones(1);
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::Optimal);
  const double nu = (1.0 + pr.c.sum()) / n;
  for (int i = 0; i < n; ++i)
    REQUIRE(sol.x[i] == Catch::Approx(-pr.c[i] + nu).margin(1e-9));
  REQUIRE(sol.iterations == 0);
}

TEST_CASE("random strictly feasible mixed-cone QP solves with small KKT residuals") {
  Rng rng(26);
  for (int trial = 0; trial < 5; ++trial) {
    Rng tr = rng.fork(static_cast<std::uint64_t>(trial));
    ConicProgram pr;
    pr.n_free = 3;
    pr.n_nonneg = 3;
    pr.soc_dims = {3};
    const int n = pr.num_vars();
    MatrixXd B = random_dense(tr, n, n);
    pr.Q = B * B.transpose() + 0.5 * MatrixXd::Identity(n, n);
    pr.c = random_vec(tr, n);

    // Interior point the constraints are built around.
    VectorXd x0 = random_vec(tr, n);
    for (int i = 0; i < pr.n_nonneg; ++i) x0[pr.nonneg_offset() + i] = 0.5 + tr.uniform();
    const int so = pr.soc_seg_offset(0);
    x0[so] = x0.segment(so + 1, 2).norm() + 0.5 + tr.uniform();

    pr.eq_A = random_dense(tr, 2, n);
    pr.eq_b = pr.eq_A * x0;
    pr.in_A = random_dense(tr, 3, n);
    pr.in_b = pr.in_A * x0 + VectorXd::Constant(3, 0.7);
    SocConstraint scst;
    scst.F = random_dense(tr, 3, n);
    scst.f = random_vec(tr, 3);
    scst.g = random_vec(tr, n);
    scst.gamma = (scst.F * x0 + scst.f).norm() - scst.g.dot(x0) + 0.9;
    pr.soc_cs.push_back(scst);
    PsdConstraint pc;
    std::vector<SymMat> coeffs;
    for (int i = 0; i < n; ++i) coeffs.push_back(random_sym(tr, 4, 0.6));
    pc.A = LinearMap::from_coeffs(coeffs);
    MatrixXd W = random_dense(tr, 4, 4);
    SymMat Spos = SymMat::sym_part(W * W.transpose());
    for (int j = 0; j < 4; ++j) Spos(j, j) += 0.4;
    pc.C = (SymMat(4) - pc.A.apply(x0)) - Spos;
    pr.psd_cs.push_back(pc);

    ConicSolution sol = solve(pr);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CertificateReport rep = check_certificate(pr, sol);
    REQUIRE(rep.max_residual < 1e-6);
    REQUIRE(rep.dual_obj <= rep.primal_obj + 1e-6);
    // Symmetrized PSD complementarity scales like sqrt(|Y||S| gap) near the
    // central path; a sign or scaling bug would make it order |Y||S| instead.
    const double ys =
        std::max(1.0, sol.psd[0].dual.frob_norm() * sol.psd[0].slack.frob_norm());
    REQUIRE(rep.psd[0].comp_sym < 10.0 * std::sqrt(ys * std::max(sol.gap, 1e-16)));
    // Duality measure decreases monotonically along the run.
    for (size_t k = 1; k < sol.history.size(); ++k)
      REQUIRE(sol.history[k].mu < sol.history[k - 1].mu);
  }
}

TEST_CASE("solution is invariant under uniform data rescaling") {
  auto build = [](double scale) {
    ConicProgram pr;
    pr.n_nonneg = 2;
    pr.c = VectorXd(2);
    pr.c << scale * 1.0, scale * 2.0;
    pr.in_A = MatrixXd(1, 2);
    pr.in_A << -scale, -scale;
    pr.in_b = VectorXd(1);
    pr.in_b << -scale;
    return pr;
  };
  ConicSolution a = solve(build(1.0));
  ConicSolution b = solve(build(1e3));
  REQUIRE(a.status == SolveStatus::Optimal);
  REQUIRE(b.status == SolveStatus::Optimal);
  REQUIRE((a.x - b.x).norm() < 1e-6);
}

TEST_CASE("primal infeasible LP yields a normalized Farkas certificate") {
  // x <= 0 and x >= 1 cannot hold together.
  ConicProgram pr;
  pr.n_free = 1;
  pr.c = VectorXd::Zero(1);
  pr.in_A = MatrixXd(2, 1);
  pr.in_A << 1.0, -1.0;
  pr.in_b = VectorXd(2);
  pr.in_b << 0.0, -1.0;
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
  REQUIRE(sol.cert_z.size() == 2);
  REQUIRE(sol.cert_z.minCoeff() >= -1e-9);
  REQUIRE((pr.in_A.transpose() * sol.cert_z).norm() < 1e-6);
  REQUIRE(pr.in_b.dot(sol.cert_z) == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("unbounded LP is flagged as dual infeasible with an improving ray") {
  ConicProgram pr;
  pr.n_nonneg = 1;
  pr.c = VectorXd(1);
  pr.c << -1.0;
  ConicSolution sol = solve(pr);
  REQUIRE(sol.status == SolveStatus::DualInfeasible);
  REQUIRE(sol.cert_ray.size() == 1);
  REQUIRE(sol.cert_ray[0] > 0.0);
  REQUIRE(pr.c.dot(sol.cert_ray) < 0.0);
}

TEST_CASE("slater margin of a box is half its width") {
  // -1 <= x <= 1: the deepest point is x = 0 with margin 1.
  ConicProgram pr;
  pr.n_free = 1;
  pr.in_A = MatrixXd(2, 1);
  pr.in_A << 1.0, -1.0;
  pr.in_b = VectorXd(2);
  pr.in_b << 1.0, 1.0;
  SlaterReport rep = detect_slater(pr);
  REQUIRE(rep.status == SolveStatus::Optimal);
  REQUIRE_FALSE(rep.capped);
  REQUIRE(rep.margin == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(rep.witness[0] == Catch::Approx(0.0).margin(1e-5));
}

TEST_CASE("slater margin reports infeasible systems and caps unbounded ones") {
  ConicProgram infeas;
  infeas.n_free = 1;
  infeas.in_A = MatrixXd(2, 1);
  infeas.in_A << 1.0, -1.0;
  infeas.in_b = VectorXd(2);
  infeas.in_b << 0.0, -1.0;
  // The shifted system is still feasible for negative t, so the margin comes
  // back negative: depth of the infeasibility, not a hard failure.
  SlaterReport r1 = detect_slater(infeas);
  REQUIRE(r1.status == SolveStatus::Optimal);
  REQUIRE(r1.margin == Catch::Approx(-0.5).margin(1e-6));

  ConicProgram open;
  open.n_nonneg = 1;
  SlaterReport r2 = detect_slater(open, 1e4);
  REQUIRE(r2.status == SolveStatus::Optimal);
  REQUIRE(r2.capped);
  REQUIRE(r2.margin == Catch::Approx(1e4).epsilon(1e-4));
}

TEST_CASE("slater margin of a PSD constraint is the eigenvalue gap") {
  // X0 + x K - t I <= 0 with x scalar: margin = -max_eig(X0 + x* K).
  Rng rng(27);
  SymMat K = random_sym(rng, 4, 0.3);
  SymMat X0 = random_sym(rng, 4, 0.3);
  for (int j = 0; j < 4; ++j) X0(j, j) -= 2.0;  // comfortably negative definite
  ConicProgram pr;
  pr.n_free = 1;
  PsdConstraint pc;
  pc.A = LinearMap::from_coeffs({K});
  pc.C = X0;
  pr.psd_cs.push_back(pc);
  // Keep x bounded so the margin maximum is attained.
  pr.in_A = MatrixXd(2, 1);
  pr.in_A << 1.0, -1.0;
  pr.in_b = VectorXd::Ones(2);
  SlaterReport rep = detect_slater(pr);
  REQUIRE(rep.status == SolveStatus::Optimal);
  REQUIRE(rep.margin > 0.0);
  SymMat at = pc.A.apply(rep.witness) + X0;
  REQUIRE(-max_eig(at) >= rep.margin - 1e-5);
}

TEST_CASE("program validation catches shape and definiteness errors") {
  ConicProgram pr;
  pr.n_free = 2;
  pr.c = VectorXd::Zero(3);
  REQUIRE_THROWS_AS(pr.validate(), DimensionError);
  pr.c = VectorXd::Zero(2);
  pr.Q = MatrixXd(2, 2);
  pr.Q << 1.0, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(pr.validate(), DimensionError);
  pr.Q = MatrixXd::Identity(2, 2);
  REQUIRE_NOTHROW(pr.validate());
  pr.eq_A = MatrixXd::Zero(1, 3);
  pr.eq_b = VectorXd::Zero(1);
  REQUIRE_THROWS_AS(pr.validate(), DimensionError);
}
