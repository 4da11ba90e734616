#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <limits>

#include "sspsolve/rng.hpp"
#include "sspsolve/ssp.hpp"

using namespace sspsolve;

namespace {

// min -x0 - 0.1 x1  s.t.  x0^2 + x1^2 <= 1; solution (1, 0.1)/sqrt(1.01)
// with multiplier Y = sqrt(1.01)/2, strictly complementary.
BilinearProblem circle_problem() {
  BilinearProblem p;
  p.n = 2;
  p.b = VectorXd(2);
  p.b << -1.0, -0.1;
  BilinearBlock b;
  b.dim = 1;
  b.constant = {{0, 0, -1.0}};
  b.bilinear = {{0, 0, 0, 0, 1.0}, {1, 1, 0, 0, 1.0}};
  p.blocks.push_back(b);
  return p;
}

VectorXd circle_solution() {
  VectorXd xs(2);
  xs << 1.0, 0.1;
  return xs / std::sqrt(1.01);
}

// min x0 + x1  s.t.  diag(1 - x0, 2 - x1) <= 0; solution (1, 2), Y = I.
BilinearProblem diag_problem() {
  BilinearProblem p;
  p.n = 2;
  p.b = VectorXd(2);
  p.b << 1.0, 1.0;
  BilinearBlock b;
  b.dim = 2;
  b.constant = {{0, 0, 1.0}, {1, 1, 2.0}};
  b.linear = {{0, 0, 0, -1.0}, {1, 1, 1, -1.0}};
  p.blocks.push_back(b);
  return p;
}

// min s  s.t.  p (1 + xi) = 2, |p - 2| <= s, |xi - 1| <= s.
// Fixing xi makes the rest affine, the corrector's designed use.
// Solution p = sqrt(2), xi = sqrt(2) - 1, s = 2 - sqrt(2).
BilinearProblem hyperbola_problem() {
  BilinearProblem p;
  p.n = 3;
  p.b = VectorXd::Zero(3);
  p.b[2] = 1.0;
  BilinearRow eq;
  eq.constant = -2.0;
  eq.linear = {{0, 1.0}};
  eq.bilinear = {{0, 1, 1.0}};
  p.eq_rows.push_back(eq);
  SocConstraint s1;
  s1.F = MatrixXd::Zero(1, 3);
  s1.F(0, 0) = 1.0;
  s1.f = VectorXd::Constant(1, -2.0);
  s1.g = VectorXd::Zero(3);
  s1.g[2] = 1.0;
  p.soc_cs.push_back(s1);
  SocConstraint s2;
  s2.F = MatrixXd::Zero(1, 3);
  s2.F(0, 1) = 1.0;
  s2.f = VectorXd::Constant(1, -1.0);
  s2.g = VectorXd::Zero(3);
  s2.g[2] = 1.0;
  p.soc_cs.push_back(s2);
  return p;
}

SymMat diag2(double a, double b) {
  SymMat m(2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST_CASE("psd_project clamps eigenvalues at the floor") {
  const SymMat a = psd_project(diag2(2.0, -1.0), 0.0);
  CHECK(a(0, 0) == Catch::Approx(2.0).margin(1e-14));
  CHECK(a(1, 1) == Catch::Approx(0.0).margin(1e-14));
  CHECK(a(0, 1) == Catch::Approx(0.0).margin(1e-14));

  const SymMat b = psd_project(diag2(-1.0, 3.0), 1e-6);
  CHECK(b(0, 0) == Catch::Approx(1e-6).margin(1e-18));
  CHECK(b(1, 1) == Catch::Approx(3.0).margin(1e-14));

  // PSD input with floor below the spectrum is untouched
  SymMat c(2);
  c(0, 0) = 1.0;
  c(0, 1) = 0.3;
  c(1, 1) = 2.0;
  const SymMat cp = psd_project(c, 1e-8);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(cp(i, j) == Catch::Approx(c(i, j)).margin(1e-13));

  // random matrices: result respects the floor and projection is idempotent
  Rng rng(411);
  for (int trial = 0; trial < 20; ++trial) {
    SymMat h(4);
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i <= j; ++i) h(i, j) = rng.normal();
    const double floor_value = trial % 2 == 0 ? 0.0 : 1e-6;
    const SymMat hp = psd_project(h, floor_value);
    CHECK(min_eig(hp) >= floor_value - 1e-12);
    const SymMat hpp = psd_project(hp, floor_value);
    double diff = 0.0;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i <= j; ++i) diff = std::max(diff, std::abs(hpp(i, j) - hp(i, j)));
    CHECK(diff <= 1e-12);
  }
}

TEST_CASE("bfgs_update secant and damping") {
  Rng rng(2024);
  SymMat H(3);
  H(0, 0) = 2.0;
  H(1, 1) = 1.0;
  H(2, 2) = 0.5;
  H(0, 1) = 0.2;

  SECTION("consistent pair is a fixed point") {
    VectorXd s(3);
    s << 0.3, -0.1, 0.7;
    const VectorXd y = H.dense() * s;
    const BfgsUpdate up = bfgs_update(H, s, y);
    CHECK(up.updated);
    CHECK(up.damping == Catch::Approx(1.0));
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i <= j; ++i) CHECK(up.H(i, j) == Catch::Approx(H(i, j)).margin(1e-12));
  }

  SECTION("curvature-respecting pair: raw secant holds") {
    for (int trial = 0; trial < 10; ++trial) {
      VectorXd s(3), y(3);
      for (int i = 0; i < 3; ++i) {
        s[i] = rng.normal();
        y[i] = rng.normal();
      }
      const double sHs = s.dot(H.dense() * s);
      if (s.dot(y) < 0.25 * sHs) y += ((0.25 * sHs - s.dot(y)) / s.squaredNorm() + 0.1) * s;
      const BfgsUpdate up = bfgs_update(H, s, y);
      REQUIRE(up.updated);
      CHECK(up.damping == Catch::Approx(1.0));
      const VectorXd r = up.H.dense() * s - y;
      CHECK(r.norm() <= 1e-10 * (1.0 + y.norm()));
      CHECK(min_eig(up.H) >= -1e-10 * std::max(1.0, up.H.frob_norm()));
    }
  }

  SECTION("negative curvature is damped to a psd result") {
    VectorXd s(3);
    s << 1.0, 0.0, 0.0;
    VectorXd y(3);
    y << -3.0, 0.5, 0.0;  // s.y < 0
    const BfgsUpdate up = bfgs_update(H, s, y);
    REQUIRE(up.updated);
    CHECK(up.damping < 1.0);
    CHECK(up.damping > 0.0);
    // secant holds for the damped pair
    const VectorXd yt = up.damping * y + (1.0 - up.damping) * H.dense() * s;
    CHECK((up.H.dense() * s - yt).norm() <= 1e-10 * (1.0 + yt.norm()));
    CHECK(s.dot(yt) >= 0.2 * s.dot(H.dense() * s) - 1e-12);
    CHECK(min_eig(up.H) >= -1e-12);
  }

  SECTION("zero step is a no-op") {
    const BfgsUpdate up = bfgs_update(H, VectorXd::Zero(3), VectorXd::Ones(3));
    CHECK_FALSE(up.updated);
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i <= j; ++i) CHECK(up.H(i, j) == H(i, j));
  }
}

TEST_CASE("soc_cone_distance cases") {
  VectorXd inside(3);
  inside << 2.0, 1.0, 0.5;
  CHECK(soc_cone_distance(inside) == 0.0);

  VectorXd boundary(2);
  boundary << 1.0, 1.0;
  CHECK(soc_cone_distance(boundary) == 0.0);

  VectorXd head_zero(3);
  head_zero << 0.0, 3.0, 4.0;
  CHECK(soc_cone_distance(head_zero) == Catch::Approx(5.0 / std::sqrt(2.0)));

  VectorXd polar(2);
  polar << -1.0, 0.0;  // in the polar of the cone: nearest point is the origin
  CHECK(soc_cone_distance(polar) == Catch::Approx(1.0));

  VectorXd tilted(2);
  tilted << 1.0, 2.0;
  CHECK(soc_cone_distance(tilted) == Catch::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("constraint_violation composes the slack-optimal residuals") {
  const NlsdpProblem prob = hyperbola_problem().to_problem();
  VectorXd x(3);
  x << 3.0, 1.0, 0.25;
  // eq: 3(1+1) - 2 = 4;  soc1: (t,u) = (0.25, 1.0);  soc2: (0.25, 0.0) inside
  const double soc1 = (1.0 - 0.25) / std::sqrt(2.0);
  const double expect = std::sqrt(16.0 + soc1 * soc1);
  CHECK(constraint_violation(prob, x) == Catch::Approx(expect).epsilon(1e-12));

  // feasible point has zero violation
  VectorXd xf(3);
  xf << std::sqrt(2.0), std::sqrt(2.0) - 1.0, 2.0 - std::sqrt(2.0);
  CHECK(constraint_violation(prob, xf) <= 1e-12);

  // merit stacks the weighted violation on the objective
  CHECK(merit_value(prob, x, 7.0) == Catch::Approx(x[2] + 7.0 * expect).epsilon(1e-12));
}

TEST_CASE("build_subproblem structure and model consistency") {
  const NlsdpProblem prob = circle_problem().to_problem();
  VectorXd x(2);
  x << 0.6, 0.3;
  SymMat H(2);
  H(0, 0) = 2.0;
  H(1, 1) = 2.0;

  SECTION("finite radius appends the ball as the last soc row") {
    const ConicProgram pr = build_subproblem(prob, x, H, 0.7);
    REQUIRE(pr.soc_cs.size() == 1);
    const SocConstraint& ball = pr.soc_cs.back();
    CHECK(ball.gamma == Catch::Approx(0.7));
    CHECK(ball.F.isApprox(MatrixXd::Identity(2, 2)));
    CHECK(ball.g.norm() == 0.0);
    CHECK(pr.Q.isApprox(H.dense()));
    CHECK(pr.c.isApprox(prob.b));
  }

  SECTION("subset restricts the ball rows") {
    const ConicProgram pr = build_subproblem(prob, x, H, 0.7, {1});
    REQUIRE(pr.soc_cs.size() == 1);
    const SocConstraint& ball = pr.soc_cs.back();
    REQUIRE(ball.F.rows() == 1);
    CHECK(ball.F(0, 0) == 0.0);
    CHECK(ball.F(0, 1) == 1.0);
  }

  SECTION("infinite radius omits the ball") {
    const ConicProgram pr =
        build_subproblem(prob, x, H, std::numeric_limits<double>::infinity());
    CHECK(pr.soc_cs.empty());
  }

  SECTION("subproblem solution satisfies the linearized constraints") {
    const QuadraticModel qm = quadratic_model(prob, x, H);
    const ConicSolution sol = solve(build_subproblem(qm, 1.0));
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(model_violation(qm, sol.x) <= 1e-7);
  }
}

TEST_CASE("trust_region_step ratio thresholds") {
  const TrustUpdate grow = trust_region_step(0.9, 1.0, 2.0);
  CHECK(grow.accept);
  CHECK(grow.radius == Catch::Approx(3.0));

  const TrustUpdate keep = trust_region_step(0.5, 1.0, 2.0);
  CHECK(keep.accept);
  CHECK(keep.radius == Catch::Approx(2.0));

  const TrustUpdate shrink = trust_region_step(0.05, 1.0, 2.0);
  CHECK_FALSE(shrink.accept);
  CHECK(shrink.radius == Catch::Approx(1.0));

  const TrustUpdate degenerate = trust_region_step(1.0, 0.0, 2.0);
  CHECK_FALSE(degenerate.accept);
  CHECK(degenerate.radius == Catch::Approx(1.0));
}

TEST_CASE("penalty_step walkthrough on a scalar problem") {
  // min x  s.t.  1 - x <= 0 (as a 1x1 matrix block), from the infeasible x = 0
  BilinearProblem bp;
  bp.n = 1;
  bp.b = VectorXd::Constant(1, 1.0);
  BilinearBlock b;
  b.dim = 1;
  b.constant = {{0, 0, 1.0}};
  b.linear = {{0, 0, 0, -1.0}};
  bp.blocks.push_back(b);
  const NlsdpProblem prob = bp.to_problem();
  const StandardForm sf = lower_to_standard_form(prob);

  const VectorXd z = sf.initial_point(VectorXd::Zero(1));
  REQUIRE(sf.residual(z).norm() == Catch::Approx(1.0));
  const double M = 5.0;

  SECTION("exact full step: affine residual vanishes, lambda = 1") {
    // dx = 1 solves the linearization; slack stays zero
    VectorXd z_new = z;
    z_new[0] = 1.0;
    const VectorXd dz = z_new - z;
    const PenaltyOutcome po = penalty_step(sf, z, dz, M);
    REQUIRE(po.accepted);
    CHECK(po.lambda == Catch::Approx(1.0));
    CHECK(po.predicted == Catch::Approx(M - 1.0));  // merit 5 -> objective 1
    CHECK(po.merit == Catch::Approx(1.0));
    CHECK(sf.x_part(po.z)[0] == Catch::Approx(1.0));
  }

  SECTION("zero direction has no predicted decrease") {
    const PenaltyOutcome po = penalty_step(sf, z, VectorXd::Zero(z.size()), M);
    CHECK_FALSE(po.accepted);
    CHECK(po.predicted <= 0.0);
  }
}

TEST_CASE("corrector_step re-solves the affine variables") {
  const NlsdpProblem prob = hyperbola_problem().to_problem();

  SECTION("restores feasibility from either side at fixed xi") {
    for (double p0 : {3.0, 1.0}) {
      VectorXd x(3);
      x << p0, std::sqrt(2.0) - 1.0, 1.5;
      const CorrectorOutcome co = corrector_step(prob, x, {1}, 20.0);
      REQUIRE(co.applied);
      CHECK(co.x[1] == x[1]);  // fixed coordinate untouched
      CHECK(constraint_violation(prob, co.x) <= 1e-7);
      CHECK(co.merit_change <= 1e-10);
    }
  }

  SECTION("infeasible restriction is skipped") {
    // x0 x1 = 1 with x0 fixed at zero has no solution in x1
    BilinearProblem bad;
    bad.n = 2;
    bad.b = VectorXd::Ones(2);
    BilinearRow eq;
    eq.constant = -1.0;
    eq.bilinear = {{0, 1, 1.0}};
    bad.eq_rows.push_back(eq);
    BilinearBlock always;  // satisfied block keeps the cone part non-empty
    always.dim = 1;
    always.constant = {{0, 0, -1.0}};
    bad.blocks.push_back(always);
    const NlsdpProblem bprob = bad.to_problem();
    VectorXd x(2);
    x << 0.0, 5.0;
    const CorrectorOutcome co = corrector_step(bprob, x, {0}, 20.0);
    CHECK_FALSE(co.applied);
  }

  SECTION("optimal point is never degraded") {
    VectorXd xs(3);
    xs << std::sqrt(2.0), std::sqrt(2.0) - 1.0, 2.0 - std::sqrt(2.0);
    const CorrectorOutcome co = corrector_step(prob, xs, {1}, 20.0);
    CHECK(co.status == SolveStatus::Optimal);
    // either the merit gate skips the solver-noise step or the applied
    // correction stays at the optimum
    if (co.applied) {
      CHECK((co.x - xs).norm() <= 1e-7);
      CHECK(co.merit_change <= 1e-10);
    }
  }
}

TEST_CASE("equality_sign_normalize flips negative leading coefficients") {
  BilinearProblem p;
  p.n = 2;
  p.b = VectorXd::Ones(2);
  BilinearRow r0;  // leading linear coefficient negative: flipped
  r0.constant = 3.0;
  r0.linear = {{0, -2.0}, {1, 1.0}};
  p.eq_rows.push_back(r0);
  BilinearRow r1;  // no linear part, leading bilinear positive: kept
  r1.constant = -1.0;
  r1.bilinear = {{0, 1, 4.0}};
  p.eq_rows.push_back(r1);

  const SignNormalization sn = equality_sign_normalize(p);
  REQUIRE(sn.signs.size() == 2);
  CHECK(sn.signs[0] == -1.0);
  CHECK(sn.signs[1] == 1.0);
  CHECK(sn.problem.eq_rows[0].constant == Catch::Approx(-3.0));
  CHECK(sn.problem.eq_rows[0].linear.front().value == Catch::Approx(2.0));
  CHECK(sn.problem.eq_rows[1].bilinear.front().value == Catch::Approx(4.0));

  // row values at any x only change sign
  const NlsdpProblem orig = p.to_problem();
  const NlsdpProblem norm = sn.problem.to_problem();
  Rng rng(99);
  for (int t = 0; t < 5; ++t) {
    VectorXd x(2);
    x << rng.normal(), rng.normal();
    const VectorXd v0 = orig.eq.value(x);
    const VectorXd v1 = norm.eq.value(x);
    for (int r = 0; r < 2; ++r) CHECK(v1[r] == Catch::Approx(sn.signs[r] * v0[r]).margin(1e-12));
  }

  // idempotent
  const SignNormalization sn2 = equality_sign_normalize(sn.problem);
  CHECK(sn2.signs.isApprox(VectorXd::Ones(2)));
}

TEST_CASE("ssp solves a scalar problem with every controller") {
  BilinearProblem bp;
  bp.n = 1;
  bp.b = VectorXd::Constant(1, 1.0);
  BilinearBlock b;
  b.dim = 1;
  b.constant = {{0, 0, 1.0}};
  b.linear = {{0, 0, 0, -1.0}};
  bp.blocks.push_back(b);
  const NlsdpProblem prob = bp.to_problem();

  for (StepController ctrl : {StepController::TrustRegion, StepController::PenaltyLineSearch,
                              StepController::Filter, StepController::UnitStep}) {
    INFO("controller " << to_string(ctrl));
    SspOptions opt;
    opt.controller = ctrl;
    const SspRun run = solve(prob, VectorXd::Constant(1, -1.0), opt);
    REQUIRE(run.result == SspResult::Converged);
    CHECK(run.iterate.x[0] == Catch::Approx(1.0).margin(1e-8));
    CHECK(run.kkt.total <= 1e-9);
    CHECK(run.iterations <= 10);
  }
}

TEST_CASE("ssp solves the diagonal sdp with exact multipliers") {
  const NlsdpProblem prob = diag_problem().to_problem();
  VectorXd x0(2);
  x0 << 3.0, 0.0;
  for (StepController ctrl : {StepController::TrustRegion, StepController::PenaltyLineSearch,
                              StepController::Filter, StepController::UnitStep}) {
    INFO("controller " << to_string(ctrl));
    SspOptions opt;
    opt.controller = ctrl;
    const SspRun run = solve(prob, x0, opt);
    REQUIRE(run.result == SspResult::Converged);
    CHECK(run.iterate.x[0] == Catch::Approx(1.0).margin(1e-7));
    CHECK(run.iterate.x[1] == Catch::Approx(2.0).margin(1e-7));
    CHECK(run.iterate.Y(0, 0) == Catch::Approx(1.0).margin(1e-6));
    CHECK(run.iterate.Y(1, 1) == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("ssp controller and hessian matrix on the circle") {
  const NlsdpProblem prob = circle_problem().to_problem();
  const VectorXd xs = circle_solution();
  VectorXd x0(2);
  x0 << 0.6, 0.3;
  for (StepController ctrl : {StepController::TrustRegion, StepController::PenaltyLineSearch,
                              StepController::Filter, StepController::UnitStep}) {
    for (HessianStrategy hess :
         {HessianStrategy::PsdProjection, HessianStrategy::Exact, HessianStrategy::DampedBfgs}) {
      INFO("controller " << to_string(ctrl) << ", hessian " << to_string(hess));
      SspOptions opt;
      opt.controller = ctrl;
      opt.hessian = hess;
      const SspRun run = solve(prob, x0, opt);
      REQUIRE(run.result == SspResult::Converged);
      CHECK((run.iterate.x - xs).norm() <= 1e-8);
      CHECK(run.kkt.total <= 1e-9);
      CHECK(run.iterations <= 15);
      // multiplier agrees with the analytic dual sqrt(1.01)/2
      CHECK(run.iterate.Y(0, 0) == Catch::Approx(std::sqrt(1.01) / 2.0).margin(1e-6));
    }
  }
}

TEST_CASE("ssp corrector pass accelerates the designated-subset problem") {
  const NlsdpProblem prob = hyperbola_problem().to_problem();
  VectorXd x0(3);
  x0 << 2.2, 0.1, 1.5;
  VectorXd xs(3);
  xs << std::sqrt(2.0), std::sqrt(2.0) - 1.0, 2.0 - std::sqrt(2.0);

  SspOptions opt;
  opt.corrector_fixed = {1};
  const SspRun run = solve(prob, x0, opt);
  REQUIRE(run.result == SspResult::Converged);
  CHECK((run.iterate.x - xs).norm() <= 1e-6);
  int applied = 0;
  for (const auto& r : run.history) applied += r.corrector_applied ? 1 : 0;
  CHECK(applied >= 1);
}

TEST_CASE("ssp is deterministic run to run") {
  const NlsdpProblem prob = circle_problem().to_problem();
  VectorXd x0(2);
  x0 << 0.6, 0.3;
  SspOptions opt;
  const SspRun a = solve(prob, x0, opt);
  const SspRun b = solve(prob, x0, opt);
  REQUIRE(a.result == b.result);
  REQUIRE(a.iterations == b.iterations);
  REQUIRE(a.history.size() == b.history.size());
  CHECK(std::memcmp(a.iterate.x.data(), b.iterate.x.data(),
                    sizeof(double) * static_cast<size_t>(a.iterate.x.size())) == 0);
  for (size_t i = 0; i < a.history.size(); ++i) {
    const SspIterationRecord& ra = a.history[i];
    const SspIterationRecord& rb = b.history[i];
    CHECK(ra.k == rb.k);
    CHECK(ra.kkt == rb.kkt);
    CHECK(ra.step_norm == rb.step_norm);
    CHECK(ra.radius == rb.radius);
    CHECK(ra.lambda == rb.lambda);
    CHECK(ra.merit == rb.merit);
    CHECK(ra.penalty == rb.penalty);
    CHECK(ra.accepted == rb.accepted);
    CHECK(ra.sub_status == rb.sub_status);
    CHECK(ra.sub_iterations == rb.sub_iterations);
  }
}

TEST_CASE("ssp reports failure on an infeasible problem") {
  // x^2 + 1 <= 0 has no solution
  BilinearProblem bp;
  bp.n = 1;
  bp.b = VectorXd::Constant(1, 1.0);
  BilinearBlock b;
  b.dim = 1;
  b.constant = {{0, 0, 1.0}};
  b.bilinear = {{0, 0, 0, 0, 1.0}};
  bp.blocks.push_back(b);
  const NlsdpProblem prob = bp.to_problem();

  SspOptions opt;
  opt.max_iter = 25;
  const SspRun run = solve(prob, VectorXd::Constant(1, 1.0), opt);
  CHECK(run.result != SspResult::Converged);
  CHECK(constraint_violation(prob, run.iterate.x) >= 0.5);
}

TEST_CASE("ssp accepted steps certify progress") {
  // every accepted step either keeps the merit from rising (at its recorded
  // penalty) or at least halves the kkt residual seen at the next iteration
  const NlsdpProblem prob = circle_problem().to_problem();
  VectorXd x0(2);
  x0 << 0.6, 0.3;
  SspOptions opt;  // defaults: trust region + projection
  const SspRun run = solve(prob, x0, opt);
  REQUIRE(run.result == SspResult::Converged);
  double last = std::numeric_limits<double>::infinity();
  double last_penalty = -1.0;
  for (size_t i = 0; i < run.history.size(); ++i) {
    const SspIterationRecord& r = run.history[i];
    if (!r.accepted) continue;
    if (r.penalty != last_penalty) {
      // merit scale changes with M; restart the chain
      last_penalty = r.penalty;
      last = r.merit;
      continue;
    }
    const double kkt_next =
        i + 1 < run.history.size() ? run.history[i + 1].kkt : run.kkt.total;
    const bool merit_ok = r.merit <= last + 1e-9;
    const bool kkt_halved = kkt_next <= 0.5 * r.kkt + 1e-15;
    CHECK((merit_ok || kkt_halved));
    last = r.merit;
  }
}
