#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "sspsolve/rng.hpp"
#include "sspsolve/sensitivity.hpp"

using namespace sspsolve;

namespace {

// min x s.t. -x + 1 <= 0 (1x1), solution x = 1 with multiplier 1
QsdpData scalar_data() {
  QsdpData d;
  d.A = LinearMap(1, 1);
  d.A.coeff(0)(0, 0) = -1.0;
  d.b = VectorXd::Ones(1);
  d.C = SymMat(1);
  d.C(0, 0) = 1.0;
  d.H = SymMat(1);
  return d;
}

StationaryTriple scalar_point() {
  StationaryTriple p;
  p.x = VectorXd::Ones(1);
  p.Y = SymMat(1);
  p.Y(0, 0) = 1.0;
  p.S = SymMat(1);
  return p;
}

SymMat random_sym(Rng& rng, int m, double scale = 1.0) {
  SymMat s(m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i <= j; ++i) s(i, j) = scale * rng.normal();
  return s;
}

MatrixXd random_orthogonal(Rng& rng, int m) {
  MatrixXd g(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) g(i, j) = rng.normal();
  return Eigen::HouseholderQR<MatrixXd>(g).householderQ();
}

struct Instance {
  QsdpData data;
  StationaryTriple point;
  ComplementaryDecomposition dc;
};

// Backward construction: pick the solution and the certificate first, then
// choose C and b to make the stationarity rows exact. With H positive
// definite the point is the unique global optimum.
Instance convex_instance(uint64_t seed, int n, int m, int k) {
  Rng rng(seed);
  Instance inst;
  QsdpData& d = inst.data;
  d.A = LinearMap(n, m);
  for (int i = 0; i < n; ++i) d.A.coeff(i) = random_sym(rng, m);
  MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = rng.normal();
  d.H = SymMat::sym_part(g.transpose() * g + 0.5 * MatrixXd::Identity(n, n));

  StationaryTriple& p = inst.point;
  p.x = VectorXd(n);
  for (int i = 0; i < n; ++i) p.x[i] = rng.normal();
  const MatrixXd U = random_orthogonal(rng, m);
  VectorXd y1(m), s2(m);
  y1.setZero();
  s2.setZero();
  for (int i = 0; i < k; ++i) y1[i] = 1.0 + rng.uniform();
  for (int i = k; i < m; ++i) s2[i] = 1.0 + rng.uniform();
  p.Y = SymMat::sym_part(U * y1.asDiagonal() * U.transpose());
  p.S = SymMat::sym_part(U * s2.asDiagonal() * U.transpose());

  d.C = d.A.apply(p.x);
  d.C.packed() = -d.C.packed() - p.S.packed();
  d.b = -d.H.dense() * p.x - d.A.adjoint(p.Y);
  inst.dc = decompose(p.Y, p.S);
  return inst;
}

QsdpPerturbation random_perturbation(uint64_t seed, int n, int m) {
  Rng rng(seed);
  QsdpPerturbation dD;
  dD.dA = LinearMap(n, m);
  for (int i = 0; i < n; ++i) dD.dA.coeff(i) = random_sym(rng, m, 0.3);
  dD.db = VectorXd(n);
  for (int i = 0; i < n; ++i) dD.db[i] = rng.normal();
  dD.dC = random_sym(rng, m, 0.5);
  dD.dH = random_sym(rng, n, 0.3);
  return dD;
}

// residuals of the three tangent rows, relative to the data scale
double tangent_residual(const QsdpData& d, const StationaryTriple& p,
                        const QsdpPerturbation& dD, const SensitivityDirections& dir) {
  SymMat r1 = d.A.apply(dir.xdot);
  r1.packed() += dir.Sdot.packed() + dD.dC.packed() + dD.dA.apply(p.x).packed();
  const VectorXd r2 =
      d.H.dense() * dir.xdot + d.A.adjoint(dir.Ydot) + dD.db + dD.dH.dense() * p.x +
      dD.dA.adjoint(p.Y);
  const MatrixXd one = p.Y.dense() * dir.Sdot.dense() + dir.Ydot.dense() * p.S.dense();
  const double r3 = (one + one.transpose()).norm();
  const double scale = 1.0 + data_norm(d) + perturbation_norm(dD) + p.x.norm() +
                       p.Y.frob_norm() + p.S.frob_norm();
  return std::sqrt(r1.frob_norm() * r1.frob_norm() + r2.squaredNorm() + r3 * r3) / scale;
}

}  // namespace

TEST_CASE("stationary residual recognizes the scalar solution") {
  const QsdpData d = scalar_data();
  StationaryTriple p = scalar_point();
  CHECK(is_stationary(d, p));
  CHECK(stationary_residual(d, p).total == 0.0);

  p.x[0] = 1.5;  // slack row and complementarity both break
  CHECK_FALSE(is_stationary(d, p));

  StationaryTriple bad = scalar_point();
  bad.Y(0, 0) = -1.0;  // cone violation
  CHECK(stationary_residual(d, bad).cone > 0.9);
  CHECK_FALSE(is_stationary(d, bad));
}

TEST_CASE("decompose splits a complementary diagonal pair") {
  SymMat Y(2), S(2);
  Y(0, 0) = 2.0;
  S(1, 1) = 3.0;
  const ComplementaryDecomposition dc = decompose(Y, S);
  CHECK(dc.k == 1);
  REQUIRE(dc.Y1.size() == 1);
  REQUIRE(dc.S2.size() == 1);
  CHECK(dc.Y1[0] == Catch::Approx(2.0));
  CHECK(dc.S2[0] == Catch::Approx(3.0));
  CHECK(dc.U.isApprox(MatrixXd::Identity(2, 2)));
}

TEST_CASE("decompose rejects a common nullspace") {
  SymMat Y(2), S(2);
  Y(0, 0) = 1.0;  // Y + S singular
  CHECK_THROWS_AS(decompose(Y, S), NotStrictlyComplementary);
}

TEST_CASE("decompose recovers a rotated pair") {
  Rng rng(7001);
  for (int trial = 0; trial < 8; ++trial) {
    const int m = 4 + static_cast<int>(rng.integer(3));
    const int k = 1 + static_cast<int>(rng.integer(static_cast<uint64_t>(m - 1)));
    const MatrixXd Q = random_orthogonal(rng, m);
    VectorXd y(m), s(m);
    y.setZero();
    s.setZero();
    for (int i = 0; i < k; ++i) y[i] = 0.5 + 2.0 * rng.uniform();
    for (int i = k; i < m; ++i) s[i] = 0.5 + 2.0 * rng.uniform();
    const SymMat Y = SymMat::sym_part(Q * y.asDiagonal() * Q.transpose());
    const SymMat S = SymMat::sym_part(Q * s.asDiagonal() * Q.transpose());

    const ComplementaryDecomposition dc = decompose(Y, S);
    REQUIRE(dc.k == k);
    CHECK((dc.U.transpose() * dc.U - MatrixXd::Identity(m, m)).norm() <= 1e-12);
    // ordering invariants
    for (int i = 0; i + 1 < k; ++i) CHECK(dc.Y1[i] >= dc.Y1[i + 1] - 1e-12);
    for (int i = 0; i + 1 < m - k; ++i) CHECK(dc.S2[i] >= dc.S2[i + 1] - 1e-12);
    CHECK(dc.Y1.minCoeff() > 0.0);
    CHECK(dc.S2.minCoeff() > 0.0);
    // reconstruction
    VectorXd dy = VectorXd::Zero(m), ds = VectorXd::Zero(m);
    dy.head(k) = dc.Y1;
    ds.tail(m - k) = dc.S2;
    CHECK((dc.U * dy.asDiagonal() * dc.U.transpose() - Y.dense()).norm() <= 1e-10);
    CHECK((dc.U * ds.asDiagonal() * dc.U.transpose() - S.dense()).norm() <= 1e-10);
  }
}

TEST_CASE("decompose is reproducible") {
  Rng rng(7002);
  const MatrixXd Q = random_orthogonal(rng, 4);
  VectorXd y(4), s(4);
  y << 2.0, 1.0, 0.0, 0.0;
  s << 0.0, 0.0, 3.0, 0.5;
  const SymMat Y = SymMat::sym_part(Q * y.asDiagonal() * Q.transpose());
  const SymMat S = SymMat::sym_part(Q * s.asDiagonal() * Q.transpose());
  const ComplementaryDecomposition a = decompose(Y, S);
  const ComplementaryDecomposition b = decompose(Y, S);
  CHECK(a.U == b.U);
  CHECK(a.Y1 == b.Y1);
  CHECK(a.S2 == b.S2);
}

TEST_CASE("check_lemma1 validates the block characterization") {
  Rng rng(7003);
  const int m = 5, k = 2;
  const MatrixXd Q = random_orthogonal(rng, m);
  VectorXd y = VectorXd::Zero(m), s = VectorXd::Zero(m);
  y.head(k) << 2.0, 1.0;
  s.tail(m - k) << 1.5, 1.0, 0.5;
  const SymMat Y = SymMat::sym_part(Q * y.asDiagonal() * Q.transpose());
  const SymMat S = SymMat::sym_part(Q * s.asDiagonal() * Q.transpose());

  SECTION("derivatives built from the block form satisfy both equations") {
    // free blocks: Ydot_11, Ydot_12, Sdot_22; coupled: Sdot_12 = -Y1^-1 Ydot_12 S2
    MatrixXd Yu = MatrixXd::Zero(m, m), Su = MatrixXd::Zero(m, m);
    for (int j = 0; j < k; ++j)
      for (int i = 0; i <= j; ++i) Yu(i, j) = Yu(j, i) = rng.normal();
    for (int j = k; j < m; ++j)
      for (int i = k; i <= j; ++i) Su(i, j) = Su(j, i) = rng.normal();
    MatrixXd Y3(k, m - k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < m - k; ++j) Y3(i, j) = rng.normal();
    const VectorXd yinv = -y.head(k).cwiseInverse();
    const MatrixXd S3 = yinv.asDiagonal() * Y3 * s.tail(m - k).asDiagonal();
    Yu.topRightCorner(k, m - k) = Y3;
    Yu.bottomLeftCorner(m - k, k) = Y3.transpose();
    Su.topRightCorner(k, m - k) = S3;
    Su.bottomLeftCorner(m - k, k) = S3.transpose();

    const SymMat Ydot = SymMat::sym_part(Q * Yu * Q.transpose());
    const SymMat Sdot = SymMat::sym_part(Q * Su * Q.transpose());
    const Lemma1Report rep = check_lemma1(Y, S, Ydot, Sdot);
    CHECK(rep.complementary);
    CHECK(rep.strictly_complementary);
    CHECK(rep.one_sided_norm <= 1e-12);
    CHECK(rep.two_sided_norm <= 1e-12);
    CHECK(rep.satisfies_derivative);
    CHECK(rep.block_form);
    CHECK(rep.ok);
  }

  SECTION("a nonzero excluded block violates the equation") {
    MatrixXd Yu = MatrixXd::Zero(m, m);
    Yu(m - 1, m - 1) = 1.0;  // the (2,2) corner the lemma forbids
    const SymMat Ydot = SymMat::sym_part(Q * Yu * Q.transpose());
    const Lemma1Report rep = check_lemma1(Y, S, Ydot, SymMat(m));
    CHECK_FALSE(rep.satisfies_derivative);
    CHECK_FALSE(rep.block_form);
    CHECK(rep.ok);  // forms still agree with each other
  }

  SECTION("without psd the two product forms can disagree") {
    SymMat Yn(2), Sn(2);
    Yn(0, 1) = 1.0;               // [[0,1],[1,0]]
    Sn(0, 0) = 1.0;
    Sn(1, 1) = -1.0;              // indefinite
    const Lemma1Report rep = check_lemma1(Yn, Sn, SymMat(2), SymMat(2));
    CHECK(rep.ys_norm > 0.5);     // YS != 0
    CHECK(rep.sym_norm <= 1e-14); // but YS + SY = 0
    CHECK_FALSE(rep.eqq_product_consistent);
    CHECK_FALSE(rep.ok);
  }
}

TEST_CASE("tangent_solve matches the scalar hand solution") {
  const QsdpData d = scalar_data();
  const StationaryTriple p = scalar_point();
  QsdpPerturbation dD = zero_perturbation(d);
  dD.dC(0, 0) = 1.0;
  const SensitivityDirections dir = tangent_solve(d, p, dD);
  CHECK(dir.xdot[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(std::abs(dir.Ydot(0, 0)) <= 1e-12);
  CHECK(std::abs(dir.Sdot(0, 0)) <= 1e-12);
  CHECK(std::isinf(dir.sosc_modulus));  // no tangent direction at all
}

TEST_CASE("tangent_solve returns zero for a zero perturbation") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    const Instance inst = convex_instance(seed, 4, 3, 2);
    REQUIRE(is_stationary(inst.data, inst.point));
    const SensitivityDirections dir =
        tangent_solve(inst.data, inst.point, zero_perturbation(inst.data));
    CHECK(dir.xdot.norm() <= 1e-12);
    CHECK(dir.Ydot.frob_norm() <= 1e-12);
    CHECK(dir.Sdot.frob_norm() <= 1e-12);
  }
}

TEST_CASE("tangent_solve satisfies the defining rows and block structure") {
  for (uint64_t seed : {21u, 22u, 23u, 24u}) {
    const Instance inst = convex_instance(seed, 5, 4, 2);
    const QsdpPerturbation dD = random_perturbation(seed + 100, 5, 4);
    const SensitivityDirections dir = tangent_solve(inst.data, inst.point, dD);
    CHECK(tangent_residual(inst.data, inst.point, dD, dir) <= 1e-10);

    // the derivative pair carries the split structure of the base pair
    const Lemma1Report rep = check_lemma1(inst.point.Y, inst.point.S, dir.Ydot, dir.Sdot);
    CHECK(rep.satisfies_derivative);
    CHECK(rep.block_form);

    const int m = 4, k = inst.dc.k;
    const MatrixXd Su = inst.dc.U.transpose() * dir.Sdot.dense() * inst.dc.U;
    const MatrixXd Yu = inst.dc.U.transpose() * dir.Ydot.dense() * inst.dc.U;
    CHECK(Su.topLeftCorner(k, k).norm() <= 1e-9 * (1.0 + dir.Sdot.frob_norm()));
    CHECK(Yu.bottomRightCorner(m - k, m - k).norm() <= 1e-9 * (1.0 + dir.Ydot.frob_norm()));
  }
}

TEST_CASE("one-sided third row gives the same directions by least squares") {
  const Instance inst = convex_instance(31, 4, 3, 2);
  const int n = 4, m = 3;
  const QsdpPerturbation dD = random_perturbation(131, n, m);
  const SensitivityDirections dir = tangent_solve(inst.data, inst.point, dD);

  // overdetermined variant: rows 1 and 2 as in the square system, the third
  // row as the unsymmetrized m^2-row equation Y Sdot + Ydot S = 0
  const int t = packed_size(m);
  const int N = n + 2 * t;
  const MatrixXd Asv = inst.data.A.svec_matrix();
  MatrixXd K = MatrixXd::Zero(t + n + m * m, N);
  VectorXd rhs = VectorXd::Zero(t + n + m * m);
  K.block(0, 0, t, n) = Asv;
  K.block(0, n + t, t, t).setIdentity();
  SymMat r1 = dD.dA.apply(inst.point.x);
  r1.packed() += dD.dC.packed();
  rhs.head(t) = -svec(r1);
  K.block(t, 0, n, n) = inst.data.H.dense();
  K.block(t, n, n, t) = Asv.transpose();
  rhs.segment(t, n) = -dD.db - dD.dH.dense() * inst.point.x - dD.dA.adjoint(inst.point.Y);
  const MatrixXd Yd = inst.point.Y.dense(), Sd = inst.point.S.dense();
  int p = 0;
  for (int c = 0; c < m; ++c)
    for (int r = 0; r <= c; ++r, ++p) {
      MatrixXd B = MatrixXd::Zero(m, m);
      const double sc = r == c ? 1.0 : 1.0 / kSqrt2;
      B(r, c) += sc;
      B(c, r) = B(r, c);
      const MatrixXd ydcol = B * Sd;   // Ydot basis element times S
      const MatrixXd sdcol = Yd * B;   // Y times Sdot basis element
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i) {
          K(t + n + j * m + i, n + p) = ydcol(i, j);
          K(t + n + j * m + i, n + t + p) = sdcol(i, j);
        }
    }
  const VectorXd ls = K.colPivHouseholderQr().solve(rhs);
  CHECK((ls.head(n) - dir.xdot).norm() <= 1e-9);
  CHECK((ls.segment(n, t) - svec(dir.Ydot)).norm() <= 1e-9);
  CHECK((ls.tail(t) - svec(dir.Sdot)).norm() <= 1e-9);
}

TEST_CASE("tangent_solve rejects broken hypotheses") {
  SECTION("not strictly complementary") {
    Instance inst = convex_instance(41, 4, 3, 2);
    // collapse the certificate: wipe the S part so Y + S is singular
    inst.point.S = SymMat(3);
    inst.data.C = inst.data.A.apply(inst.point.x);
    inst.data.C.packed() *= -1.0;
    CHECK_THROWS_AS(
        tangent_solve(inst.data, inst.point, zero_perturbation(inst.data)),
        NotStrictlyComplementary);
  }

  SECTION("singular tangent system") {
    // zero constraint map with H = 0: no row determines xdot
    QsdpData d;
    d.A = LinearMap(1, 1);
    d.b = VectorXd::Zero(1);
    d.C = SymMat(1);
    d.C(0, 0) = -1.0;
    d.H = SymMat(1);
    StationaryTriple p;
    p.x = VectorXd::Zero(1);
    p.Y = SymMat(1);
    p.S = SymMat(1);
    p.S(0, 0) = 1.0;
    REQUIRE(is_stationary(d, p));
    CHECK_THROWS_AS(tangent_solve(d, p, zero_perturbation(d)), SingularTangentSystem);
  }
}

TEST_CASE("sosc_surrogate measures tangent curvature") {
  SECTION("identity curvature gives modulus one") {
    // two variables, one active constraint direction: A(h) 11-block kills h0
    QsdpData d;
    d.A = LinearMap(2, 2);
    d.A.coeff(0)(0, 0) = -1.0;  // x0 controls the active corner
    d.C = SymMat(2);
    d.C(0, 0) = 1.0;
    d.C(1, 1) = -1.0;  // inactive part strictly negative
    d.H = SymMat(2);
    d.H(0, 0) = 1.0;
    d.H(1, 1) = 1.0;
    d.b = VectorXd::Zero(2);
    StationaryTriple p;
    p.x = VectorXd(2);
    p.x << 1.0, 0.0;
    p.Y = SymMat(2);
    p.Y(0, 0) = 1.0;
    p.S = SymMat(2);
    p.S(1, 1) = 1.0;
    // stationarity wants b + Hx + A*(Y) = 0
    d.b = -(d.H.dense() * p.x + d.A.adjoint(p.Y));
    REQUIRE(is_stationary(d, p));
    const ComplementaryDecomposition dc = decompose(p.Y, p.S);
    const double mu = sosc_surrogate(d, p, dc);
    CHECK(mu == Catch::Approx(1.0).margin(1e-10));
  }

  SECTION("positive on well-conditioned random instances") {
    for (uint64_t seed : {51u, 52u, 53u}) {
      const Instance inst = convex_instance(seed, 5, 3, 1);
      const double mu = sosc_surrogate(inst.data, inst.point, inst.dc);
      CHECK(mu > 0.0);
    }
  }
}

TEST_CASE("fd_verify on the scalar example is exact") {
  const QsdpData d = scalar_data();
  const StationaryTriple p = scalar_point();
  QsdpPerturbation dD = zero_perturbation(d);
  dD.dC(0, 0) = 1.0;
  const FdReport rep = fd_verify(d, p, dD, 1e-4);
  REQUIRE(rep.ok);
  CHECK(rep.fd_x[0] == Catch::Approx(1.0).margin(1e-9));
  CHECK(rep.rel_dev <= 1e-9);

  const FdReport zero = fd_verify(d, p, zero_perturbation(d), 1e-4);
  REQUIRE(zero.ok);
  CHECK(zero.fd_x.norm() <= 1e-9);
}

TEST_CASE("fd_verify deviation shrinks quadratically") {
  const Instance inst = convex_instance(61, 4, 3, 2);
  const QsdpPerturbation dD = random_perturbation(161, 4, 3);
  const FdReport coarse = fd_verify(inst.data, inst.point, dD, 1e-2);
  const FdReport fine = fd_verify(inst.data, inst.point, dD, 1e-3);
  REQUIRE(coarse.ok);
  REQUIRE(fine.ok);
  CHECK(fine.rel_dev <= 1e-4);
  CHECK(coarse.rel_dev >= 20.0 * fine.rel_dev);  // ~100x for a clean O(t^2)
}

TEST_CASE("fd_verify falls back to the epigraph re-solve when convexity is unprovable") {
  // dH proportional to H keeps both perturbed problems strictly convex, but
  // the eigenvalue bound used to pick the solve path cannot certify that,
  // so this exercises the nonlinear re-solve
  const Instance inst = convex_instance(71, 3, 2, 1);
  const double lo = min_eig(inst.data.H);
  const double hi = spectral_norm(inst.data.H.dense());
  REQUIRE(hi > 2.0 * lo);
  const double t = 1e-3;
  QsdpPerturbation dD = zero_perturbation(inst.data);
  dD.dH.packed() = (2.0 * lo / (t * hi)) * inst.data.H.packed();
  dD.db = VectorXd::Ones(3);
  REQUIRE(lo - t * spectral_norm(dD.dH.dense()) < 0.0);
  const FdReport rep = fd_verify(inst.data, inst.point, dD, t);
  REQUIRE(rep.ok);
  // routing off the conic path forces t * |dH| ~ 2 min_eig(H), a twenty
  // percent swing in H, so only coarse agreement is available here
  CHECK(rep.rel_dev <= 0.1);
}
