#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "algsode/algebroid.hpp"

using namespace algsode;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::vector<Expression> parse_all(std::initializer_list<const char*> texts) {
  std::vector<Expression> out;
  for (const char* t : texts) out.push_back(Expression::parse(t));
  return out;
}

SodeField euclidean(Index n) {
  return SodeField(AlgebroidModel::tangent_bundle(ChartBox::cube(n, 10.0)),
                   std::vector<Expression>(static_cast<std::size_t>(n), Expression::constant(0.0)));
}

SodeField harmonic() {
  return SodeField(AlgebroidModel::tangent_bundle(ChartBox::cube(1, 10.0)), parse_all({"-q1"}));
}

int levi_civita(Index a, Index b, Index c) {
  if (a == b || b == c || a == c) return 0;
  return ((b - a + 3) % 3 == 1) ? 1 : -1;
}

AlgebroidModel so3_algebra() {
  std::vector<Expression> structure;
  for (Index a = 0; a < 3; ++a) {
    for (Index b = 0; b < 3; ++b) {
      for (Index c = 0; c < 3; ++c) structure.push_back(Expression::constant(levi_civita(b, c, a)));
    }
  }
  return AlgebroidModel(ChartBox(Vector(0), Vector(0)), 3, {}, structure);
}

// Bilinear (unsymmetrized) table of xi -> I^-1 (I xi x xi): T^a_{bc} = eps_{abc} I_b / I_a.
SodeField rigid_body(const Vector& inertia) {
  std::vector<Expression> coeffs;
  for (Index a = 0; a < 3; ++a) {
    for (Index b = 0; b < 3; ++b) {
      for (Index c = 0; c < 3; ++c) coeffs.push_back(Expression::constant(levi_civita(a, b, c) * inertia[b] / inertia[a]));
    }
  }
  return spray_from_coefficients(so3_algebra(), coeffs);
}

Vector cross(const Vector& u, const Vector& v) {
  return vec({u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]});
}

SodeField sphere_chart() {
  const auto base = ChartBox::cube(2, 2.0);
  std::vector<Expression> coeffs;
  const char* q[] = {"q1", "q2"};
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        std::string num = "0";
        if (j == k) num += std::string(" + 2*") + q[i];
        if (i == k) num += std::string(" + 2*") + q[j];
        if (i == j) num += std::string(" - 2*") + q[k];
        coeffs.push_back(Expression::parse("(" + num + ")/(1 + q1^2 + q2^2)"));
      }
    }
  }
  return spray_from_coefficients(AlgebroidModel::tangent_bundle(base), coeffs);
}

}  // namespace

TEST(ChartBox, ContainmentAndBall) {
  const ChartBox box = ChartBox::cube(2, 1.0, "q", 1.2);
  EXPECT_TRUE(box.contains(vec({0.5, 0.5})));
  EXPECT_FALSE(box.contains(vec({1.5, 0.0})));
  EXPECT_FALSE(box.contains(vec({0.9, 0.9})));  // outside the ball
  EXPECT_FALSE(box.contains(vec({0.1})));
  EXPECT_THROW(ChartBox(vec({1.0}), vec({0.0})), Error);
}

TEST(AnchorApply, TangentBundleIsIdentity) {
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(2, 1.0));
  EXPECT_TRUE(anchor_apply(model, vec({0, 0}), vec({1, 2})).isApprox(vec({1, 2})));
}

TEST(AnchorApply, VerticalBundleOfFibration) {
  const AlgebroidModel model(ChartBox::cube(3, 5.0), 2, parse_all({"0", "0", "1", "0", "0", "1"}), {});
  const Vector v = anchor_apply(model, vec({0.3, -1, 2}), vec({4, 5}));
  EXPECT_EQ(v, vec({0, 4, 5}));
}

TEST(AnchorApply, LieAlgebraHasEmptyVelocity) {
  EXPECT_EQ(anchor_apply(so3_algebra(), Vector(0), vec({1, 2, 3})).size(), 0);
}

TEST(AnchorApply, OutsideChartIsRejected) {
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(1, 1.0));
  try {
    (void)anchor_apply(model, vec({2.0}), vec({1.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_chart);
  }
}

TEST(SodeRhs, Examples) {
  auto [qd, yd] = sode_rhs(euclidean(1), vec({1}), vec({3}));
  EXPECT_EQ(qd, vec({3}));
  EXPECT_EQ(yd, vec({0}));
  auto [hq, hy] = sode_rhs(harmonic(), vec({1}), vec({0}));
  EXPECT_EQ(hq, vec({0}));
  EXPECT_EQ(hy, vec({-1}));
}

TEST(SodeRhs, RigidBodyMatchesCrossProduct) {
  const Vector inertia = vec({1, 2, 3});
  const Vector xi = vec({1, 1, 1});
  const Vector iw = inertia.cwiseProduct(xi);
  const Vector oracle = cross(iw, xi).cwiseQuotient(inertia);
  auto [qd, yd] = sode_rhs(rigid_body(inertia), Vector(0), xi);
  EXPECT_EQ(qd.size(), 0);
  EXPECT_LE((yd - oracle).norm(), 1e-15);
  EXPECT_LE((yd - vec({-1, 1, -1.0 / 3})).norm(), 1e-15);
  Sampler rng(3);
  const auto body = rigid_body(inertia);
  for (int i = 0; i < 20; ++i) {
    const Vector w = rng.uniform_cube(3, 2.0);
    EXPECT_LE((body.fiber_acceleration(Vector(0), w) - cross(inertia.cwiseProduct(w), w).cwiseQuotient(inertia)).norm(),
              1e-13);
  }
}

TEST(Flow, EuclideanAndHarmonic) {
  const auto e = flow(euclidean(1), vec({0}), vec({1}), 1.0);
  ASSERT_TRUE(e.completed());
  EXPECT_NEAR(e.final_q()[0], 1.0, 1e-14);
  EXPECT_NEAR(e.final_y()[0], 1.0, 1e-14);
  const double t = std::numbers::pi / 6;
  const auto h = flow(harmonic(), vec({0}), vec({2}), t);
  ASSERT_TRUE(h.completed());
  EXPECT_NEAR(h.final_q()[0], 2 * std::sin(t), 1e-8);
  EXPECT_NEAR(h.final_y()[0], 2 * std::cos(t), 1e-8);
  for (std::size_t i = 1; i < h.t.size(); ++i) EXPECT_GT(h.t[i], h.t[i - 1]);
}

TEST(Flow, RigidBodyConservesEnergy) {
  const Vector inertia = vec({1, 2, 3});
  const auto traj = flow(rigid_body(inertia), Vector(0), vec({1, 1, 1}), 5.0);
  ASSERT_TRUE(traj.completed());
  for (const auto& w : traj.y) {
    EXPECT_NEAR(0.5 * w.dot(inertia.cwiseProduct(w)), 3.0, 1e-8);
    EXPECT_NEAR(inertia.cwiseProduct(w).squaredNorm(), 14.0, 1e-8);
  }
}

TEST(Flow, LeavingTheChartIsReported) {
  const auto traj = flow(euclidean(1), vec({9.5}), vec({1}), 2.0);
  EXPECT_EQ(traj.status, IvpStatus::left_domain);
  EXPECT_GT(traj.t_exit, 0.5);
  EXPECT_THROW((void)flow(euclidean(1), vec({11}), vec({1}), 1.0), Error);
}

TEST(Flow, TrajectoriesAreAdmissible) {
  IntegratorConfig cfg;
  cfg.sample_interval = 0.01;
  const auto sphere = sphere_chart();
  const auto traj = flow(sphere, vec({0.2, -0.1}), vec({0.5, 0.3}), 1.0, cfg);
  ASSERT_TRUE(traj.completed());
  EXPECT_LE(admissibility_defect(sphere, traj), 1e-9);
  const AlgebroidModel vpi(ChartBox::cube(3, 5.0), 2, parse_all({"0", "0", "1", "0", "0", "1"}), {});
  const SodeField fib(vpi, parse_all({"-(1 + q1^2)*q2", "-(1 + q1^2)*q3"}));
  const auto ft = flow(fib, vec({0.5, 1, 0}), vec({0, 1}), 2.0, cfg);
  ASSERT_TRUE(ft.completed());
  EXPECT_LE(admissibility_defect(fib, ft), 1e-9);
}

TEST(Homogeneity, Examples) {
  EXPECT_EQ(homogeneity_defect(euclidean(2), 50, 1), 0.0);
  EXPECT_LE(homogeneity_defect(rigid_body(vec({1, 2, 3})), 100, 1), 1e-12);
  EXPECT_LE(homogeneity_defect(sphere_chart(), 100, 1), 1e-12);
  EXPECT_GT(homogeneity_defect(harmonic(), 50, 1), 0.1);
  // Direct substitution: q=1, s=2 gives |-1 - 4*(-1)| = 3.
  const ChartBox point(vec({1.0 - 1e-12}), vec({1.0}));
  EXPECT_NEAR(homogeneity_defect(harmonic(), point, 1, 5), 3.0, 1e-9);
}

TEST(QuadraticRescale, EuclideanIsExact) {
  EXPECT_LE(quadratic_rescale_defect(euclidean(2), vec({0.1, 0.2}), vec({1, -1}), 2.0, 0.7), 1e-12);
}

TEST(QuadraticRescale, SphereChart) {
  const auto sphere = sphere_chart();
  for (double s : {0.5, 2.0}) {
    EXPECT_LE(quadratic_rescale_defect(sphere, vec({0.3, 0.1}), vec({0.4, -0.2}), s, s == 0.5 ? 1.0 : 0.5), 1e-8);
  }
}

TEST(SprayFromCoefficients, ZeroTableIsEuclidean) {
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(2, 1.0));
  const auto spray = spray_from_coefficients(model, std::vector<Expression>(8, Expression::constant(0.0)));
  EXPECT_EQ(spray.fiber_acceleration(vec({0.3, 0.4}), vec({1, 2})), vec({0, 0}));
  EXPECT_TRUE(spray.has_quadratic_coefficients());
}

TEST(SprayFromCoefficients, TableIsSymmetrized) {
  const auto body = rigid_body(vec({1, 2, 3}));
  for (const auto& c : body.quadratic_coefficients(Vector(0))) EXPECT_LE((c - c.transpose()).norm(), 0.0);
}

TEST(SprayFromCoefficients, SphereSpeedIsConstant) {
  const auto traj = flow(sphere_chart(), vec({0.5, -0.3}), vec({0.7, 0.2}), 1.5);
  ASSERT_TRUE(traj.completed());
  auto speed = [&](std::size_t i) { return 2.0 * traj.y[i].norm() / (1.0 + traj.q[i].squaredNorm()); };
  for (std::size_t i = 0; i < traj.size(); ++i) EXPECT_NEAR(speed(i), speed(0), 1e-8);
}

TEST(RhsJacobian, AnalyticMatchesFiniteDifference) {
  const auto sphere = sphere_chart();
  ASSERT_TRUE(sphere.has_analytic_jacobian());
  const Vector q = vec({0.3, -0.7});
  const Vector y = vec({1.1, 0.4});
  Vector z(4);
  z << q, y;
  const Matrix fd = fd_jacobian(
      [&](const Vector& s) {
        Vector out(4);
        out << sphere.base_velocity(s.head(2), s.tail(2)), sphere.fiber_acceleration(s.head(2), s.tail(2));
        return out;
      },
      z, 1e-6);
  EXPECT_LE((sphere.rhs_jacobian(q, y) - fd).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Sensitivity, HarmonicVariationalSolution) {
  const auto h = harmonic();
  Matrix s0(2, 1);
  s0 << 0, 1;
  const auto res = flow_with_sensitivity(h, vec({0.0}), vec({2.0}), s0, std::numbers::pi / 2);
  EXPECT_NEAR(res.sensitivity(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(res.sensitivity(1, 0), 0.0, 1e-9);
}

TEST(StructureChecks, SoThreeConstants) {
  const auto model = so3_algebra();
  EXPECT_EQ(antisymmetry_defect(model, 10, 0), 0.0);
  const auto jac = jacobi_defect(model);
  ASSERT_TRUE(jac.has_value());
  EXPECT_EQ(*jac, 0.0);
  // A non-antisymmetric table is flagged.
  std::vector<Expression> bad(8, Expression::constant(0.0));
  bad[1] = Expression::constant(1.0);
  const AlgebroidModel broken(ChartBox(Vector(0), Vector(0)), 2, {}, bad);
  EXPECT_GT(antisymmetry_defect(broken, 1, 0), 0.5);
}

TEST(TangentType, Detection) {
  EXPECT_TRUE(harmonic().is_tangent_type());
  EXPECT_FALSE(rigid_body(vec({1, 2, 3})).is_tangent_type());
}
