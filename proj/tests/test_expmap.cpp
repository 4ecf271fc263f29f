#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "algsode/expmap.hpp"
#include "algsode/instances.hpp"

using namespace algsode;
using std::numbers::pi;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Vector scalar(double x) { return vec({x}); }

SodeField sode_of(const std::string& name) { return *build_model(name).sode; }

SodeField sode_of(const InstanceSpec& spec) { return *build_model(spec).sode; }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

BuiltInstance free_rotation() {
  return build_model(InstanceSpec{"so3_rigid_body", {{"inertia", Vector(Vector::Ones(3))}}});
}

}  // namespace

TEST(ExpPoint, ClosedForms) {
  const auto euclid = sode_of("euclidean");
  const auto harm = sode_of("harmonic");
  EXPECT_NEAR(exp_point(euclid, 0.5, scalar(0), scalar(2))[0], 1.0, 1e-12);
  EXPECT_NEAR(exp_point(harm, pi / 6, scalar(0), scalar(2))[0], 2 * std::sin(pi / 6), 1e-8);
  EXPECT_EQ(exp_point(harm, 0.0, scalar(0.3), scalar(7)), scalar(0.3));
  const auto [a, b] = exp_pair(harm, pi / 6, scalar(0), scalar(2));
  EXPECT_EQ(a[0], 0.0);
  EXPECT_NEAR(b[0], 1.0, 1e-8);
  EXPECT_EQ(code_of([&] { (void)exp_point(harm, -1.0, scalar(0), scalar(1)); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { (void)exp_point(harm, 1.0, scalar(11), scalar(1)); }), ErrorCode::out_of_chart);
}

TEST(ExpPoint, LeavingTheChartIsReported) {
  const auto euclid = sode_of("euclidean");  // chart [-10, 10]
  EXPECT_EQ(code_of([&] { (void)exp_point(euclid, 1.0, scalar(0), scalar(20)); }), ErrorCode::left_domain);
}

TEST(ExpMid, ClosedForms) {
  const auto [m1, p1] = exp_mid(sode_of("euclidean"), 1.0, scalar(0), scalar(2));
  EXPECT_NEAR(m1[0], -1.0, 1e-12);
  EXPECT_NEAR(p1[0], 1.0, 1e-12);
  const auto [m2, p2] = exp_mid(sode_of("harmonic"), pi / 3, scalar(0), scalar(2));
  EXPECT_NEAR(m2[0], -2 * std::sin(pi / 6), 1e-8);
  EXPECT_NEAR(p2[0], 2 * std::sin(pi / 6), 1e-8);
  const auto [m3, p3] = exp_mid(sode_of("harmonic"), 0.0, scalar(0.4), scalar(2));
  EXPECT_EQ(m3, scalar(0.4));
  EXPECT_EQ(p3, scalar(0.4));
}

TEST(ExpMid, MatchesPairFromBackwardState) {
  const auto sphere = sode_of("sphere_chart");
  const double h = 0.8;
  const Vector q = vec({0.1, -0.2});
  const Vector v = vec({0.6, 0.3});
  const auto back = flow(sphere, q, v, -h / 2);
  ASSERT_TRUE(back.completed());
  const auto [a, b] = exp_pair(sphere, h, back.final_q(), back.final_y());
  const auto [m, p] = exp_mid(sphere, h, q, v);
  EXPECT_LE((a - m).lpNorm<Eigen::Infinity>(), 1e-9);
  EXPECT_LE((b - p).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Variational, ClosedForms) {
  const auto e = variational_jacobian(sode_of(InstanceSpec{"euclidean", {{"dim", 2.0}}}), 0.7, vec({0, 0}), vec({1, 1}));
  EXPECT_LE((e.U - 0.7 * Matrix::Identity(2, 2)).norm(), 1e-12);
  // U'' = -U, U(0) = 0, U'(0) = 1.
  const auto h = variational_jacobian(sode_of("harmonic"), pi / 2, scalar(0.3), scalar(1));
  EXPECT_NEAR(h.U(0, 0), 1.0, 1e-8);
  EXPECT_NEAR(h.Udot(0, 0), 0.0, 1e-8);
  const auto s = variational_jacobian(sode_of("sphere_chart"), 1e-4, vec({0.2, 0.1}), vec({1, -0.5}));
  EXPECT_LE((s.U / 1e-4 - Matrix::Identity(2, 2)).norm(), 1e-3);
}

TEST(Variational, AgreesWithFiniteDifferences) {
  IntegratorConfig tight;
  tight.abs_tol = tight.rel_tol = 1e-13;
  struct Case {
    std::string name;
    Vector q;
    Vector v;
  };
  for (const Case& c : {Case{"pendulum", scalar(0.4), scalar(0.7)}, Case{"sphere_chart", vec({0.3, -0.1}), vec({0.5, 0.9})},
                        Case{"fibration_r3", vec({0.5, 0.2, -0.3}), vec({0.4, 0.1})}}) {
    const auto sode = sode_of(c.name);
    const double h = 0.9;
    const Matrix u = variational_jacobian(sode, h, c.q, c.v, tight).U;
    const Matrix fd = fd_jacobian([&](const Vector& v) { return exp_point(sode, h, c.q, v, tight); }, c.v, 1e-4);
    EXPECT_LE((u - fd).norm() / fd.norm(), 1e-5) << c.name;
  }
}

TEST(BvpShoot, ClosedForms) {
  EXPECT_NEAR(bvp_shoot(sode_of("euclidean"), 0.5, scalar(0), scalar(1)).v[0], 2.0, 1e-12);
  EXPECT_NEAR(bvp_shoot(sode_of("harmonic"), pi / 6, scalar(0), scalar(1)).v[0], 1.0 / std::sin(pi / 6), 1e-8);
  // q(t) = cos t + tan(h/2) sin t returns to 1 at t = h.
  const auto loop = bvp_shoot(sode_of("harmonic"), 0.5, scalar(1), scalar(1));
  EXPECT_NEAR(loop.v[0], std::tan(0.25), 1e-8);
  EXPECT_LE(loop.residual, 1e-11);
  EXPECT_NEAR(loop.trajectory.final_q()[0], 1.0, 1e-10);
}

TEST(BvpShoot, Failures) {
  const auto harm = sode_of("harmonic");
  // Conjugate point of the harmonic oscillator at h = pi: U(pi) = 0. The computed U(pi) is
  // only zero up to the integrator tolerance, so resolving it needs a tight tolerance.
  IntegratorConfig tight;
  tight.abs_tol = tight.rel_tol = 1e-14;
  EXPECT_EQ(code_of([&] { (void)bvp_shoot(harm, pi, scalar(0), scalar(0.5), std::nullopt, {}, tight); }),
            ErrorCode::singular_jacobian);
  EXPECT_EQ(code_of([&] { (void)bvp_shoot(harm, 1e-12, scalar(0), scalar(0.5)); }), ErrorCode::h_too_small);
  NewtonConfig few;
  few.max_iters = 1;
  EXPECT_EQ(code_of([&] { (void)bvp_shoot(sode_of("pendulum"), 1.0, scalar(0), scalar(1.0), std::nullopt, few); }),
            ErrorCode::no_convergence);
}

TEST(BvpShoot, FiniteDifferenceNewtonAgrees) {
  NewtonConfig fd;
  fd.jacobian_mode = JacobianMode::finite_difference;
  const auto sphere = sode_of("sphere_chart");
  const auto a = bvp_shoot(sphere, 1.0, vec({0.1, 0.2}), vec({0.5, -0.3}));
  const auto b = bvp_shoot(sphere, 1.0, vec({0.1, 0.2}), vec({0.5, -0.3}), std::nullopt, fd);
  EXPECT_LE((a.v - b.v).norm(), 1e-8);
}

TEST(Retraction, ClosedForms) {
  const RetractionPair e = retraction_pair(sode_of("euclidean"), 0.5, scalar(0), scalar(1)).first;
  EXPECT_NEAR(e.minus[0], 2.0, 1e-12);
  EXPECT_NEAR(e.plus[0], 2.0, 1e-12);
  const RetractionPair r = retraction_pair(sode_of("harmonic"), pi / 6, scalar(0), scalar(1)).first;
  EXPECT_NEAR(r.minus[0], 2.0, 1e-8);
  EXPECT_NEAR(r.plus[0], 2 * std::cos(pi / 6), 1e-8);
}

TEST(Retraction, RoundTrip) {
  const auto sphere = sode_of("sphere_chart");
  const double h = 0.5;
  Sampler rng(17);
  for (int i = 0; i < 30; ++i) {
    const Vector q = rng.uniform_cube(2, 0.5);
    const Vector v = rng.uniform_ball(2, 1.0);
    const auto [a, b] = exp_pair(sphere, h, q, v);
    const auto [ret, sol] = retraction_pair(sphere, h, a, b);
    EXPECT_LE((ret.minus - v).lpNorm<Eigen::Infinity>(), 1e-7);
    const auto end = flow(sphere, q, v, h);
    EXPECT_LE((ret.plus - end.final_y()).lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(H0, ClosedForms) {
  const auto euclid = h0_certificate(sode_of("euclidean"), scalar(0), 1.0, 2.0);
  EXPECT_EQ(euclid.h0, 10.0);
  EXPECT_EQ(euclid.C, 0.0);

  const auto harm = h0_certificate(sode_of("harmonic"), scalar(0), 1.0, 2.0);
  EXPECT_NEAR(harm.C, 1.0, 1e-9);
  EXPECT_NEAR(harm.Cdot, 0.0, 1e-9);
  EXPECT_NEAR(harm.M, 1.0, 1e-9);
  EXPECT_NEAR(harm.h0, 0.99 * 2 * std::sqrt(2.0), 1e-6);

  const auto pend = h0_certificate(sode_of("pendulum"), scalar(0), 0.5, 0.3);
  EXPECT_NEAR(pend.M, std::sin(0.5), 1e-9);
  EXPECT_NEAR(pend.C, 1.0, 1e-9);
  EXPECT_NEAR(pend.h0, 0.99 * 2 * 0.3 / std::sin(0.5), 1e-6);
  EXPECT_EQ(pend.binding, "fiber");
  // Certificate inequalities.
  for (const auto& c : {harm, pend}) {
    EXPECT_LT(c.C * c.h0 * c.h0 / 8 + c.Cdot * c.h0 / 2, 1.0);
    EXPECT_LE(c.M * c.h0 * c.h0 / 8, c.R);
    EXPECT_LE(c.M * c.h0 / 2, c.Rdot);
  }
  EXPECT_EQ(code_of([] { (void)h0_certificate(sode_of("pendulum"), scalar(0), 5.0, 1.0); }), ErrorCode::box_too_large);
}

TEST(H0, ShootingIsUniqueBelowTheCertificate) {
  for (const char* name : {"harmonic", "pendulum"}) {
    const auto sode = sode_of(name);
    const double r = 0.5;
    const double rdot = 0.6;
    const auto cert = h0_certificate(sode, scalar(0), r, rdot);
    const double h = 0.9 * cert.h0;
    const Vector target = scalar(0.2);
    const Vector reference = bvp_shoot(sode, h, scalar(0), target).v;
    Sampler rng(23);
    for (int i = 0; i < 10; ++i) {
      const Vector guess = rng.uniform_cube(1, rdot);
      EXPECT_LE((bvp_shoot(sode, h, scalar(0), target, guess).v - reference).norm(), 1e-6) << name;
    }
  }
}

TEST(Fibration, ProjectionIsPreserved) {
  const auto free = sode_of(InstanceSpec{"fibration_r3", {{"force1", std::string("0")}, {"force2", std::string("0")}}});
  const auto f = fibration_exp(free, 1, 1.0, vec({0, 0, 0}), vec({1, 0}));
  EXPECT_LE((f.end - vec({0, 1, 0})).norm(), 1e-12);
  EXPECT_EQ(f.projection_defect, 0.0);

  // At x = 0 the default force is harmonic in the fiber.
  const auto forced = sode_of("fibration_r3");
  const auto g = fibration_exp(forced, 1, 1.0, vec({0, 0, 0}), vec({1, 0}));
  EXPECT_LE((g.end - vec({0, std::sin(1.0), 0})).norm(), 1e-8);
  const auto traj = flow(forced, vec({0.7, 0.2, -0.4}), vec({0.3, 1.1}), 2.0);
  for (const auto& q : traj.q) EXPECT_LE(std::abs(q[0] - 0.7), 1e-10);

  const auto z = fibration_exp(forced, 1, 0.0, vec({0.5, 1, 2}), vec({1, 1}));
  EXPECT_EQ(z.start, z.end);
}

TEST(GroupoidExp, Examples) {
  const auto pair = build_model(InstanceSpec{"pair", {{"base", std::string("euclidean")}}});
  const LiftedSode lifted_pair = lift_sode(*pair.groupoid, *pair.sode);
  EXPECT_LE((groupoid_exp(lifted_pair, 0.5, scalar(0), scalar(2)) - vec({0, 1})).norm(), 1e-10);
  EXPECT_EQ(groupoid_exp(lifted_pair, 0.0, scalar(0.3), scalar(2)), vec({0.3, 0.3}));

  const auto rot = free_rotation();
  const LiftedSode lifted_rot = lift_sode(*rot.groupoid, *rot.sode);
  const Vector g = groupoid_exp(lifted_rot, 1.0, Vector(0), vec({0, 0, pi / 2}));
  Matrix expected(3, 3);
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LE((Matrix(so3::exp(so3::Vec3(g))) - expected).norm(), 1e-8);

  const auto harm_pair = build_model("pair");
  const LiftedSode lifted_harm = lift_sode(*harm_pair.groupoid, *harm_pair.sode);
  const auto traj = groupoid_flow(lifted_harm, 1.0, scalar(0.4), scalar(1.3));
  EXPECT_LE(alpha_drift(*harm_pair.groupoid, traj), 1e-12);
  // Second slot follows exp_pair of the base SODE.
  EXPECT_LE(std::abs(traj.final_q()[1] - exp_point(*harm_pair.sode, 1.0, scalar(0.4), scalar(1.3))[0]), 1e-8);
}

TEST(GroupoidBvp, Examples) {
  const auto rot = free_rotation();
  const LiftedSode lifted_rot = lift_sode(*rot.groupoid, *rot.sode);
  // Rotation logarithm oracle.
  const auto sol = groupoid_bvp(lifted_rot, 1.0, vec({0, 0, pi / 2}));
  EXPECT_LE((sol.retraction.minus - vec({0, 0, pi / 2})).norm(), 1e-8);
  EXPECT_LE((sol.retraction.plus - vec({0, 0, pi / 2})).norm(), 1e-8);

  const auto harm_pair = build_model("pair");
  const LiftedSode lifted_harm = lift_sode(*harm_pair.groupoid, *harm_pair.sode);
  const auto p = groupoid_bvp(lifted_harm, pi / 6, vec({0, 1}));
  EXPECT_NEAR(p.retraction.minus[0], 2.0, 1e-8);
  EXPECT_NEAR(p.retraction.plus[0], 2 * std::cos(pi / 6), 1e-8);
  EXPECT_NEAR(p.base.q.front()[0], 0.0, 1e-8);
  EXPECT_NEAR(p.base.q.back()[0], 1.0, 1e-8);

  // Units are reached by the zero vector when the SODE is a spray.
  const auto euclid_pair = build_model(InstanceSpec{"pair", {{"base", std::string("euclidean")}}});
  const auto unit = groupoid_bvp(lift_sode(*euclid_pair.groupoid, *euclid_pair.sode), 0.7, vec({0.3, 0.3}));
  EXPECT_LE(unit.retraction.minus.norm(), 1e-10);
  for (const auto& a : unit.path.a) EXPECT_LE(a.norm(), 1e-10);
  for (const auto& q : unit.path.q) EXPECT_NEAR(q[0], 0.3, 1e-10);
}

TEST(GroupoidBvp, CommutingDiagramAndReparametrization) {
  const auto inst = build_model("so3_rigid_body");
  const LiftedSode lifted = lift_sode(*inst.groupoid, *inst.sode);
  const double h = 0.8;
  const Vector g = vec({0.3, -0.4, 0.5});
  IntegratorConfig uniform;
  uniform.sample_interval = h / 64;
  const auto sol = groupoid_bvp(lifted, h, g, std::nullopt, {}, uniform);
  EXPECT_LE((sol.lifted.final_q() - g).norm(), 1e-8);
  const auto along = flow(*inst.sode, Vector(0), sol.retraction.minus, h);
  EXPECT_LE((along.final_y() - sol.retraction.plus).lpNorm<Eigen::Infinity>(), 1e-9);
  EXPECT_LE(unit_time_path_defect(*inst.groupoid, sol, h), 1e-6);

  NewtonConfig fd;
  fd.jacobian_mode = JacobianMode::finite_difference;
  const auto again = groupoid_bvp(lifted, h, g, std::nullopt, fd);
  EXPECT_LE((again.retraction.minus - sol.retraction.minus).norm(), 1e-8);
}

TEST(GroupoidBvp, FibrationGroupoidEndpoints) {
  const auto inst = build_model("fibration_groupoid");
  const LiftedSode lifted = lift_sode(*inst.groupoid, *inst.sode);
  const Vector g = vec({0.2, 0.1, -0.2, 0.4, 0.3});
  const auto sol = groupoid_bvp(lifted, 0.6, g);
  EXPECT_LE((sol.base.q.front() - inst.groupoid->source(g)).norm(), 1e-8);
  EXPECT_LE((sol.base.q.back() - inst.groupoid->target(g)).norm(), 1e-8);
}

TEST(ExpOne, QuadraticOnly) {
  const auto euclid = sode_of("euclidean");
  EXPECT_NEAR(exp_one(euclid, scalar(0), scalar(3)).second[0], 3.0, 1e-12);
  const auto [a, b] = exp_one(sode_of("sphere_chart"), vec({0.2, 0.1}), vec({0, 0}));
  EXPECT_EQ(a, b);
  EXPECT_EQ(code_of([] { (void)exp_one(sode_of("harmonic"), scalar(0), scalar(1)); }), ErrorCode::not_quadratic);
}

TEST(ExpOne, RayTracesTheGeodesic) {
  const auto sphere = sode_of("sphere_chart");
  const Vector q = vec({0.1, 0.3});
  const Vector v = vec({0.8, -0.5});
  for (double t : {0.25, 0.5, 0.75}) {
    const Vector direct = flow(sphere, q, v, t).final_q();
    EXPECT_LE((exp_one(sphere, q, Vector(t * v)).second - direct).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_LE(quadratic_rescale_defect(sphere, q, v, t, 1.0), 1e-8);
  }
}

TEST(ZeroSection, IdentityUnderTheSplitting) {
  const auto euclid = zero_section_jacobian(sode_of("euclidean"), scalar(0.5), 1e-4);
  EXPECT_LE((euclid - Matrix::Identity(2, 2)).norm(), 1e-12);
  const auto sphere = zero_section_jacobian(sode_of("sphere_chart"), vec({0, 0}), 1e-4);
  EXPECT_LE((sphere - Matrix::Identity(4, 4)).lpNorm<Eigen::Infinity>(), 1e-4);
  const auto rot = free_rotation();
  const auto group = zero_section_jacobian(lift_sode(*rot.groupoid, *rot.sode), Vector(0), 1e-4);
  EXPECT_LE((group - Matrix::Identity(3, 3)).lpNorm<Eigen::Infinity>(), 1e-4);
  EXPECT_EQ(code_of([] { (void)zero_section_jacobian(sode_of("harmonic"), scalar(0), 1e-4); }),
            ErrorCode::not_quadratic);
}
