/**
 * @file verify.hpp
 * @brief Invariant suite for built instances: each check reports a measured defect
 *        against a pinned tolerance.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "algsode/expmap.hpp"
#include "algsode/instances.hpp"

namespace algsode {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;  // error text when the check itself failed to run
};

struct VerifyReport {
  std::string instance;
  std::vector<CheckResult> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

struct VerifyConfig {
  int samples = 100;         // cheap pointwise checks
  int shooting_samples = 20;  // checks that solve a boundary value problem per sample
  double h = 0.5;
  double ball = 0.5;  // base points are drawn from the cube of this half-width around 0
};

namespace detail {

class CheckList {
 public:
  explicit CheckList(VerifyReport& report) : report_(report) {}

  void add(const std::string& name, double tolerance, const std::function<double()>& measure) {
    CheckResult c{name, 0.0, tolerance, false, {}};
    try {
      c.value = measure();
      c.passed = c.value <= tolerance;
    } catch (const Error& e) {
      c.value = kInf;
      c.note = e.what();
    }
    report_.checks.push_back(std::move(c));
  }

 private:
  VerifyReport& report_;
};

inline double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

inline Vector local_point(const ChartBox& box, Sampler& rng, double ball) {
  Vector q = rng.uniform_cube(box.dim(), ball);
  for (Index i = 0; i < q.size(); ++i) q[i] = std::clamp(q[i], box.lower[i] * 0.9, box.upper[i] * 0.9);
  return q;
}

inline void algebroid_checks(CheckList& list, const BuiltInstance& inst, std::uint64_t seed, const VerifyConfig& cfg) {
  list.add("structure antisymmetry", 1e-14, [&] { return antisymmetry_defect(inst.algebroid, cfg.samples, seed); });
  if (inst.algebroid.structure_is_constant()) {
    list.add("jacobi identity", 1e-12, [&] { return jacobi_defect(inst.algebroid).value_or(0.0); });
  }
}

inline void sode_checks(CheckList& list, const BuiltInstance& inst, std::uint64_t seed, const VerifyConfig& cfg) {
  const SodeField& sode = *inst.sode;
  const Index n = sode.base_dim();
  const Index k = sode.fiber_dim();
  const bool quadratic = homogeneity_defect(sode, cfg.samples, seed) <= kQuadraticTolerance;

  IntegratorConfig sampled;
  sampled.sample_interval = 0.01;
  list.add("admissibility", 1e-9, [&] {
    Sampler rng(seed);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      const Vector q = local_point(sode.model().base(), rng, cfg.ball);
      const Trajectory traj = flow(sode, q, rng.uniform_ball(k, 0.5), 0.5, sampled);
      detail::require_completed(traj);
      worst = std::max(worst, admissibility_defect(sode, traj));
    }
    return worst;
  });

  if (sode.has_quadratic_coefficients()) {
    list.add("spray homogeneity", 1e-12, [&] { return homogeneity_defect(sode, cfg.samples, seed); });
  }

  if (n > 0 && n == k) {
    list.add("variational jacobian vs finite differences", 1e-5, [&] {
      IntegratorConfig tight;
      tight.abs_tol = tight.rel_tol = 1e-13;
      Sampler rng(seed);
      double worst = 0.0;
      for (int i = 0; i < 5; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector v = rng.uniform_ball(k, 1.0);
        const Matrix u = variational_jacobian(sode, cfg.h, q, v, tight).U;
        const Matrix fd = fd_jacobian([&](const Vector& w) { return exp_point(sode, cfg.h, q, w, tight); }, v, 1e-4);
        worst = std::max(worst, (u - fd).norm() / fd.norm());
      }
      return worst;
    });

    // Round trips through the shooting solver, plus the commuting diagram and midpoint identity.
    list.add("retraction after exp", 1e-7, [&] {
      Sampler rng(seed);
      double worst = 0.0;
      for (int i = 0; i < cfg.shooting_samples; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector v = rng.uniform_ball(k, 1.0);
        const auto [a, b] = exp_pair(sode, cfg.h, q, v);
        worst = std::max(worst, inf_norm(retraction_pair(sode, cfg.h, a, b).first.minus - v));
      }
      return worst;
    });
    list.add("exp after retraction", 1e-7, [&] {
      Sampler rng(seed + 1);
      double worst = 0.0;
      for (int i = 0; i < cfg.shooting_samples; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector q_end = q + rng.uniform_ball(n, 0.3);
        const Vector v = retraction_pair(sode, cfg.h, q, q_end).first.minus;
        worst = std::max(worst, inf_norm(exp_point(sode, cfg.h, q, v) - q_end));
      }
      return worst;
    });
    list.add("commuting diagram", 1e-9, [&] {
      Sampler rng(seed + 2);
      double worst = 0.0;
      for (int i = 0; i < cfg.shooting_samples; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector q_end = q + rng.uniform_ball(n, 0.3);
        const RetractionPair r = retraction_pair(sode, cfg.h, q, q_end).first;
        const Trajectory traj = flow(sode, q, r.minus, cfg.h);
        detail::require_completed(traj);
        worst = std::max(worst, inf_norm(traj.final_y() - r.plus));
      }
      return worst;
    });
    list.add("midpoint identity", 1e-9, [&] {
      Sampler rng(seed + 3);
      double worst = 0.0;
      for (int i = 0; i < cfg.shooting_samples; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector v = rng.uniform_ball(k, 1.0);
        const Trajectory back = flow(sode, q, v, -cfg.h / 2);
        detail::require_completed(back);
        const auto [a, b] = exp_pair(sode, cfg.h, back.final_q(), back.final_y());
        const auto [m, p] = exp_mid(sode, cfg.h, q, v);
        worst = std::max({worst, inf_norm(a - m), inf_norm(b - p)});
      }
      return worst;
    });
  }

  if (quadratic && n > 0) {
    list.add("quadratic rescaling", 1e-8, [&] {
      Sampler rng(seed);
      double worst = 0.0;
      for (int i = 0; i < 10; ++i) {
        const Vector q = local_point(sode.model().base(), rng, cfg.ball);
        const Vector v = rng.uniform_ball(k, 0.5);
        for (double s : {0.5, 2.0}) worst = std::max(worst, quadratic_rescale_defect(sode, q, v, s, 0.5));
      }
      return worst;
    });
    if (n == k) {
      list.add("zero-section jacobian", 1e-4, [&] {
        const Matrix j = zero_section_jacobian(sode, Vector::Zero(n), 1e-4);
        return (j - Matrix::Identity(j.rows(), j.cols())).lpNorm<Eigen::Infinity>();
      });
    }
  }

  if (inst.fibration_base) {
    const Index m = *inst.fibration_base;
    list.add("fibration base drift", 1e-10, [&] {
      Sampler rng(seed);
      double worst = 0.0;
      for (int i = 0; i < 50; ++i) {
        const Trajectory traj =
            flow(sode, local_point(sode.model().base(), rng, cfg.ball), rng.uniform_ball(k, 1.0), 2.0);
        detail::require_completed(traj);
        for (const auto& q : traj.q) worst = std::max(worst, inf_norm(Vector(q.head(m) - traj.q.front().head(m))));
      }
      return worst;
    });
  }
}

inline void groupoid_checks(CheckList& list, const BuiltInstance& inst, std::uint64_t seed, const VerifyConfig& cfg) {
  const GroupoidModel& gpd = *inst.groupoid;
  const SodeField& sode = *inst.sode;
  list.add("groupoid axioms", 1e-10, [&] { return groupoid_axiom_defects(gpd, cfg.samples, seed).worst(); });
  list.add("groupoid anchor", 1e-7, [&] { return groupoid_anchor_check(gpd, cfg.samples, seed); });
  list.add("psi at units", 1e-14, [&] {
    Sampler rng(seed);
    double worst = 0.0;
    for (int i = 0; i < cfg.samples; ++i) {
      const Vector q = gpd.base_dim() ? gpd.base().sample(rng, 0.5) : Vector(0);
      const Matrix p = gpd.psi_matrix(gpd.identity(q)) * gpd.algebroid_frame(q);
      worst = std::max(worst, (p - Matrix::Identity(p.rows(), p.cols())).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  const LiftedSode lifted = lift_sode(gpd, sode);
  list.add("lifted relatedness (psi defect)", 1e-6, [&] { return psi_defect(gpd, lifted, sode, cfg.samples, seed); });
  list.add("lift is a SODE", 1e-10, [&] {
    Sampler rng(seed);
    double worst = 0.0;
    for (int i = 0; i < cfg.samples; ++i) {
      const auto [g, v] = sample_vertical(gpd, rng, 0.5, 1.0);
      worst = std::max(worst, inf_norm(lifted.base_velocity(g, v) - v));
    }
    return worst;
  });
  list.add("lift independent of auxiliary", 1e-8, [&] {
    const LiftedSode other =
        lift_sode(gpd, sode, [](const Vector& g, const Vector& v) { return Vector(0.5 * g.cwiseProduct(v) - v); });
    Sampler rng(seed);
    double worst = 0.0;
    for (int i = 0; i < cfg.samples; ++i) {
      const auto [g, v] = sample_vertical(gpd, rng, 0.5, 1.0);
      worst = std::max(worst, inf_norm(lifted.fiber_acceleration(g, v) - other.fiber_acceleration(g, v)));
    }
    return worst;
  });
  const bool quadratic = homogeneity_defect(sode, cfg.samples, seed) <= kQuadraticTolerance;
  if (quadratic) {
    list.add("lifted homogeneity", 1e-8, [&] { return lifted_homogeneity_defect(gpd, lifted, cfg.samples, seed); });
  }

  if (gpd.has_fiber_chart()) {
    // Shooting inside alpha-fibers, checked on elements reached by the lifted flow.
    list.add("groupoid bvp endpoints", 1e-8, [&] {
      Sampler rng(seed);
      double worst = 0.0;
      for (int i = 0; i < 5; ++i) {
        const Vector q = gpd.base_dim() ? local_point(gpd.base(), rng, cfg.ball) : Vector(0);
        const Vector a = rng.uniform_ball(gpd.rank(), 0.8);
        const Vector g = groupoid_exp(lifted, cfg.h, q, a);
        const GroupoidBvpSolution sol = groupoid_bvp(lifted, cfg.h, g);
        worst = std::max({worst, inf_norm(sol.retraction.minus - a), inf_norm(sol.base.q.front() - gpd.source(g)),
                          inf_norm(sol.base.q.back() - gpd.target(g)), inf_norm(sol.lifted.final_q() - g)});
      }
      return worst;
    });
    list.add("unit-time path identity", 1e-6, [&] {
      IntegratorConfig uniform;
      uniform.sample_interval = cfg.h / 64;
      Sampler rng(seed + 1);
      const Vector q = gpd.base_dim() ? local_point(gpd.base(), rng, cfg.ball) : Vector(0);
      const Vector g = groupoid_exp(lifted, cfg.h, q, rng.uniform_ball(gpd.rank(), 0.8));
      return unit_time_path_defect(gpd, groupoid_bvp(lifted, cfg.h, g, std::nullopt, {}, uniform), cfg.h);
    });
  }
  if (quadratic) {
    list.add("groupoid zero-section jacobian", 1e-4, [&] {
      const Vector q = Vector::Zero(gpd.base_dim());
      const Matrix j = zero_section_jacobian(lifted, q, 1e-4);
      return (j - Matrix::Identity(j.rows(), j.cols())).lpNorm<Eigen::Infinity>();
    });
  }
}

}  // namespace detail

/// Runs every check that applies to the instance (algebroid, SODE, fibration, groupoid).
[[nodiscard]] inline VerifyReport verify_instance(const BuiltInstance& inst, std::uint64_t seed = 0,
                                                  const VerifyConfig& cfg = {}) {
  VerifyReport report;
  report.instance = inst.name;
  detail::CheckList list(report);
  detail::algebroid_checks(list, inst, seed, cfg);
  if (inst.sode) detail::sode_checks(list, inst, seed, cfg);
  if (inst.groupoid && inst.sode) detail::groupoid_checks(list, inst, seed, cfg);
  return report;
}

}  // namespace algsode
