/**
 * @file expmap.hpp
 * @brief Exponential maps of SODEs, their variational Jacobians, Newton shooting for the
 *        two-point problem, certified step bounds and exact retraction maps, plus the
 *        fibration, groupoid and homogeneous-quadratic variants.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "algsode/algebroid.hpp"
#include "algsode/error.hpp"
#include "algsode/groupoid.hpp"
#include "algsode/numerics.hpp"

namespace algsode {

namespace detail {

inline void require_time(double h) {
  if (!(h >= 0.0) || !std::isfinite(h)) throw Error(ErrorCode::invalid_argument, "h must be finite and >= 0");
}

template <SodeSystem S>
void require_in_chart(const S& sys, const Vector& q) {
  if (q.size() != sys.base_dim()) throw Error(ErrorCode::dimension_mismatch, "base point has the wrong size");
  if (!sys.contains(q)) throw Error(ErrorCode::out_of_chart, "base point outside the chart");
}

inline double max_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace detail

/// Base point of the time-h flow from (q0, v).
template <SodeSystem S>
[[nodiscard]] Vector exp_point(const S& sys, double h, const Vector& q0, const Vector& v,
                               const IntegratorConfig& cfg = {}) {
  detail::require_time(h);
  detail::require_in_chart(sys, q0);
  if (h == 0.0) return q0;
  const Trajectory traj = flow(sys, q0, v, h, cfg);
  detail::require_completed(traj);
  return traj.final_q();
}

/// (q0, exp_point(h, q0, v)).
template <SodeSystem S>
[[nodiscard]] std::pair<Vector, Vector> exp_pair(const S& sys, double h, const Vector& q0, const Vector& v,
                                                 const IntegratorConfig& cfg = {}) {
  return {q0, exp_point(sys, h, q0, v, cfg)};
}

/// Symmetric variant: base points of the flow at -h/2 and +h/2.
template <SodeSystem S>
[[nodiscard]] std::pair<Vector, Vector> exp_mid(const S& sys, double h, const Vector& q0, const Vector& v,
                                                const IntegratorConfig& cfg = {}) {
  detail::require_time(h);
  detail::require_in_chart(sys, q0);
  if (h == 0.0) return {q0, q0};
  const Trajectory back = flow(sys, q0, v, -0.5 * h, cfg);
  detail::require_completed(back);
  const Trajectory fwd = flow(sys, q0, v, 0.5 * h, cfg);
  detail::require_completed(fwd);
  return {back.final_q(), fwd.final_q()};
}

/// Central finite-difference Jacobian of (q, v) -> exp_pair(h, q, v), size 2n x (n + k).
template <SodeSystem S>
[[nodiscard]] Matrix exp_pair_jacobian(const S& sys, double h, const Vector& q0, const Vector& v, double step,
                                       const IntegratorConfig& cfg = {}) {
  const Index n = sys.base_dim();
  const Index k = sys.fiber_dim();
  Vector x(n + k);
  x << q0, v;
  auto f = [&](const Vector& z) {
    Vector out(2 * n);
    out << z.head(n), exp_point(sys, h, Vector(z.head(n)), Vector(z.tail(k)), cfg);
    return out;
  };
  return fd_jacobian(f, x, step);
}

/// Solution of the variational system along the flow from (q0, v): U = dq(t)/dv, Udot = dy(t)/dv.
struct VariationalState {
  Matrix U;
  Matrix Udot;
  Trajectory along;
};

template <SodeSystem S>
[[nodiscard]] VariationalState variational_jacobian(const S& sys, double h, const Vector& q0, const Vector& v,
                                                    const IntegratorConfig& cfg = {}) {
  detail::require_time(h);
  detail::require_in_chart(sys, q0);
  const Index n = sys.base_dim();
  const Index k = sys.fiber_dim();
  Matrix s0 = Matrix::Zero(n + k, k);
  s0.bottomRows(k).setIdentity();
  SensitivityFlow res = flow_with_sensitivity(sys, q0, v, s0, h, cfg);
  detail::require_completed(res.trajectory);
  return {res.sensitivity.topRows(n), res.sensitivity.bottomRows(k), std::move(res.trajectory)};
}

/// Connecting trajectory of the two-point problem.
struct BvpSolution {
  Vector v;  // initial fiber vector
  Trajectory trajectory;
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

template <SodeSystem S>
Vector secant_guess(const S& sys, double h, const Vector& q, const Vector& q_end) {
  const Vector chord = (q_end - q) / h;
  if constexpr (std::same_as<S, SodeField>) {
    if (!sys.is_tangent_type()) {
      return sys.model().anchor_matrix(q).completeOrthogonalDecomposition().solve(chord);
    }
  }
  return chord;
}

[[noreturn]] inline void throw_newton_failure(const NewtonReport& rep) {
  std::string best;
  for (Index i = 0; i < rep.x.size(); ++i) best += (i ? "," : "") + std::to_string(rep.x[i]);
  const std::string msg = rep.message + " (best iterate (" + best + "), residual " +
                          std::to_string(rep.residual_norm) + ", " + std::to_string(rep.iterations) + " iterations)";
  throw Error(rep.status == NewtonStatus::singular_jacobian ? ErrorCode::singular_jacobian : ErrorCode::no_convergence,
              msg);
}

}  // namespace detail

/// Smallest h accepted by the shooting solvers.
inline constexpr double kMinShootingTime = 1e-9;

/**
 * @brief Newton shooting for exp_point(h, q, v) = q_end.
 *
 * The default initial guess is the chart secant (q_end - q)/h. Each step solves
 * U(h) dv = -(exp_point(h, q, v) - q_end) with U from the variational system (or
 * finite differences). Requires base dimension = fiber rank.
 */
template <SodeSystem S>
[[nodiscard]] BvpSolution bvp_shoot(const S& sys, double h, const Vector& q, const Vector& q_end,
                                    const std::optional<Vector>& guess = std::nullopt, const NewtonConfig& ncfg = {},
                                    const IntegratorConfig& icfg = {}) {
  detail::require_in_chart(sys, q);
  detail::require_in_chart(sys, q_end);
  if (sys.base_dim() != sys.fiber_dim()) {
    throw Error(ErrorCode::invalid_argument, "shooting needs base dimension equal to the fiber rank");
  }
  if (!(h >= kMinShootingTime)) throw Error(ErrorCode::h_too_small, "h must be at least 1e-9");
  const Vector v0 = guess ? *guess : detail::secant_guess(sys, h, q, q_end);
  if (v0.size() != sys.fiber_dim()) throw Error(ErrorCode::dimension_mismatch, "guess has the wrong size");

  // U(h) ~ h Id for short times; a U far below that scale is a conjugate point.
  NewtonConfig cfg = ncfg;
  if (cfg.jacobian_scale == 0.0) cfg.jacobian_scale = h;
  auto residual = [&](const Vector& v) { return Vector(exp_point(sys, h, q, v, icfg) - q_end); };
  NewtonReport rep;
  if (cfg.jacobian_mode == JacobianMode::variational) {
    auto jac = [&](const Vector& v) { return variational_jacobian(sys, h, q, v, icfg).U; };
    rep = newton_solve(residual, jac, v0, cfg);
  } else {
    rep = newton_solve(residual, v0, cfg);
  }
  if (!rep.converged()) detail::throw_newton_failure(rep);
  BvpSolution sol;
  sol.v = rep.x;
  sol.residual = rep.residual_norm;
  sol.iterations = rep.iterations;
  sol.trajectory = flow(sys, q, sol.v, h, icfg);
  return sol;
}

/// Initial (minus) and final (plus) fiber data of the connecting trajectory.
struct RetractionPair {
  Vector minus;
  Vector plus;
};

template <SodeSystem S>
[[nodiscard]] std::pair<RetractionPair, BvpSolution> retraction_pair(const S& sys, double h, const Vector& q,
                                                                     const Vector& q_end,
                                                                     const std::optional<Vector>& guess = std::nullopt,
                                                                     const NewtonConfig& ncfg = {},
                                                                     const IntegratorConfig& icfg = {}) {
  BvpSolution sol = bvp_shoot(sys, h, q, q_end, guess, ncfg, icfg);
  detail::require_completed(sol.trajectory);
  RetractionPair pair{sol.v, sol.trajectory.final_y()};
  return {std::move(pair), std::move(sol)};
}

// ---------------------------------------------------------------------------
// Step-size certificate

struct H0Config {
  double margin = 0.01;
  double h_max = 10.0;
  int grid_points = 11;          // per axis, including the box faces
  long max_grid_points = 200000;  // total cap; fewer points per axis in high dimension
  int random_samples = 1000;
  double inflation = 1.0;  // multiplier on the sampled maxima
  bool refine = true;      // local ascent from the best samples

  void validate() const {
    if (!(margin > 0.0 && margin < 1.0)) throw Error(ErrorCode::invalid_argument, "margin must lie in (0, 1)");
    if (!(h_max > 0.0)) throw Error(ErrorCode::invalid_argument, "h_max must be > 0");
    if (grid_points < 2) throw Error(ErrorCode::invalid_argument, "grid_points must be >= 2");
    if (random_samples < 0) throw Error(ErrorCode::invalid_argument, "random_samples must be >= 0");
    if (!(inflation >= 1.0)) throw Error(ErrorCode::invalid_argument, "inflation must be >= 1");
  }
};

struct H0Certificate {
  double C = 0.0;     // bound on |D_q xi|
  double Cdot = 0.0;  // bound on |D_qdot xi|
  double M = 0.0;     // bound on |xi|
  double R = 0.0;
  double Rdot = 0.0;
  double margin = 0.0;
  double h0 = 0.0;
  double lipschitz_bound = kInf;  // root of C t^2/8 + Cdot t/2 = 1
  double base_bound = kInf;       // sqrt(8 R / M)
  double fiber_bound = kInf;      // 2 Rdot / M
  std::string binding;            // which bound (or h_max) fixed h0
  Vector q0;
  long grid_points_per_axis = 0;
  long evaluations = 0;
};

namespace detail {

/// Positive root of c t^2 / 8 + cdot t / 2 = 1.
inline double lipschitz_root(double c, double cdot) {
  if (c <= 0.0 && cdot <= 0.0) return kInf;
  if (c <= 0.0) return 2.0 / cdot;
  return (-cdot / 2.0 + std::sqrt(cdot * cdot / 4.0 + c / 2.0)) / (c / 4.0);
}

/// Induced max-norm of a matrix (largest absolute row sum).
inline double max_row_sum(const Matrix& m) { return m.size() ? m.cwiseAbs().rowwise().sum().maxCoeff() : 0.0; }

}  // namespace detail

/**
 * @brief Step bound h0 guaranteeing a unique connecting trajectory on the box
 *        |q - q0| <= R, |qdot| <= Rdot (max-norms).
 *
 * C, Cdot and M are maxima of |D_q xi|, |D_qdot xi| and |xi| sampled on a grid over the
 * box plus seeded random points, optionally improved by local ascent and inflated. Then
 * h0 = (1 - margin) min(lipschitz root, sqrt(8R/M), 2 Rdot/M), capped by h_max.
 */
[[nodiscard]] inline H0Certificate h0_certificate(const SodeField& sode, const Vector& q0, double R, double Rdot,
                                                  const H0Config& cfg = {}, std::uint64_t seed = 0) {
  cfg.validate();
  if (!sode.is_tangent_type()) throw Error(ErrorCode::invalid_argument, "certificate needs a tangent-type SODE");
  if (!(R > 0.0) || !(Rdot > 0.0)) throw Error(ErrorCode::invalid_argument, "R and Rdot must be > 0");
  const Index n = sode.base_dim();
  if (q0.size() != n) throw Error(ErrorCode::dimension_mismatch, "q0 has the wrong size");
  const ChartBox& chart = sode.model().base();
  for (Index i = 0; i < n; ++i) {
    if (q0[i] - R < chart.lower[i] || q0[i] + R > chart.upper[i]) {
      throw Error(ErrorCode::box_too_large, "certificate box leaves the chart");
    }
  }
  if (std::isfinite(chart.radius) && (q0.cwiseAbs().array() + R).matrix().norm() >= chart.radius) {
    throw Error(ErrorCode::box_too_large, "certificate box leaves the chart");
  }

  const Index dim = 2 * n;
  Vector lo(dim);
  Vector hi(dim);
  lo << q0.array() - R, Vector::Constant(n, -Rdot);
  hi << q0.array() + R, Vector::Constant(n, Rdot);

  H0Certificate cert;
  cert.R = R;
  cert.Rdot = Rdot;
  cert.margin = cfg.margin;
  cert.q0 = q0;

  // Quantities sampled at z = (q, qdot): |D_q xi|, |D_qdot xi|, |xi|.
  auto measure = [&](const Vector& z) {
    ++cert.evaluations;
    const Vector q = z.head(n);
    const Vector y = z.tail(n);
    const Matrix jac = sode.rhs_jacobian(q, y);
    return std::array<double, 3>{detail::max_row_sum(jac.block(n, 0, n, n)), detail::max_row_sum(jac.block(n, n, n, n)),
                                 detail::max_norm(sode.fiber_acceleration(q, y))};
  };
  std::array<double, 3> best{0.0, 0.0, 0.0};
  constexpr int kKeep = 5;
  std::array<std::vector<std::pair<double, Vector>>, 3> leaders;
  auto record = [&](const Vector& z) {
    const auto m = measure(z);
    for (int c = 0; c < 3; ++c) {
      best[c] = std::max(best[c], m[c]);
      auto& lead = leaders[c];
      if (static_cast<int>(lead.size()) < kKeep || m[c] > lead.back().first) {
        lead.emplace_back(m[c], z);
        std::sort(lead.begin(), lead.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        if (static_cast<int>(lead.size()) > kKeep) lead.pop_back();
      }
    }
  };

  if (dim > 0) {
    long per_axis = cfg.grid_points;
    while (per_axis > 2 && std::pow(static_cast<double>(per_axis), static_cast<double>(dim)) >
                               static_cast<double>(cfg.max_grid_points)) {
      --per_axis;
    }
    cert.grid_points_per_axis = per_axis;
    std::vector<long> idx(static_cast<std::size_t>(dim), 0);
    Vector z(dim);
    while (true) {
      for (Index i = 0; i < dim; ++i) {
        z[i] = lo[i] + (hi[i] - lo[i]) * static_cast<double>(idx[static_cast<std::size_t>(i)]) /
                           static_cast<double>(per_axis - 1);
      }
      record(z);
      Index axis = 0;
      while (axis < dim && ++idx[static_cast<std::size_t>(axis)] == per_axis) idx[static_cast<std::size_t>(axis++)] = 0;
      if (axis == dim) break;
    }
    Sampler rng(seed);
    for (int i = 0; i < cfg.random_samples; ++i) record(rng.uniform(lo, hi));

    if (cfg.refine) {
      // Projected coordinate ascent from the leading samples of each quantity.
      for (int c = 0; c < 3; ++c) {
        for (const auto& [value, start] : leaders[c]) {
          Vector z_best = start;
          double f_best = value;
          double step = 0.5 / static_cast<double>(per_axis - 1);
          for (int round = 0; round < 30 && step > 1e-9; ++round) {
            bool improved = false;
            for (Index i = 0; i < dim; ++i) {
              for (double sign : {1.0, -1.0}) {
                Vector trial = z_best;
                trial[i] = std::clamp(trial[i] + sign * step * (hi[i] - lo[i]), lo[i], hi[i]);
                const double f = measure(trial)[c];
                best[c] = std::max(best[c], f);
                if (f > f_best) {
                  f_best = f;
                  z_best = trial;
                  improved = true;
                }
              }
            }
            if (!improved) step *= 0.5;
          }
        }
      }
    }
  }

  cert.C = cfg.inflation * best[0];
  cert.Cdot = cfg.inflation * best[1];
  cert.M = cfg.inflation * best[2];
  cert.lipschitz_bound = detail::lipschitz_root(cert.C, cert.Cdot);
  cert.base_bound = cert.M > 0.0 ? std::sqrt(8.0 * R / cert.M) : kInf;
  cert.fiber_bound = cert.M > 0.0 ? 2.0 * Rdot / cert.M : kInf;
  double bound = cert.lipschitz_bound;
  cert.binding = "lipschitz";
  if (cert.base_bound < bound) {
    bound = cert.base_bound;
    cert.binding = "base";
  }
  if (cert.fiber_bound < bound) {
    bound = cert.fiber_bound;
    cert.binding = "fiber";
  }
  cert.h0 = (1.0 - cfg.margin) * bound;
  if (!(cert.h0 <= cfg.h_max)) {
    cert.h0 = cfg.h_max;
    cert.binding = "h_max";
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Fibrations

struct FibrationExp {
  Vector start;
  Vector end;
  double projection_defect = 0.0;  // |pi(end) - pi(start)|
};

/**
 * @brief Exponential pair of a SODE on the vertical bundle of the projection onto the
 *        first `base_coords` coordinates.
 */
template <SodeSystem S>
[[nodiscard]] FibrationExp fibration_exp(const S& sys, Index base_coords, double h, const Vector& q, const Vector& v,
                                         const IntegratorConfig& cfg = {}) {
  if (base_coords < 0 || base_coords > sys.base_dim()) {
    throw Error(ErrorCode::invalid_argument, "projection dimension out of range");
  }
  auto [start, end] = exp_pair(sys, h, q, v, cfg);
  const double defect = detail::max_norm(Vector(end.head(base_coords) - start.head(base_coords)));
  return {std::move(start), std::move(end), defect};
}

// ---------------------------------------------------------------------------
// Groupoids

/// Flow of the lifted SODE from (eps(q), E(q) a) for time h.
[[nodiscard]] inline Trajectory groupoid_flow(const LiftedSode& lifted, double h, const Vector& q, const Vector& a,
                                              const IntegratorConfig& cfg = {}) {
  detail::require_time(h);
  const GroupoidModel& gpd = lifted.groupoid();
  if (q.size() != gpd.base_dim() || a.size() != gpd.rank()) {
    throw Error(ErrorCode::dimension_mismatch, "groupoid_exp: wrong argument sizes");
  }
  if (gpd.base_dim() > 0 && !gpd.base().contains(q)) throw Error(ErrorCode::out_of_chart, "base point outside the chart");
  return flow(lifted, gpd.identity(q), Vector(gpd.algebroid_frame(q) * a), h, cfg);
}

/// G-position of the lifted flow from a in the algebroid fiber over q.
[[nodiscard]] inline Vector groupoid_exp(const LiftedSode& lifted, double h, const Vector& q, const Vector& a,
                                         const IntegratorConfig& cfg = {}) {
  if (h == 0.0) return lifted.groupoid().identity(q);
  const Trajectory traj = groupoid_flow(lifted, h, q, a, cfg);
  detail::require_completed(traj);
  return traj.final_q();
}

/// Max drift of alpha along a lifted trajectory (alpha-fibers are invariant).
[[nodiscard]] inline double alpha_drift(const GroupoidModel& gpd, const Trajectory& traj) {
  if (traj.size() == 0 || gpd.base_dim() == 0) return 0.0;
  const Vector a0 = gpd.source(traj.q.front());
  double worst = 0.0;
  for (const auto& g : traj.q) worst = std::max(worst, detail::max_norm(Vector(gpd.source(g) - a0)));
  return worst;
}

/// Algebroid-valued curve a(t) = Psi(sigma'(t)) over the base curve beta(sigma(t)).
struct AlgebroidPath {
  std::vector<double> t;
  std::vector<Vector> q;
  std::vector<Vector> a;
};

struct GroupoidBvpSolution {
  RetractionPair retraction;  // minus in the fiber over alpha(g), plus over beta(g)
  AlgebroidPath path;
  Trajectory base;     // (beta(sigma(t)), a(t))
  Trajectory lifted;   // (sigma(t), sigma'(t))
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

inline AlgebroidPath algebroid_path(const GroupoidModel& gpd, const Trajectory& lifted) {
  AlgebroidPath path;
  path.t = lifted.t;
  for (std::size_t i = 0; i < lifted.size(); ++i) {
    path.q.push_back(gpd.target(lifted.q[i]));
    path.a.push_back(gpd.psi_matrix(lifted.q[i]) * lifted.y[i]);
  }
  return path;
}

}  // namespace detail

/**
 * @brief Shooting inside the alpha-fiber through g: find a over alpha(g) with
 *        groupoid_exp(h, alpha(g), a) = g.
 *
 * The residual is measured in the alpha-fiber chart (fiber_coords).
 */
[[nodiscard]] inline GroupoidBvpSolution groupoid_bvp(const LiftedSode& lifted, double h, const Vector& g,
                                                      const std::optional<Vector>& guess = std::nullopt,
                                                      const NewtonConfig& ncfg = {}, const IntegratorConfig& icfg = {}) {
  const GroupoidModel& gpd = lifted.groupoid();
  if (g.size() != gpd.element_dim()) throw Error(ErrorCode::dimension_mismatch, "element has the wrong size");
  if (!gpd.contains(g)) throw Error(ErrorCode::out_of_chart, "element outside the chart");
  if (!(h >= kMinShootingTime)) throw Error(ErrorCode::h_too_small, "h must be at least 1e-9");
  const Index k = gpd.rank();
  const Vector q = gpd.source(g);
  const Vector target_coords = gpd.fiber_coords(g);
  const Matrix frame = gpd.algebroid_frame(q);

  Vector a0;
  if (guess) {
    a0 = *guess;
  } else {
    // Secant in the fiber chart, pulled back to algebroid coordinates.
    const Matrix embed_jac =
        fd_jacobian([&](const Vector& u) { return gpd.fiber_embed(q, u); }, Vector::Zero(k), 1e-6);
    a0 = frame.completeOrthogonalDecomposition().solve(Vector(embed_jac * target_coords)) / h;
  }
  if (a0.size() != k) throw Error(ErrorCode::dimension_mismatch, "guess has the wrong size");

  auto residual = [&](const Vector& a) {
    return Vector(gpd.fiber_coords(groupoid_exp(lifted, h, q, a, icfg)) - target_coords);
  };
  NewtonConfig cfg = ncfg;
  if (cfg.jacobian_scale == 0.0) cfg.jacobian_scale = h;
  NewtonReport rep;
  if (cfg.jacobian_mode == JacobianMode::variational) {
    const Index big_n = gpd.element_dim();
    Matrix s0 = Matrix::Zero(2 * big_n, k);
    s0.bottomRows(big_n) = frame;
    auto jac = [&](const Vector& a) {
      SensitivityFlow res = flow_with_sensitivity(lifted, gpd.identity(q), Vector(frame * a), s0, h, icfg);
      detail::require_completed(res.trajectory);
      const Vector end = res.trajectory.final_q();
      const Matrix dcoords = fd_jacobian([&](const Vector& x) { return gpd.fiber_coords(x); }, end,
                                         1e-6 * (1.0 + end.norm()));
      return Matrix(dcoords * res.sensitivity.topRows(big_n));
    };
    rep = newton_solve(residual, jac, a0, cfg);
  } else {
    rep = newton_solve(residual, a0, cfg);
  }
  if (!rep.converged()) detail::throw_newton_failure(rep);

  GroupoidBvpSolution sol;
  sol.residual = rep.residual_norm;
  sol.iterations = rep.iterations;
  sol.lifted = groupoid_flow(lifted, h, q, rep.x, icfg);
  detail::require_completed(sol.lifted);
  sol.path = detail::algebroid_path(gpd, sol.lifted);
  sol.base.t = sol.path.t;
  sol.base.q = sol.path.q;
  sol.base.y = sol.path.a;
  sol.retraction = {rep.x, sol.path.a.back()};
  return sol;
}

/**
 * @brief Unit-time reparametrization check for a groupoid BVP solution on a uniform grid:
 *        abar(s) = h a(s h) against Psi(d sigmabar / ds) with sigmabar(s) = sigma(s h).
 *
 * Returns the max residual over interior samples (derivative by a 7-point stencil).
 */
[[nodiscard]] inline double unit_time_path_defect(const GroupoidModel& gpd, const GroupoidBvpSolution& sol, double h) {
  const Trajectory& lifted = sol.lifted;
  const int count = static_cast<int>(lifted.size());
  constexpr int kHalf = 3;
  double worst = 0.0;
  for (int i = kHalf; i + kHalf < count; ++i) {
    std::vector<double> nodes;
    for (int j = i - kHalf; j <= i + kHalf; ++j) nodes.push_back(lifted.t[static_cast<std::size_t>(j)] / h);
    const auto w = derivative_weights(lifted.t[static_cast<std::size_t>(i)] / h, nodes);
    Vector dsigma = Vector::Zero(gpd.element_dim());
    for (int j = 0; j <= 2 * kHalf; ++j) {
      dsigma += w[static_cast<std::size_t>(j)] * lifted.q[static_cast<std::size_t>(i - kHalf + j)];
    }
    const Vector abar = h * sol.path.a[static_cast<std::size_t>(i)];
    const Vector psi = gpd.psi_matrix(lifted.q[static_cast<std::size_t>(i)]) * dsigma;
    worst = std::max(worst, detail::max_norm(Vector(abar - psi)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Homogeneous quadratic SODEs

/// Threshold on homogeneity_defect for treating a SODE as homogeneous quadratic.
inline constexpr double kQuadraticTolerance = 1e-10;

namespace detail {

inline void require_quadratic(const SodeField& sode) {
  const double defect = homogeneity_defect(sode, 100, 0);
  if (defect > kQuadraticTolerance) {
    throw Error(ErrorCode::not_quadratic, "SODE is not homogeneous quadratic (defect " + std::to_string(defect) + ")");
  }
}

}  // namespace detail

/// Exponential map at h = 1 of a homogeneous quadratic SODE.
[[nodiscard]] inline std::pair<Vector, Vector> exp_one(const SodeField& sode, const Vector& q, const Vector& v,
                                                       const IntegratorConfig& cfg = {}) {
  detail::require_quadratic(sode);
  return exp_pair(sode, 1.0, q, v, cfg);
}

/**
 * @brief Finite-difference Jacobian of (q, v) -> exp_one(q, v) at the zero vector over q,
 *        under the identification (a, b) -> (a, b - a) of T(Q x Q) at (q, q) with T_qQ x T_qQ.
 */
[[nodiscard]] inline Matrix zero_section_jacobian(const SodeField& sode, const Vector& q, double step,
                                                  const IntegratorConfig& cfg = {}) {
  detail::require_quadratic(sode);
  if (!sode.is_tangent_type()) throw Error(ErrorCode::invalid_argument, "zero_section_jacobian needs a tangent-type SODE");
  const Index n = sode.base_dim();
  const Matrix raw = exp_pair_jacobian(sode, 1.0, q, Vector::Zero(n), step, cfg);
  Matrix ident = raw;
  ident.bottomRows(n) -= raw.topRows(n);
  return ident;
}

/**
 * @brief Finite-difference Jacobian of (q, a) -> groupoid_exp(1, q, a) at a = 0, expressed
 *        in the splitting T_{eps(q)}G = T eps(T_qQ) + E(q) A_qG.
 */
[[nodiscard]] inline Matrix zero_section_jacobian(const LiftedSode& lifted, const Vector& q, double step,
                                                  const IntegratorConfig& cfg = {}) {
  detail::require_quadratic(lifted.algebroid_sode());
  const GroupoidModel& gpd = lifted.groupoid();
  const Index n = gpd.base_dim();
  const Index k = gpd.rank();
  Vector x = Vector::Zero(n + k);
  x.head(n) = q;
  const Matrix raw = fd_jacobian(
      [&](const Vector& z) { return groupoid_exp(lifted, 1.0, Vector(z.head(n)), Vector(z.tail(k)), cfg); }, x, step);
  Matrix split(gpd.element_dim(), n + k);
  if (n > 0) split.leftCols(n) = fd_jacobian([&](const Vector& p) { return gpd.identity(p); }, q, step);
  split.rightCols(k) = gpd.algebroid_frame(q);
  return split.fullPivLu().solve(raw);
}

}  // namespace algsode
