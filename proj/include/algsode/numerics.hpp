/**
 * @file numerics.hpp
 * @brief Dense numerics: Runge-Kutta initial value integration, damped Newton,
 *        central finite differences and a seeded sampler.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "algsode/error.hpp"

namespace algsode {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class IntegrationMethod { rk4, dopri45 };

struct IntegratorConfig {
  IntegrationMethod method = IntegrationMethod::dopri45;
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  int max_steps = 200000;
  /// Step size of the fixed-step method; first trial step of the adaptive one.
  double initial_step = 1e-3;
  /// When positive, samples are recorded on the uniform grid t = j * sample_interval
  /// (the integrator lands on every grid point); otherwise at every accepted step.
  double sample_interval = 0.0;
  /// Number of leading state components under error control (0 = all).
  Index error_dims = 0;

  void validate() const {
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "integrator tolerances must be positive");
    }
    if (max_steps < 1) throw Error(ErrorCode::invalid_argument, "max_steps must be >= 1");
    if (!(initial_step > 0.0)) throw Error(ErrorCode::invalid_argument, "initial_step must be > 0");
    if (sample_interval < 0.0) throw Error(ErrorCode::invalid_argument, "sample_interval must be >= 0");
  }
};

enum class IvpStatus { completed, left_domain, failure };

[[nodiscard]] inline std::string_view to_string(IvpStatus s) noexcept {
  switch (s) {
    case IvpStatus::completed: return "completed";
    case IvpStatus::left_domain: return "left-domain";
    case IvpStatus::failure: return "stiff/failure";
  }
  return "unknown";
}

struct IvpSolution {
  std::vector<double> t;
  std::vector<Vector> x;
  IvpStatus status = IvpStatus::completed;
  double t_exit = kInf;  // first accepted time observed outside the domain
  std::string message;
  int accepted = 0;
  int rejected = 0;

  [[nodiscard]] const Vector& final_state() const { return x.back(); }
  [[nodiscard]] double final_time() const { return t.back(); }
};

namespace detail {

struct Dopri5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b - bhat
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace detail

/**
 * @brief Integrate x' = rhs(t, x) from t = 0 to t_end (either sign).
 *
 * `inside(x)` is checked after every accepted step; the first violation stops the
 * integration with status left_domain and t_exit set to that step's time. The
 * offending state is not recorded. Exceptions of type Error thrown by `rhs` end the
 * integration with status failure.
 */
template <class Rhs, class Inside>
[[nodiscard]] IvpSolution integrate_ivp(Rhs&& rhs, const Vector& x0, double t_end,
                                        const IntegratorConfig& cfg, Inside&& inside) {
  cfg.validate();
  IvpSolution sol;
  sol.t.push_back(0.0);
  sol.x.push_back(x0);
  if (!inside(x0)) {
    sol.status = IvpStatus::left_domain;
    sol.t_exit = 0.0;
    sol.message = "initial state outside the domain";
    return sol;
  }
  if (t_end == 0.0) return sol;

  const double dir = t_end > 0.0 ? 1.0 : -1.0;
  const double span = std::abs(t_end);
  const Index n = x0.size();
  const Index ctrl = (cfg.error_dims > 0 && cfg.error_dims < n) ? cfg.error_dims : n;
  const bool adaptive = cfg.method == IntegrationMethod::dopri45;
  const double grid = cfg.sample_interval;

  double t = 0.0;  // elapsed |time|
  Vector x = x0;
  double h = std::min(cfg.initial_step, span);
  double next_sample = grid > 0.0 ? std::min(grid, span) : kInf;
  int grid_index = 1;

  auto f = [&](double tau, const Vector& state) -> Vector { return rhs(dir * tau, state); };
  auto f_dir = [&](double tau, const Vector& state) -> Vector { return dir * f(tau, state); };

  try {
    Vector k1 = f_dir(t, x);
    int steps = 0;
    while (t < span) {
      if (++steps > cfg.max_steps) {
        sol.status = IvpStatus::failure;
        sol.message = "maximum number of steps exceeded";
        return sol;
      }
      double target = std::min(span, next_sample);
      double step = h;
      bool clamped = false;
      if (t + step >= target || target - (t + step) < 1e-12 * std::max(1.0, target)) {
        step = target - t;
        clamped = true;
      }
      if (step <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, t)) {
        sol.status = IvpStatus::failure;
        sol.message = "step size underflow at t=" + std::to_string(dir * t);
        return sol;
      }

      Vector x_new;
      Vector k7;
      double err = 0.0;
      if (adaptive) {
        using C = detail::Dopri5;
        const Vector k2 = f_dir(t + C::c2 * step, x + step * (C::a21 * k1));
        const Vector k3 = f_dir(t + C::c3 * step, x + step * (C::a31 * k1 + C::a32 * k2));
        const Vector k4 =
            f_dir(t + C::c4 * step, x + step * (C::a41 * k1 + C::a42 * k2 + C::a43 * k3));
        const Vector k5 = f_dir(
            t + C::c5 * step, x + step * (C::a51 * k1 + C::a52 * k2 + C::a53 * k3 + C::a54 * k4));
        const Vector k6 = f_dir(t + step, x + step * (C::a61 * k1 + C::a62 * k2 + C::a63 * k3 +
                                                      C::a64 * k4 + C::a65 * k5));
        x_new = x + step * (C::b1 * k1 + C::b3 * k3 + C::b4 * k4 + C::b5 * k5 + C::b6 * k6);
        k7 = f_dir(t + step, x_new);
        const Vector e = step * (C::e1 * k1 + C::e3 * k3 + C::e4 * k4 + C::e5 * k5 + C::e6 * k6 +
                                 C::e7 * k7);
        for (Index i = 0; i < ctrl; ++i) {
          const double sc =
              cfg.abs_tol + cfg.rel_tol * std::max(std::abs(x[i]), std::abs(x_new[i]));
          err = std::max(err, std::abs(e[i]) / sc);
        }
        if (!std::isfinite(err) || !detail::all_finite(x_new)) err = kInf;
      } else {
        const Vector k2 = f_dir(t + 0.5 * step, x + 0.5 * step * k1);
        const Vector k3 = f_dir(t + 0.5 * step, x + 0.5 * step * k2);
        const Vector k4 = f_dir(t + step, x + step * k3);
        x_new = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!detail::all_finite(x_new)) {
          sol.status = IvpStatus::failure;
          sol.message = "non-finite state at t=" + std::to_string(dir * (t + step));
          return sol;
        }
      }

      if (adaptive && err > 1.0) {
        ++sol.rejected;
        const double fac = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.2;
        h = step * fac;
        continue;
      }

      t = clamped ? target : t + step;
      x = std::move(x_new);
      ++sol.accepted;
      if (!inside(x)) {
        sol.status = IvpStatus::left_domain;
        sol.t_exit = dir * t;
        sol.message = "state left the chart at t=" + std::to_string(dir * t);
        return sol;
      }
      const bool on_grid = clamped && target == next_sample;
      if (grid <= 0.0 || on_grid || t >= span) {
        sol.t.push_back(dir * t);
        sol.x.push_back(x);
      }
      if (on_grid) {
        ++grid_index;
        next_sample = std::min(span, grid * grid_index);
      }

      if (adaptive) {
        k1 = std::move(k7);
        const double fac = err > 0.0 ? std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.2))) : 5.0;
        // A clamped step says nothing about the natural step; keep the larger one.
        h = clamped ? std::max(h, step * fac) : step * fac;
      } else {
        k1 = f_dir(t, x);
        h = cfg.initial_step;
      }
    }
  } catch (const Error& e) {
    sol.status = IvpStatus::failure;
    sol.message = e.what();
  }
  return sol;
}

template <class Rhs>
[[nodiscard]] IvpSolution integrate_ivp(Rhs&& rhs, const Vector& x0, double t_end,
                                        const IntegratorConfig& cfg) {
  return integrate_ivp(std::forward<Rhs>(rhs), x0, t_end, cfg, [](const Vector&) { return true; });
}

/**
 * @brief Central-difference Jacobian of f at x (m x n).
 *
 * An Error raised while evaluating f at a stencil point is rethrown with the
 * offending point appended to the message.
 */
template <class F>
[[nodiscard]] Matrix fd_jacobian(F&& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "finite-difference step must be > 0");
  Matrix jac;
  Vector xp = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    Vector fp;
    Vector fm;
    auto eval = [&](double value) {
      xp[j] = value;
      try {
        return Vector(f(xp));
      } catch (const Error& e) {
        std::string point;
        for (Index i = 0; i < xp.size(); ++i) {
          point += (i ? "," : "") + std::to_string(xp[i]);
        }
        throw Error(e.code(), std::string(e.what()) + " at stencil point (" + point + ")");
      }
    };
    fp = eval(xj + step);
    fm = eval(xj - step);
    xp[j] = xj;
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * step);
  }
  if (x.size() == 0) {
    jac.resize(Vector(f(x)).size(), 0);
  }
  return jac;
}

/// 2-norm condition number; infinity for singular (or empty-rank) matrices.
[[nodiscard]] inline double condition_number(const Matrix& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  if (smin <= 0.0) return kInf;
  return s[0] / smin;
}

/// Condition number measured against a reference size: max(sigma_max, scale) / sigma_min.
/// A tiny Jacobian counts as singular even when it is well conditioned in the 2-norm sense.
[[nodiscard]] inline double scaled_condition_number(const Matrix& a, double scale) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  if (smin <= 0.0) return kInf;
  return std::max(s[0], scale) / smin;
}

enum class JacobianMode { variational, finite_difference };

struct NewtonConfig {
  double residual_tol = 1e-11;
  int max_iters = 50;
  double damping = 1.0;
  JacobianMode jacobian_mode = JacobianMode::variational;
  double max_condition = 1e12;
  int max_halvings = 20;
  double jacobian_scale = 0.0;  // expected Jacobian size for the conditioning test; 0 disables

  void validate() const {
    if (!(residual_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "residual_tol must be > 0");
    if (!(jacobian_scale >= 0.0)) throw Error(ErrorCode::invalid_argument, "jacobian_scale must be >= 0");
    if (max_iters < 1) throw Error(ErrorCode::invalid_argument, "max_iters must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "damping must lie in (0, 1]");
    }
  }
};

enum class NewtonStatus { converged, no_convergence, singular_jacobian };

[[nodiscard]] inline std::string_view to_string(NewtonStatus s) noexcept {
  switch (s) {
    case NewtonStatus::converged: return "converged";
    case NewtonStatus::no_convergence: return "no-convergence";
    case NewtonStatus::singular_jacobian: return "singular-jacobian";
  }
  return "unknown";
}

struct NewtonReport {
  Vector x;  // root, or best iterate on failure
  NewtonStatus status = NewtonStatus::no_convergence;
  int iterations = 0;
  double residual_norm = kInf;
  double condition = 1.0;  // of the last Jacobian
  std::string message;

  [[nodiscard]] bool converged() const { return status == NewtonStatus::converged; }
};

/**
 * @brief Damped Newton iteration for residual(x) = 0 (max-norm).
 *
 * Each update solves J dx = -r; the step fraction starts at cfg.damping and is halved
 * while the residual norm fails to decrease (at most cfg.max_halvings times).
 * Residual evaluations that throw Error during the line search count as "no decrease".
 */
template <class Residual, class Jacobian>
[[nodiscard]] NewtonReport newton_solve(Residual&& residual, Jacobian&& jacobian, const Vector& x0,
                                        const NewtonConfig& cfg) {
  cfg.validate();
  NewtonReport rep;
  rep.x = x0;
  Vector r = residual(rep.x);
  rep.residual_norm = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
  while (true) {
    if (rep.residual_norm <= cfg.residual_tol) {
      rep.status = NewtonStatus::converged;
      return rep;
    }
    if (rep.iterations >= cfg.max_iters) {
      rep.status = NewtonStatus::no_convergence;
      rep.message = "maximum Newton iterations reached";
      return rep;
    }
    const Matrix jac = jacobian(rep.x);
    rep.condition = scaled_condition_number(jac, cfg.jacobian_scale);
    if (!(rep.condition <= cfg.max_condition)) {
      rep.status = NewtonStatus::singular_jacobian;
      rep.message = "Jacobian condition estimate " + std::to_string(rep.condition) + " exceeds " +
                    std::to_string(cfg.max_condition);
      return rep;
    }
    const Vector dx = jac.fullPivLu().solve(-r);
    double lambda = cfg.damping;
    bool accepted = false;
    for (int halving = 0; halving <= cfg.max_halvings; ++halving, lambda *= 0.5) {
      const Vector trial = rep.x + lambda * dx;
      Vector r_trial;
      try {
        r_trial = residual(trial);
      } catch (const Error&) {
        continue;
      }
      const double norm = r_trial.lpNorm<Eigen::Infinity>();
      if (std::isfinite(norm) && norm < rep.residual_norm) {
        rep.x = trial;
        r = std::move(r_trial);
        rep.residual_norm = norm;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.status = NewtonStatus::no_convergence;
      rep.message = "line search could not decrease the residual";
      return rep;
    }
    ++rep.iterations;
  }
}

/// Newton with a central finite-difference Jacobian.
template <class Residual>
[[nodiscard]] NewtonReport newton_solve(Residual&& residual, const Vector& x0, const NewtonConfig& cfg,
                                        double fd_step = 1e-6) {
  auto jac = [&](const Vector& x) { return fd_jacobian(residual, x, fd_step * (1.0 + x.norm())); };
  return newton_solve(residual, jac, x0, cfg);
}

/// Weights w such that f'(x0) ~ sum_i w_i f(nodes_i) (Fornberg's algorithm).
[[nodiscard]] inline std::vector<double> derivative_weights(double x0, const std::vector<double>& nodes,
                                                            int order = 1) {
  const int n = static_cast<int>(nodes.size()) - 1;
  std::vector<std::vector<double>> c(n + 1, std::vector<double>(order + 1, 0.0));
  c[0][0] = 1.0;
  double c1 = 1.0;
  double c4 = nodes[0] - x0;
  for (int i = 1; i <= n; ++i) {
    const int mn = std::min(i, order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = nodes[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = nodes[i] - nodes[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) {
          c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        }
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) {
        c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      }
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n + 1);
  for (int i = 0; i <= n; ++i) w[i] = c[i][order];
  return w;
}

/// Explicitly seeded random source; every sampling routine takes one by reference.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Vector uniform(const Vector& lo, const Vector& hi) {
    Vector v(lo.size());
    for (Index i = 0; i < lo.size(); ++i) v[i] = uniform(lo[i], hi[i]);
    return v;
  }

  Vector uniform_cube(Index dim, double half_width) {
    Vector v(dim);
    for (Index i = 0; i < dim; ++i) v[i] = uniform(-half_width, half_width);
    return v;
  }

  Vector uniform_ball(Index dim, double radius) {
    if (dim == 0) return Vector(0);
    std::normal_distribution<double> normal;
    Vector v(dim);
    for (Index i = 0; i < dim; ++i) v[i] = normal(rng_);
    const double r = radius * std::pow(uniform(0.0, 1.0), 1.0 / static_cast<double>(dim));
    const double nv = v.norm();
    return nv > 0.0 ? Vector(v * (r / nv)) : Vector(Vector::Zero(dim));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace algsode
