/**
 * @file groupoid.hpp
 * @brief Chart-level Lie groupoids, the morphism Psi(v_g) = T l_{g^-1} v_g from the
 *        alpha-vertical bundle to the algebroid, and SODE lifting through Psi.
 */
#pragma once

#include <functional>
#include <string>
#include <utility>

#include "algsode/algebroid.hpp"
#include "algsode/error.hpp"
#include "algsode/numerics.hpp"

namespace algsode {

/**
 * @brief Structure maps of a groupoid G over Q in one chart of G.
 *
 * Elements are vectors of length N, base points vectors of length n and algebroid fiber
 * vectors of length k. Optional hooks may be left empty.
 */
struct GroupoidMaps {
  std::function<Vector(const Vector&)> source;    // alpha
  std::function<Vector(const Vector&)> target;    // beta
  std::function<Vector(const Vector&)> identity;  // epsilon
  std::function<Vector(const Vector&)> inverse;
  std::function<Vector(const Vector&, const Vector&)> multiply;
  /// N x k matrix identifying algebroid fiber coordinates with vectors in V_{eps(q)} alpha.
  std::function<Matrix(const Vector&)> algebroid_frame;
  /// Optional N x k basis of ker T alpha at g.
  std::function<Matrix(const Vector&)> vertical_frame;
  /// Optional closed form of Psi at g as a k x N matrix acting on vertical vectors.
  std::function<Matrix(const Vector&)> psi_matrix;
  /// Optional chart of the alpha-fiber through q: u in R^k -> g, u = 0 -> eps(q).
  std::function<Vector(const Vector&, const Vector&)> fiber_embed;
  /// Inverse of fiber_embed for the fiber through alpha(g).
  std::function<Vector(const Vector&)> fiber_coords;
};

/// A tangent vector to G at `at` that is annihilated by T alpha.
struct VerticalVector {
  Vector at;
  Vector components;
};

class GroupoidModel {
 public:
  /// Tolerance of the composability test beta(g) = alpha(h).
  static constexpr double kComposableTol = 1e-10;

  GroupoidModel() = default;

  GroupoidModel(std::string name, ChartBox elements, ChartBox base, AlgebroidModel algebroid, GroupoidMaps maps)
      : name_(std::move(name)),
        elements_(std::move(elements)),
        base_(std::move(base)),
        algebroid_(std::move(algebroid)),
        maps_(std::move(maps)) {
    if (!maps_.source || !maps_.target || !maps_.identity || !maps_.inverse || !maps_.multiply ||
        !maps_.algebroid_frame) {
      throw Error(ErrorCode::invalid_argument, "groupoid '" + name_ + "' is missing a structure map");
    }
    if (algebroid_.base_dim() != base_.dim()) {
      throw Error(ErrorCode::dimension_mismatch, "algebroid base differs from the groupoid base");
    }
  }

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] const ChartBox& elements() const { return elements_; }
  [[nodiscard]] const ChartBox& base() const { return base_; }
  [[nodiscard]] const AlgebroidModel& algebroid() const { return algebroid_; }
  [[nodiscard]] const GroupoidMaps& maps() const { return maps_; }
  [[nodiscard]] Index element_dim() const { return elements_.dim(); }
  [[nodiscard]] Index base_dim() const { return base_.dim(); }
  [[nodiscard]] Index rank() const { return algebroid_.rank(); }
  [[nodiscard]] bool contains(const Vector& g) const { return elements_.contains(g); }

  [[nodiscard]] Vector source(const Vector& g) const { return maps_.source(g); }
  [[nodiscard]] Vector target(const Vector& g) const { return maps_.target(g); }
  [[nodiscard]] Vector identity(const Vector& q) const { return maps_.identity(q); }
  [[nodiscard]] Vector inverse(const Vector& g) const { return maps_.inverse(g); }

  [[nodiscard]] bool composable(const Vector& g, const Vector& h) const {
    const Vector b = target(g);
    const Vector a = source(h);
    if (b.size() == 0) return true;
    return (b - a).lpNorm<Eigen::Infinity>() <= kComposableTol * std::max(1.0, b.lpNorm<Eigen::Infinity>());
  }

  /// gh for a composable pair.
  [[nodiscard]] Vector multiply(const Vector& g, const Vector& h) const {
    if (!composable(g, h)) throw Error(ErrorCode::not_composable, "beta(g) differs from alpha(h)");
    return maps_.multiply(g, h);
  }

  [[nodiscard]] Matrix algebroid_frame(const Vector& q) const { return maps_.algebroid_frame(q); }

  [[nodiscard]] Matrix vertical_frame(const Vector& g) const {
    if (maps_.vertical_frame) return maps_.vertical_frame(g);
    const Matrix dalpha = fd_jacobian(maps_.source, g, 1e-6 * (1.0 + g.norm()));
    if (dalpha.rows() == 0) return Matrix::Identity(element_dim(), element_dim());
    Eigen::FullPivLU<Matrix> lu(dalpha);
    lu.setThreshold(1e-8);
    return lu.kernel();
  }

  /// Psi at g as a k x N matrix (valid on vertical vectors).
  [[nodiscard]] Matrix psi_matrix(const Vector& g) const {
    if (maps_.psi_matrix) return maps_.psi_matrix(g);
    // Derivative of h -> g^{-1} h along the vertical frame, expressed in algebroid coordinates.
    const Matrix k_frame = vertical_frame(g);
    const Vector g_inv = inverse(g);
    const double step = 1e-6 * (1.0 + g.norm());
    Matrix d(element_dim(), k_frame.cols());
    for (Index j = 0; j < k_frame.cols(); ++j) {
      const Vector dir = k_frame.col(j);
      d.col(j) = (maps_.multiply(g_inv, g + step * dir) - maps_.multiply(g_inv, g - step * dir)) / (2.0 * step);
    }
    const Matrix e = algebroid_frame(target(g));
    const Matrix in_fiber = e.completeOrthogonalDecomposition().solve(d);
    return in_fiber * k_frame.completeOrthogonalDecomposition().pseudoInverse();
  }

  /// True when the instance supplies Psi in closed form.
  [[nodiscard]] bool has_closed_form_psi() const { return static_cast<bool>(maps_.psi_matrix); }

  /// |T alpha (v)| by a central difference along v.
  [[nodiscard]] double verticality_defect(const VerticalVector& v) const {
    const double nv = v.components.norm();
    if (nv == 0.0 || base_dim() == 0) return 0.0;
    const double s = 1e-6 * (1.0 + v.at.norm()) / nv;
    const Vector d = (source(v.at + s * v.components) - source(v.at - s * v.components)) / (2.0 * s);
    return d.lpNorm<Eigen::Infinity>();
  }

  [[nodiscard]] Vector fiber_embed(const Vector& q, const Vector& u) const {
    if (!maps_.fiber_embed) throw Error(ErrorCode::invalid_argument, "groupoid has no alpha-fiber chart");
    return maps_.fiber_embed(q, u);
  }

  [[nodiscard]] Vector fiber_coords(const Vector& g) const {
    if (!maps_.fiber_coords) throw Error(ErrorCode::invalid_argument, "groupoid has no alpha-fiber chart");
    return maps_.fiber_coords(g);
  }

  [[nodiscard]] bool has_fiber_chart() const { return maps_.fiber_embed && maps_.fiber_coords; }

 private:
  std::string name_;
  ChartBox elements_;
  ChartBox base_;
  AlgebroidModel algebroid_;
  GroupoidMaps maps_;
};

/// l_g(h) = gh.
[[nodiscard]] inline Vector left_translate(const GroupoidModel& gpd, const Vector& g, const Vector& h) {
  return gpd.multiply(g, h);
}

/// Psi(v_g) = T l_{g^-1} v_g, an element of the algebroid fiber over beta(g).
[[nodiscard]] inline Vector psi_apply(const GroupoidModel& gpd, const VerticalVector& v) {
  if (v.at.size() != gpd.element_dim() || v.components.size() != gpd.element_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "psi_apply: wrong vector sizes");
  }
  const double defect = gpd.verticality_defect(v);
  if (defect > 1e-6 * std::max(1.0, v.components.norm())) {
    throw Error(ErrorCode::not_vertical, "vector is not tangent to the alpha-fiber (defect " +
                                             std::to_string(defect) + ")");
  }
  return gpd.psi_matrix(v.at) * v.components;
}

/**
 * @brief SODE on the alpha-vertical bundle related to a SODE on the algebroid through Psi.
 *
 * States are (g, v) with v an alpha-vertical tangent vector in G-chart components. The
 * acceleration is v' = w + K z, where w is the auxiliary vertical acceleration (zero by
 * default), K a basis of vertical vectors and z solves
 *   Psi(g) K z = Gamma(beta(g), Psi(g) v) - T Psi(v, w).
 */
class LiftedSode {
 public:
  using Auxiliary = std::function<Vector(const Vector& g, const Vector& v)>;

  /// Conditioning bound on the fiber matrix Psi(g) K.
  static constexpr double kMaxCondition = 1e12;

  LiftedSode(GroupoidModel gpd, SodeField gamma, Auxiliary aux = {})
      : gpd_(std::move(gpd)), gamma_(std::move(gamma)), aux_(std::move(aux)) {
    if (gamma_.base_dim() != gpd_.base_dim() || gamma_.fiber_dim() != gpd_.rank()) {
      throw Error(ErrorCode::dimension_mismatch, "SODE does not live on the algebroid of the groupoid");
    }
  }

  [[nodiscard]] const GroupoidModel& groupoid() const { return gpd_; }
  [[nodiscard]] const SodeField& algebroid_sode() const { return gamma_; }
  [[nodiscard]] Index base_dim() const { return gpd_.element_dim(); }
  [[nodiscard]] Index fiber_dim() const { return gpd_.element_dim(); }
  [[nodiscard]] bool contains(const Vector& g) const { return gpd_.contains(g); }

  [[nodiscard]] Vector base_velocity(const Vector&, const Vector& v) const { return v; }

  [[nodiscard]] Vector fiber_acceleration(const Vector& g, const Vector& v) const {
    const Matrix psi = gpd_.psi_matrix(g);
    const Matrix k_frame = gpd_.vertical_frame(g);
    const Vector w = aux_ ? aux_(g, v) : Vector(Vector::Zero(v.size()));
    const Vector rhs = gamma_.fiber_acceleration(gpd_.target(g), psi * v) - tangent_psi_fiber(g, v, w);
    const Matrix m = psi * k_frame;
    if (!(condition_number(m) <= kMaxCondition)) {
      throw Error(ErrorCode::psi_singular, "Psi is not invertible on the vertical fiber");
    }
    return w + k_frame * m.fullPivLu().solve(rhs);
  }

  /// Fiber part of T Psi applied to the tangent vector (dg, dv) = (v, w) at (g, v).
  [[nodiscard]] Vector tangent_psi_fiber(const Vector& g, const Vector& v, const Vector& w) const {
    const double nd = std::sqrt(v.squaredNorm() + w.squaredNorm());
    if (nd == 0.0) return Vector::Zero(gpd_.rank());
    // Nested differences (Psi itself by finite differences) need a larger step.
    const double rel = gpd_.has_closed_form_psi() ? 1e-6 : 1e-4;
    const double s = rel * (1.0 + g.norm()) / nd;
    const Vector plus = gpd_.psi_matrix(g + s * v) * (v + s * w);
    const Vector minus = gpd_.psi_matrix(g - s * v) * (v - s * w);
    return (plus - minus) / (2.0 * s);
  }

 private:
  GroupoidModel gpd_;
  SodeField gamma_;
  Auxiliary aux_;
};

[[nodiscard]] inline LiftedSode lift_sode(const GroupoidModel& gpd, const SodeField& gamma,
                                          LiftedSode::Auxiliary aux = {}) {
  return LiftedSode(gpd, gamma, std::move(aux));
}

namespace detail {

/// Random element in the (shrunk) element chart with a random vertical vector at it.
inline std::pair<Vector, Vector> sample_vertical(const GroupoidModel& gpd, Sampler& rng, double shrink,
                                                 double radius) {
  const Vector g = gpd.elements().sample(rng, shrink);
  const Matrix k_frame = gpd.vertical_frame(g);
  const Vector u = rng.uniform_ball(k_frame.cols(), radius);
  return {g, k_frame * u};
}

}  // namespace detail

/**
 * @brief Max over seeded vertical samples of |T Psi(lifted(v)) - Gamma(Psi(v))|.
 *
 * T Psi is taken by central differences of Psi along a short flow segment of the lifted
 * field (one classical Runge-Kutta step of length +-delta).
 */
template <SodeSystem Lifted>
[[nodiscard]] double psi_defect(const GroupoidModel& gpd, const Lifted& lifted, const SodeField& gamma, int samples,
                                std::uint64_t seed, double delta = 1e-4) {
  if (samples < 1) throw Error(ErrorCode::invalid_argument, "samples must be >= 1");
  const Index big_n = gpd.element_dim();
  IntegratorConfig step_cfg;
  step_cfg.method = IntegrationMethod::rk4;
  step_cfg.initial_step = delta;
  auto psi_state = [&](const Vector& z) {
    const Vector g = z.head(big_n);
    Vector out(gpd.base_dim() + gpd.rank());
    out << gpd.target(g), gpd.psi_matrix(g) * z.tail(big_n);
    return out;
  };
  auto rhs = [&](double, const Vector& z) {
    Vector out(2 * big_n);
    out << lifted.base_velocity(z.head(big_n), z.tail(big_n)), lifted.fiber_acceleration(z.head(big_n), z.tail(big_n));
    return out;
  };
  Sampler rng(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto [g, v] = detail::sample_vertical(gpd, rng, 0.5, 1.0);
    Vector z(2 * big_n);
    z << g, v;
    const Vector zp = integrate_ivp(rhs, z, delta, step_cfg).final_state();
    const Vector zm = integrate_ivp(rhs, z, -delta, step_cfg).final_state();
    const Vector dpsi = (psi_state(zp) - psi_state(zm)) / (2.0 * delta);
    const Vector p = psi_state(z);
    const Vector q = p.head(gpd.base_dim());
    const Vector a = p.tail(gpd.rank());
    Vector expected(p.size());
    expected << gamma.base_velocity(q, a), gamma.fiber_acceleration(q, a);
    worst = std::max(worst, (dpsi - expected).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Max over seeded samples of |Gamma_lifted(g, s v) - s^2 Gamma_lifted(g, v)|, s in {-1, 1/2, 2}.
template <SodeSystem Lifted>
[[nodiscard]] double lifted_homogeneity_defect(const GroupoidModel& gpd, const Lifted& lifted, int samples,
                                               std::uint64_t seed) {
  Sampler rng(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto [g, v] = detail::sample_vertical(gpd, rng, 0.5, 1.0);
    const Vector base = lifted.fiber_acceleration(g, v);
    for (double s : {-1.0, 0.5, 2.0}) {
      const Vector scaled = lifted.fiber_acceleration(g, Vector(s * v));
      worst = std::max(worst, (scaled - s * s * base).lpNorm<Eigen::Infinity>());
    }
  }
  return worst;
}

/// Max over seeded (q, a) of |rho(q) a - T beta (E(q) a)| with T beta by central differences.
[[nodiscard]] inline double groupoid_anchor_check(const GroupoidModel& gpd, int samples, std::uint64_t seed) {
  if (gpd.base_dim() == 0) return 0.0;
  Sampler rng(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vector q = gpd.base().sample(rng, 0.5);
    const Vector a = rng.uniform_ball(gpd.rank(), 1.0);
    const Vector e = gpd.identity(q);
    const Vector dir = gpd.algebroid_frame(q) * a;
    const double s = 1e-6 * (1.0 + e.norm());
    const Vector dbeta = (gpd.target(e + s * dir) - gpd.target(e - s * dir)) / (2.0 * s);
    worst = std::max(worst, (anchor_apply(gpd.algebroid(), q, a) - dbeta).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Largest violation of each groupoid axiom over seeded samples.
struct GroupoidAxiomReport {
  double identity_endpoints = 0.0;  // alpha(eps(q)) = q, beta(eps(q)) = q
  double product_endpoints = 0.0;   // alpha(gh) = alpha(g), beta(gh) = beta(h)
  double units = 0.0;               // eps(alpha(g)) g = g = g eps(beta(g))
  double inverses = 0.0;            // g^-1 g = eps(beta(g)), g g^-1 = eps(alpha(g))
  double associativity = 0.0;       // g(hk) = (gh)k
  double fiber_chart = 0.0;         // fiber_embed(alpha(g), fiber_coords(g)) = g

  [[nodiscard]] double worst() const {
    return std::max({identity_endpoints, product_endpoints, units, inverses, associativity, fiber_chart});
  }
};

[[nodiscard]] inline GroupoidAxiomReport groupoid_axiom_defects(const GroupoidModel& gpd, int samples,
                                                                std::uint64_t seed) {
  Sampler rng(seed);
  GroupoidAxiomReport rep;
  auto dist = [](const Vector& a, const Vector& b) { return a.size() ? (a - b).lpNorm<Eigen::Infinity>() : 0.0; };
  auto composable_after = [&](const Vector& g) {
    const Vector h0 = gpd.elements().sample(rng, 0.3);
    return gpd.fiber_embed(gpd.target(g), gpd.fiber_coords(h0));
  };
  for (int i = 0; i < samples; ++i) {
    const Vector q = gpd.base_dim() > 0 ? gpd.base().sample(rng, 0.5) : Vector(0);
    const Vector e = gpd.identity(q);
    rep.identity_endpoints = std::max({rep.identity_endpoints, dist(gpd.source(e), q), dist(gpd.target(e), q)});

    const Vector g = gpd.elements().sample(rng, 0.3);
    const Vector h = composable_after(g);
    const Vector k = composable_after(h);
    const Vector gh = gpd.multiply(g, h);
    rep.product_endpoints =
        std::max({rep.product_endpoints, dist(gpd.source(gh), gpd.source(g)), dist(gpd.target(gh), gpd.target(h))});
    rep.units = std::max({rep.units, dist(gpd.multiply(gpd.identity(gpd.source(g)), g), g),
                          dist(gpd.multiply(g, gpd.identity(gpd.target(g))), g)});
    const Vector gi = gpd.inverse(g);
    rep.inverses = std::max({rep.inverses, dist(gpd.multiply(gi, g), gpd.identity(gpd.target(g))),
                             dist(gpd.multiply(g, gi), gpd.identity(gpd.source(g)))});
    rep.associativity =
        std::max(rep.associativity, dist(gpd.multiply(g, gpd.multiply(h, k)), gpd.multiply(gh, k)));
    rep.fiber_chart = std::max(rep.fiber_chart, dist(gpd.fiber_embed(gpd.source(g), gpd.fiber_coords(g)), g));
  }
  return rep;
}

}  // namespace algsode
