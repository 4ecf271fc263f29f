/**
 * @file algebroid.hpp
 * @brief Chart-level Lie algebroids, SODE fields on them and their flows.
 *
 * A model lives on a single chart: base coordinates q (dimension n, possibly 0) and
 * fiber coordinates y (rank k). A SODE field is
 *   dq/dt = rho(q) y,   dy/dt = Gamma(q, y).
 */
#pragma once

#include <algorithm>
#include <concepts>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "algsode/error.hpp"
#include "algsode/expression.hpp"
#include "algsode/numerics.hpp"

namespace algsode {

using Parameters = std::map<std::string, double>;

/// Axis-aligned coordinate box, optionally intersected with a Euclidean ball.
struct ChartBox {
  Vector lower;
  Vector upper;
  std::vector<std::string> names;
  double radius = kInf;

  ChartBox() = default;
  ChartBox(Vector lo, Vector hi, std::vector<std::string> coordinate_names = {}, double ball_radius = kInf)
      : lower(std::move(lo)), upper(std::move(hi)), names(std::move(coordinate_names)), radius(ball_radius) {
    if (names.empty()) names = default_names("q", lower.size());
    validate();
  }

  /// Box [-half_width, half_width]^dim with coordinates prefix1..prefixN.
  [[nodiscard]] static ChartBox cube(Index dim, double half_width, const std::string& prefix = "q",
                                     double ball_radius = kInf) {
    return ChartBox(Vector::Constant(dim, -half_width), Vector::Constant(dim, half_width),
                    default_names(prefix, dim), ball_radius);
  }

  [[nodiscard]] static std::vector<std::string> default_names(const std::string& prefix, Index dim) {
    std::vector<std::string> out;
    for (Index i = 0; i < dim; ++i) out.push_back(prefix + std::to_string(i + 1));
    return out;
  }

  [[nodiscard]] Index dim() const { return lower.size(); }

  [[nodiscard]] bool contains(const Vector& q) const {
    if (q.size() != dim() || !q.allFinite()) return false;
    for (Index i = 0; i < dim(); ++i) {
      if (q[i] < lower[i] || q[i] > upper[i]) return false;
    }
    return !(q.norm() >= radius);
  }

  void validate() const {
    if (lower.size() != upper.size()) throw Error(ErrorCode::dimension_mismatch, "chart bounds differ in size");
    if (static_cast<Index>(names.size()) != lower.size()) {
      throw Error(ErrorCode::dimension_mismatch, "chart needs one name per coordinate");
    }
    for (Index i = 0; i < dim(); ++i) {
      if (!(lower[i] < upper[i])) throw Error(ErrorCode::invalid_argument, "chart requires lower < upper");
    }
    if (!(radius > 0.0)) throw Error(ErrorCode::invalid_argument, "chart radius must be positive");
  }

  /// Uniform sample from the box (rejection against the ball when present).
  [[nodiscard]] Vector sample(Sampler& rng, double shrink = 1.0) const {
    const Vector mid = 0.5 * (lower + upper);
    const Vector half = 0.5 * shrink * (upper - lower);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      Vector q = rng.uniform(Vector(mid - half), Vector(mid + half));
      if (q.norm() < shrink * radius || !std::isfinite(radius)) {
        if (contains(q)) return q;
      }
    }
    throw Error(ErrorCode::invalid_argument, "could not sample a point inside the chart");
  }
};

namespace detail {

inline std::map<std::string, int> slot_map(const std::vector<std::string>& names, int offset = 0) {
  std::map<std::string, int> slots;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!slots.emplace(names[i], offset + static_cast<int>(i)).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate coordinate name '" + names[i] + "'");
    }
  }
  return slots;
}

inline std::vector<double> to_buffer(const Vector& a, const Vector& b = Vector()) {
  std::vector<double> buf(static_cast<std::size_t>(a.size() + b.size()));
  for (Index i = 0; i < a.size(); ++i) buf[static_cast<std::size_t>(i)] = a[i];
  for (Index i = 0; i < b.size(); ++i) buf[static_cast<std::size_t>(a.size() + i)] = b[i];
  return buf;
}

inline std::vector<Expression> bind_all(const std::vector<Expression>& exprs,
                                        const std::map<std::string, int>& slots, const Parameters& params) {
  std::vector<Expression> out;
  out.reserve(exprs.size());
  for (const auto& e : exprs) out.push_back(e.bind(slots, params));
  return out;
}

/// Derivatives d e / d name for every expression and name; nullopt if any is unavailable.
inline std::optional<std::vector<Expression>> derivative_table(const std::vector<Expression>& exprs,
                                                               const std::vector<std::string>& names) {
  std::vector<Expression> out;
  out.reserve(exprs.size() * names.size());
  for (const auto& e : exprs) {
    for (const auto& name : names) {
      auto d = e.derivative(name);
      if (!d) return std::nullopt;
      out.push_back(std::move(*d));
    }
  }
  return out;
}

}  // namespace detail

/// Fiber coordinate names y1..yk.
[[nodiscard]] inline std::vector<std::string> fiber_names(Index rank) { return ChartBox::default_names("y", rank); }

/**
 * @brief Lie algebroid on a chart: anchor rho^i_a(q) and structure functions C^a_{bc}(q).
 *
 * The anchor table is n x k row-major; the structure table is indexed [a][b][c]
 * (a*k*k + b*k + c). Empty tables stand for zero.
 */
class AlgebroidModel {
 public:
  AlgebroidModel() = default;

  AlgebroidModel(ChartBox base, Index rank, std::vector<Expression> anchor, std::vector<Expression> structure,
                 Parameters params = {})
      : base_(std::move(base)), rank_(rank), params_(std::move(params)) {
    base_.validate();
    if (rank_ < 0) throw Error(ErrorCode::invalid_argument, "fiber rank must be >= 0");
    const auto n = static_cast<std::size_t>(base_dim());
    const auto k = static_cast<std::size_t>(rank_);
    if (anchor.empty()) anchor.assign(n * k, Expression::constant(0.0));
    if (structure.empty()) structure.assign(k * k * k, Expression::constant(0.0));
    if (anchor.size() != n * k) throw Error(ErrorCode::dimension_mismatch, "anchor table must be n x k");
    if (structure.size() != k * k * k) throw Error(ErrorCode::dimension_mismatch, "structure table must be k x k x k");
    const auto slots = detail::slot_map(base_.names);
    anchor_ = detail::bind_all(anchor, slots, params_);
    structure_ = detail::bind_all(structure, slots, params_);
    anchor_dq_ = detail::derivative_table(anchor_, base_.names);
    anchor_constant_ = std::all_of(anchor_.begin(), anchor_.end(), [](const Expression& e) { return e.is_constant(); });
    structure_constant_ =
        std::all_of(structure_.begin(), structure_.end(), [](const Expression& e) { return e.is_constant(); });
  }

  /// Tangent bundle of the chart: identity anchor, zero structure.
  [[nodiscard]] static AlgebroidModel tangent_bundle(ChartBox base) {
    const Index n = base.dim();
    std::vector<Expression> anchor;
    for (Index i = 0; i < n; ++i) {
      for (Index a = 0; a < n; ++a) anchor.push_back(Expression::constant(i == a ? 1.0 : 0.0));
    }
    return AlgebroidModel(std::move(base), n, std::move(anchor), {});
  }

  [[nodiscard]] const ChartBox& base() const { return base_; }
  [[nodiscard]] Index base_dim() const { return base_.dim(); }
  [[nodiscard]] Index rank() const { return rank_; }
  [[nodiscard]] const Parameters& parameters() const { return params_; }
  [[nodiscard]] bool contains(const Vector& q) const { return base_.contains(q); }

  [[nodiscard]] const Expression& anchor_entry(Index i, Index a) const {
    return anchor_[static_cast<std::size_t>(i * rank_ + a)];
  }
  [[nodiscard]] const Expression& structure_entry(Index a, Index b, Index c) const {
    return structure_[static_cast<std::size_t>((a * rank_ + b) * rank_ + c)];
  }

  [[nodiscard]] Matrix anchor_matrix(const Vector& q) const {
    const auto buf = detail::to_buffer(q);
    Matrix rho(base_dim(), rank_);
    for (Index i = 0; i < base_dim(); ++i) {
      for (Index a = 0; a < rank_; ++a) rho(i, a) = anchor_entry(i, a).evaluate(buf);
    }
    return rho;
  }

  /// d/dq_j of the anchor matrix, one n x k matrix per j; nullopt without analytic derivatives.
  [[nodiscard]] std::optional<std::vector<Matrix>> anchor_derivatives(const Vector& q) const {
    if (!anchor_dq_) return std::nullopt;
    const auto buf = detail::to_buffer(q);
    const Index n = base_dim();
    std::vector<Matrix> out(static_cast<std::size_t>(n), Matrix(n, rank_));
    for (Index i = 0; i < n; ++i) {
      for (Index a = 0; a < rank_; ++a) {
        for (Index j = 0; j < n; ++j) {
          out[static_cast<std::size_t>(j)](i, a) =
              (*anchor_dq_)[static_cast<std::size_t>((i * rank_ + a) * n + j)].evaluate(buf);
        }
      }
    }
    return out;
  }

  /// Structure functions at q: element a is the k x k matrix C^a_{bc}.
  [[nodiscard]] std::vector<Matrix> structure(const Vector& q) const {
    const auto buf = detail::to_buffer(q);
    std::vector<Matrix> out(static_cast<std::size_t>(rank_), Matrix(rank_, rank_));
    for (Index a = 0; a < rank_; ++a) {
      for (Index b = 0; b < rank_; ++b) {
        for (Index c = 0; c < rank_; ++c) out[static_cast<std::size_t>(a)](b, c) = structure_entry(a, b, c).evaluate(buf);
      }
    }
    return out;
  }

  [[nodiscard]] bool anchor_is_constant() const { return anchor_constant_; }
  [[nodiscard]] bool structure_is_constant() const { return structure_constant_; }

 private:
  ChartBox base_;
  Index rank_ = 0;
  Parameters params_;
  std::vector<Expression> anchor_;
  std::vector<Expression> structure_;
  std::optional<std::vector<Expression>> anchor_dq_;
  bool anchor_constant_ = true;
  bool structure_constant_ = true;
};

/// v^i = rho^i_a(q) y^a.
[[nodiscard]] inline Vector anchor_apply(const AlgebroidModel& model, const Vector& q, const Vector& y) {
  if (q.size() != model.base_dim() || y.size() != model.rank()) {
    throw Error(ErrorCode::dimension_mismatch, "anchor_apply: wrong argument sizes");
  }
  if (!model.contains(q)) throw Error(ErrorCode::out_of_chart, "base point outside the chart");
  if (model.base_dim() == 0) return Vector(0);
  return model.anchor_matrix(q) * y;
}

/**
 * @brief SODE vector field on an algebroid: fiber acceleration Gamma^a(q, y).
 *
 * Gamma expressions may use the base coordinate names, y1..yk and parameters. When a
 * quadratic coefficient table Gamma^a_{bc}(q) ([a][b][c] layout) is present the field
 * is the induced quadratic form.
 */
class SodeField {
 public:
  SodeField() = default;

  SodeField(AlgebroidModel model, std::vector<Expression> gamma, Parameters params = {},
            std::optional<std::vector<Expression>> quadratic = std::nullopt)
      : model_(std::move(model)), params_(std::move(params)) {
    const Index n = model_.base_dim();
    const Index k = model_.rank();
    if (static_cast<Index>(gamma.size()) != k) {
      throw Error(ErrorCode::dimension_mismatch, "gamma needs one expression per fiber coordinate");
    }
    Parameters all = model_.parameters();
    for (const auto& [name, value] : params_) all[name] = value;
    names_ = model_.base().names;
    const auto ys = fiber_names(k);
    names_.insert(names_.end(), ys.begin(), ys.end());
    const auto slots = detail::slot_map(names_);
    gamma_ = detail::bind_all(gamma, slots, all);
    if (quadratic) {
      if (static_cast<Index>(quadratic->size()) != k * k * k) {
        throw Error(ErrorCode::dimension_mismatch, "quadratic coefficient table must be k x k x k");
      }
      quadratic_ = detail::bind_all(*quadratic, detail::slot_map(model_.base().names), all);
    }
    gamma_dz_ = detail::derivative_table(gamma_, names_);
    analytic_ = gamma_dz_.has_value() && (n == 0 || model_.anchor_derivatives(Vector::Zero(n)).has_value());
    (void)n;
  }

  [[nodiscard]] const AlgebroidModel& model() const { return model_; }
  [[nodiscard]] Index base_dim() const { return model_.base_dim(); }
  [[nodiscard]] Index fiber_dim() const { return model_.rank(); }
  [[nodiscard]] bool contains(const Vector& q) const { return model_.contains(q); }
  [[nodiscard]] bool has_quadratic_coefficients() const { return quadratic_.has_value(); }
  [[nodiscard]] bool has_analytic_jacobian() const { return analytic_; }
  [[nodiscard]] const std::vector<Expression>& gamma() const { return gamma_; }

  /// Tangent type: base dimension equals rank and the anchor is the identity.
  [[nodiscard]] bool is_tangent_type() const {
    if (model_.base_dim() != model_.rank() || !model_.anchor_is_constant()) return false;
    const Index n = model_.base_dim();
    return model_.anchor_matrix(Vector::Zero(n)).isIdentity(0.0);
  }

  [[nodiscard]] Vector base_velocity(const Vector& q, const Vector& y) const {
    if (base_dim() == 0) return Vector(0);
    return model_.anchor_matrix(q) * y;
  }

  [[nodiscard]] Vector fiber_acceleration(const Vector& q, const Vector& y) const {
    const auto buf = detail::to_buffer(q, y);
    Vector out(fiber_dim());
    for (Index a = 0; a < fiber_dim(); ++a) out[a] = gamma_[static_cast<std::size_t>(a)].evaluate(buf);
    return out;
  }

  /// Quadratic coefficients at q (element a is the symmetric k x k matrix Gamma^a_{bc}).
  [[nodiscard]] std::vector<Matrix> quadratic_coefficients(const Vector& q) const {
    if (!quadratic_) throw Error(ErrorCode::not_quadratic, "field has no quadratic coefficient table");
    const auto buf = detail::to_buffer(q);
    const Index k = fiber_dim();
    std::vector<Matrix> out(static_cast<std::size_t>(k), Matrix(k, k));
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) {
        for (Index c = 0; c < k; ++c) {
          out[static_cast<std::size_t>(a)](b, c) =
              (*quadratic_)[static_cast<std::size_t>((a * k + b) * k + c)].evaluate(buf);
        }
      }
    }
    return out;
  }

  /// Jacobian of (q, y) -> (rho(q) y, Gamma(q, y)), analytic when every derivative exists.
  [[nodiscard]] Matrix rhs_jacobian(const Vector& q, const Vector& y) const {
    const Index n = base_dim();
    const Index k = fiber_dim();
    if (!analytic_) {
      Vector z(n + k);
      z << q, y;
      auto rhs = [&](const Vector& s) {
        Vector out(n + k);
        out << base_velocity(s.head(n), s.tail(k)), fiber_acceleration(s.head(n), s.tail(k));
        return out;
      };
      return fd_jacobian(rhs, z, 1e-6 * (1.0 + z.norm()));
    }
    Matrix jac = Matrix::Zero(n + k, n + k);
    if (n > 0) {
      const auto drho = *model_.anchor_derivatives(q);
      for (Index j = 0; j < n; ++j) jac.block(0, j, n, 1) = drho[static_cast<std::size_t>(j)] * y;
      jac.block(0, n, n, k) = model_.anchor_matrix(q);
    }
    const auto buf = detail::to_buffer(q, y);
    for (Index a = 0; a < k; ++a) {
      for (Index j = 0; j < n + k; ++j) {
        jac(n + a, j) = (*gamma_dz_)[static_cast<std::size_t>(a * (n + k) + j)].evaluate(buf);
      }
    }
    return jac;
  }

 private:
  AlgebroidModel model_;
  Parameters params_;
  std::vector<std::string> names_;
  std::vector<Expression> gamma_;
  std::optional<std::vector<Expression>> quadratic_;
  std::optional<std::vector<Expression>> gamma_dz_;
  bool analytic_ = false;
};

/// Anything that can be integrated as dq/dt = base_velocity(q, y), dy/dt = fiber_acceleration(q, y).
template <class S>
concept SodeSystem = requires(const S& s, const Vector& q, const Vector& y) {
  { s.base_dim() } -> std::convertible_to<Index>;
  { s.fiber_dim() } -> std::convertible_to<Index>;
  { s.base_velocity(q, y) } -> std::convertible_to<Vector>;
  { s.fiber_acceleration(q, y) } -> std::convertible_to<Vector>;
  { s.contains(q) } -> std::convertible_to<bool>;
};

template <class S>
concept HasRhsJacobian = SodeSystem<S> && requires(const S& s, const Vector& q, const Vector& y) {
  { s.rhs_jacobian(q, y) } -> std::convertible_to<Matrix>;
};

/// (dq/dt, dy/dt) at (q, y).
template <SodeSystem S>
[[nodiscard]] std::pair<Vector, Vector> sode_rhs(const S& sys, const Vector& q, const Vector& y) {
  if (q.size() != sys.base_dim() || y.size() != sys.fiber_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "sode_rhs: wrong argument sizes");
  }
  if (!sys.contains(q)) throw Error(ErrorCode::out_of_chart, "base point outside the chart");
  return {sys.base_velocity(q, y), sys.fiber_acceleration(q, y)};
}

template <SodeSystem S>
[[nodiscard]] Matrix sode_rhs_jacobian(const S& sys, const Vector& q, const Vector& y) {
  if constexpr (HasRhsJacobian<S>) {
    return sys.rhs_jacobian(q, y);
  } else {
    const Index n = sys.base_dim();
    const Index k = sys.fiber_dim();
    Vector z(n + k);
    z << q, y;
    auto rhs = [&](const Vector& s) {
      Vector out(n + k);
      out << sys.base_velocity(s.head(n), s.tail(k)), sys.fiber_acceleration(s.head(n), s.tail(k));
      return out;
    };
    return fd_jacobian(rhs, z, 1e-6 * (1.0 + z.norm()));
  }
}

/// Sampled admissible curve with its integration status.
struct Trajectory {
  std::vector<double> t;
  std::vector<Vector> q;
  std::vector<Vector> y;
  IvpStatus status = IvpStatus::completed;
  double t_exit = kInf;
  std::string message;

  [[nodiscard]] bool completed() const { return status == IvpStatus::completed; }
  [[nodiscard]] std::size_t size() const { return t.size(); }
  [[nodiscard]] const Vector& final_q() const { return q.back(); }
  [[nodiscard]] const Vector& final_y() const { return y.back(); }
};

namespace detail {

inline Trajectory split_solution(const IvpSolution& sol, Index n, Index k) {
  Trajectory traj;
  traj.t = sol.t;
  traj.q.reserve(sol.x.size());
  traj.y.reserve(sol.x.size());
  for (const auto& x : sol.x) {
    traj.q.push_back(x.head(n));
    traj.y.push_back(x.segment(n, k));
  }
  traj.status = sol.status;
  traj.t_exit = sol.t_exit;
  traj.message = sol.message;
  return traj;
}

/// Raise the matching Error unless the trajectory completed.
inline void require_completed(const Trajectory& traj) {
  if (traj.status == IvpStatus::left_domain) {
    throw Error(ErrorCode::left_domain, traj.message.empty() ? "flow left the chart" : traj.message);
  }
  if (traj.status == IvpStatus::failure) throw Error(ErrorCode::integration_failure, traj.message);
}

}  // namespace detail

/// Integrate the SODE from (q0, y0) for time t (negative t integrates backwards).
template <SodeSystem S>
[[nodiscard]] Trajectory flow(const S& sys, const Vector& q0, const Vector& y0, double t,
                              const IntegratorConfig& cfg = {}) {
  const Index n = sys.base_dim();
  const Index k = sys.fiber_dim();
  if (q0.size() != n || y0.size() != k) throw Error(ErrorCode::dimension_mismatch, "flow: wrong initial sizes");
  if (!sys.contains(q0)) throw Error(ErrorCode::out_of_chart, "initial base point outside the chart");
  Vector z0(n + k);
  z0 << q0, y0;
  auto rhs = [&](double, const Vector& z) {
    Vector out(n + k);
    out << sys.base_velocity(z.head(n), z.tail(k)), sys.fiber_acceleration(z.head(n), z.tail(k));
    return out;
  };
  auto inside = [&](const Vector& z) { return sys.contains(Vector(z.head(n))); };
  return detail::split_solution(integrate_ivp(rhs, z0, t, cfg, inside), n, k);
}

/// Flow together with the sensitivity S(t) = d(q, y)(t) / dp for initial data depending on p.
struct SensitivityFlow {
  Trajectory trajectory;
  Matrix sensitivity;  // (n + k) x p at the final time
};

/**
 * @brief Integrate the flow jointly with its first-order variational system
 *        S' = J(q, y) S, S(0) = s0, where J is the Jacobian of the SODE right-hand side.
 */
template <SodeSystem S>
[[nodiscard]] SensitivityFlow flow_with_sensitivity(const S& sys, const Vector& q0, const Vector& y0,
                                                    const Matrix& s0, double t, IntegratorConfig cfg = {}) {
  const Index n = sys.base_dim();
  const Index k = sys.fiber_dim();
  const Index m = n + k;
  const Index p = s0.cols();
  if (q0.size() != n || y0.size() != k || s0.rows() != m) {
    throw Error(ErrorCode::dimension_mismatch, "flow_with_sensitivity: wrong initial sizes");
  }
  if (!sys.contains(q0)) throw Error(ErrorCode::out_of_chart, "initial base point outside the chart");
  Vector x0(m + m * p);
  x0.head(m) << q0, y0;
  x0.tail(m * p) = Eigen::Map<const Vector>(s0.data(), m * p);
  // Finite-difference Jacobians are only accurate to ~1e-9; keep the step control on the state.
  if constexpr (!HasRhsJacobian<S>) cfg.error_dims = m;
  auto rhs = [&](double, const Vector& x) {
    const Vector q = x.head(n);
    const Vector y = x.segment(n, k);
    Vector out(x.size());
    out.head(m) << sys.base_velocity(q, y), sys.fiber_acceleration(q, y);
    const Matrix jac = sode_rhs_jacobian(sys, q, y);
    Eigen::Map<const Matrix> sens(x.data() + m, m, p);
    Eigen::Map<Matrix>(out.data() + m, m, p) = jac * sens;
    return out;
  };
  auto inside = [&](const Vector& x) { return sys.contains(Vector(x.head(n))); };
  const IvpSolution sol = integrate_ivp(rhs, x0, t, cfg, inside);
  SensitivityFlow out{detail::split_solution(sol, n, k), Matrix()};
  out.sensitivity = Eigen::Map<const Matrix>(sol.final_state().data() + m, m, p);
  return out;
}

/**
 * @brief Max over interior samples of |dq/dt - base_velocity(q, y)|, where dq/dt is
 *        obtained by differencing the sampled base curve (stencil of `stencil` points).
 */
template <SodeSystem S>
[[nodiscard]] double admissibility_defect(const S& sys, const Trajectory& traj, int stencil = 7) {
  const int count = static_cast<int>(traj.size());
  if (stencil < 3 || count < stencil) return 0.0;
  const int half = stencil / 2;
  double worst = 0.0;
  for (int i = half; i + half < count; ++i) {
    std::vector<double> nodes;
    for (int j = i - half; j <= i + half; ++j) nodes.push_back(traj.t[static_cast<std::size_t>(j)]);
    const auto w = derivative_weights(traj.t[static_cast<std::size_t>(i)], nodes, 1);
    Vector dq = Vector::Zero(sys.base_dim());
    for (int j = 0; j < stencil; ++j) dq += w[static_cast<std::size_t>(j)] * traj.q[static_cast<std::size_t>(i - half + j)];
    const Vector v = sys.base_velocity(traj.q[static_cast<std::size_t>(i)], traj.y[static_cast<std::size_t>(i)]);
    if (v.size() > 0) worst = std::max(worst, (dq - v).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/**
 * @brief Max of |Gamma(q, s y) - s^2 Gamma(q, y)| for s in {-1, 1/2, 2} over seeded samples
 *        (q uniform in the base chart, y uniform in the ball of radius `fiber_radius`).
 */
template <SodeSystem S>
[[nodiscard]] double homogeneity_defect(const S& sys, const ChartBox& sample_box, int samples, std::uint64_t seed,
                                        double fiber_radius = 1.0) {
  if (samples < 1) throw Error(ErrorCode::invalid_argument, "samples must be >= 1");
  Sampler rng(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vector q = sample_box.sample(rng);
    const Vector y = rng.uniform_ball(sys.fiber_dim(), fiber_radius);
    const Vector g1 = sys.fiber_acceleration(q, y);
    for (double s : {-1.0, 0.5, 2.0}) {
      const Vector gs = sys.fiber_acceleration(q, Vector(s * y));
      if (gs.size() > 0) worst = std::max(worst, (gs - s * s * g1).lpNorm<Eigen::Infinity>());
    }
  }
  return worst;
}

[[nodiscard]] inline double homogeneity_defect(const SodeField& sode, int samples, std::uint64_t seed) {
  return homogeneity_defect(sode, sode.model().base(), samples, seed);
}

/// |base of flow(q0, s y0, t) - base of flow(q0, y0, s t)| (max-norm).
template <SodeSystem S>
[[nodiscard]] double quadratic_rescale_defect(const S& sys, const Vector& q0, const Vector& y0, double s, double t,
                                              const IntegratorConfig& cfg = {}) {
  const Trajectory a = flow(sys, q0, Vector(s * y0), t, cfg);
  detail::require_completed(a);
  const Trajectory b = flow(sys, q0, y0, s * t, cfg);
  detail::require_completed(b);
  if (a.final_q().size() == 0) return 0.0;
  return (a.final_q() - b.final_q()).lpNorm<Eigen::Infinity>();
}

/**
 * @brief Quadratic SODE from coefficients Gamma^a_{bc}(q) ([a][b][c] layout), symmetrized
 *        in (b, c): Gamma^a(q, y) = Gamma^a_{bc}(q) y^b y^c.
 */
[[nodiscard]] inline SodeField spray_from_coefficients(const AlgebroidModel& model, const std::vector<Expression>& coeffs,
                                                       const Parameters& params = {}) {
  const Index k = model.rank();
  if (static_cast<Index>(coeffs.size()) != k * k * k) {
    throw Error(ErrorCode::dimension_mismatch, "coefficient table must be k x k x k");
  }
  auto at = [&](Index a, Index b, Index c) { return coeffs[static_cast<std::size_t>((a * k + b) * k + c)]; };
  std::vector<Expression> sym(coeffs.size());
  std::vector<Expression> gamma;
  for (Index a = 0; a < k; ++a) {
    Expression g = Expression::constant(0.0);
    for (Index b = 0; b < k; ++b) {
      for (Index c = 0; c < k; ++c) {
        Expression s = at(a, b, c).same_as(at(a, c, b)) ? at(a, b, c)
                                                         : Expression::constant(0.5) * (at(a, b, c) + at(a, c, b));
        sym[static_cast<std::size_t>((a * k + b) * k + c)] = s;
      }
      // Diagonal term plus twice the upper triangle.
      for (Index c = b; c < k; ++c) {
        const Expression& s = sym[static_cast<std::size_t>((a * k + b) * k + c)];
        if (s.is_number(0.0)) continue;
        const Expression yb = Expression::variable("y" + std::to_string(b + 1));
        const Expression yc = Expression::variable("y" + std::to_string(c + 1));
        const Expression coef = b == c ? s : Expression::constant(2.0) * s;
        g = g + coef * yb * yc;
      }
    }
    gamma.push_back(g);
  }
  return SodeField(model, std::move(gamma), params, std::move(sym));
}

/// Max |C^a_{bc}(q) + C^a_{cb}(q)| over seeded base samples.
[[nodiscard]] inline double antisymmetry_defect(const AlgebroidModel& model, int samples, std::uint64_t seed) {
  Sampler rng(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vector q = model.base_dim() > 0 ? model.base().sample(rng) : Vector(0);
    for (const auto& c : model.structure(q)) {
      if (c.size() > 0) worst = std::max(worst, (c + c.transpose()).cwiseAbs().maxCoeff());
    }
    if (model.base_dim() == 0) break;
  }
  return worst;
}

/// Jacobi identity residual for constant structure constants with zero anchor; nullopt otherwise.
[[nodiscard]] inline std::optional<double> jacobi_defect(const AlgebroidModel& model) {
  if (!model.structure_is_constant()) return std::nullopt;
  const Index n = model.base_dim();
  if (n > 0 && !(model.anchor_is_constant() && model.anchor_matrix(Vector::Zero(n)).isZero(0.0))) return std::nullopt;
  const Index k = model.rank();
  const auto c = model.structure(Vector::Zero(n));
  auto C = [&](Index a, Index b, Index d) { return c[static_cast<std::size_t>(a)](b, d); };
  double worst = 0.0;
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) {
      for (Index g = 0; g < k; ++g) {
        for (Index d = 0; d < k; ++d) {
          double s = 0.0;
          for (Index mu = 0; mu < k; ++mu) {
            s += C(mu, b, g) * C(a, mu, d) + C(mu, g, d) * C(a, mu, b) + C(mu, d, b) * C(a, mu, g);
          }
          worst = std::max(worst, std::abs(s));
        }
      }
    }
  }
  return worst;
}

}  // namespace algsode
