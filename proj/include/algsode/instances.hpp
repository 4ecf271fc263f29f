/**
 * @file instances.hpp
 * @brief Registry of built-in models: tangent bundles, a fibration, the pair groupoid,
 *        the groupoid of a fibration and rotation groups.
 */
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "algsode/algebroid.hpp"
#include "algsode/error.hpp"
#include "algsode/groupoid.hpp"
#include "algsode/so3.hpp"

namespace algsode {

using ParamValue = std::variant<double, Vector, Matrix, std::string>;

struct InstanceSpec {
  std::string name;
  std::map<std::string, ParamValue> params;
};

struct BuiltInstance {
  std::string name;
  AlgebroidModel algebroid;
  std::optional<SodeField> sode;
  std::optional<GroupoidModel> groupoid;
  /// For fibrations Q -> M: number of leading coordinates of Q that are coordinates of M.
  std::optional<Index> fibration_base;
};

[[nodiscard]] inline std::vector<std::string> registry_names() {
  return {"euclidean", "harmonic",  "pendulum",       "sphere_chart", "fibration_r3",
          "pair",      "fibration_groupoid", "so3_rigid_body", "so2"};
}

inline BuiltInstance build_model(const InstanceSpec& spec);

namespace detail {

/// Typed access to instance parameters; remembers which keys were read.
class ParamReader {
 public:
  ParamReader(const std::string& instance, const std::map<std::string, ParamValue>& params)
      : instance_(instance), params_(params) {}

  double number(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = params_.find(key);
    if (it == params_.end()) return fallback;
    if (const double* d = std::get_if<double>(&it->second)) return *d;
    throw invalid(key, "expected a number");
  }

  Index integer(const std::string& key, Index fallback, Index min_value) {
    const double d = number(key, static_cast<double>(fallback));
    if (d != std::floor(d) || d < static_cast<double>(min_value)) throw invalid(key, "expected an integer >= " + std::to_string(min_value));
    return static_cast<Index>(d);
  }

  double positive(const std::string& key, double fallback) {
    const double d = number(key, fallback);
    if (!(d > 0.0) || !std::isfinite(d)) throw invalid(key, "expected a positive number");
    return d;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = params_.find(key);
    if (it == params_.end()) return fallback;
    if (const std::string* s = std::get_if<std::string>(&it->second)) return *s;
    throw invalid(key, "expected a string");
  }

  std::optional<ParamValue> raw(const std::string& key) {
    used_.insert(key);
    auto it = params_.find(key);
    if (it == params_.end()) return std::nullopt;
    return it->second;
  }

  /// Parameters not read so far.
  std::map<std::string, ParamValue> rest() const {
    std::map<std::string, ParamValue> out;
    for (const auto& [k, v] : params_) {
      if (!used_.count(k)) out.emplace(k, v);
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : params_) {
      if (!used_.count(k)) throw Error(ErrorCode::invalid_params, "instance '" + instance_ + "' has no parameter '" + k + "'");
    }
  }

  Error invalid(const std::string& key, const std::string& what) const {
    return Error(ErrorCode::invalid_params, "instance '" + instance_ + "', parameter '" + key + "': " + what);
  }

 private:
  std::string instance_;
  const std::map<std::string, ParamValue>& params_;
  std::set<std::string> used_;
};

inline int levi_civita(Index a, Index b, Index c) {
  if (a == b || b == c || a == c) return 0;
  return ((b - a + 3) % 3 == 1) ? 1 : -1;
}

inline SodeField zero_spray(const AlgebroidModel& model) {
  const auto k = static_cast<std::size_t>(model.rank());
  return spray_from_coefficients(model, std::vector<Expression>(k * k * k, Expression::constant(0.0)));
}

inline BuiltInstance euclidean(ParamReader& p) {
  const Index dim = p.integer("dim", 1, 1);
  const double hw = p.positive("half_width", 10.0);
  p.finish();
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(dim, hw));
  return {"euclidean", model, zero_spray(model), std::nullopt, std::nullopt};
}

inline BuiltInstance harmonic(ParamReader& p) {
  const double omega = p.positive("omega", 1.0);
  const double hw = p.positive("half_width", 10.0);
  p.finish();
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(1, hw));
  SodeField sode(model, {Expression::parse("-(omega^2)*q1")}, {{"omega", omega}});
  return {"harmonic", model, sode, std::nullopt, std::nullopt};
}

inline BuiltInstance pendulum(ParamReader& p) {
  const double gravity = p.positive("gravity", 1.0);
  const double hw = p.positive("half_width", 3.0);
  p.finish();
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(1, hw));
  SodeField sode(model, {Expression::parse("-gravity*sin(q1)")}, {{"gravity", gravity}});
  return {"pendulum", model, sode, std::nullopt, std::nullopt};
}

/// Geodesic spray of the round sphere in stereographic coordinates:
/// Gamma^k_{ij} = (2 q_i d_kj + 2 q_j d_ki - 2 d_ij q_k) / (1 + |q|^2).
inline SodeField sphere_spray(const AlgebroidModel& model) {
  const Expression q[] = {Expression::variable("q1"), Expression::variable("q2")};
  const Expression two = Expression::constant(2.0);
  const Expression den = Expression::constant(1.0) + Expression::power(q[0], two) + Expression::power(q[1], two);
  std::vector<Expression> coeffs;
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        Expression num = Expression::constant(0.0);
        if (j == k) num = num + two * q[i];
        if (i == k) num = num + two * q[j];
        if (i == j) num = num - two * q[k];
        coeffs.push_back(num.is_number(0.0) ? num : num / den);
      }
    }
  }
  return spray_from_coefficients(model, coeffs);
}

inline BuiltInstance sphere_chart(ParamReader& p) {
  const double hw = p.positive("half_width", 2.0);
  p.finish();
  const auto model = AlgebroidModel::tangent_bundle(ChartBox::cube(2, hw));
  return {"sphere_chart", model, sphere_spray(model), std::nullopt, std::nullopt};
}

/// Vertical bundle of pi(x, a, b) = x: rho = [[0, 0], [1, 0], [0, 1]], C = 0.
inline AlgebroidModel vertical_bundle_r3(double hw) {
  std::vector<Expression> anchor;
  for (const double v : {0.0, 0.0, 1.0, 0.0, 0.0, 1.0}) anchor.push_back(Expression::constant(v));
  return AlgebroidModel(ChartBox::cube(3, hw), 2, anchor, {});
}

inline SodeField fibration_sode(ParamReader& p, const AlgebroidModel& model) {
  const std::string f1 = p.text("force1", "-(1 + q1^2)*q2");
  const std::string f2 = p.text("force2", "-(1 + q1^2)*q3");
  return SodeField(model, {Expression::parse(f1), Expression::parse(f2)});
}

inline BuiltInstance fibration_r3(ParamReader& p) {
  const double hw = p.positive("half_width", 5.0);
  const auto model = vertical_bundle_r3(hw);
  auto sode = fibration_sode(p, model);
  p.finish();
  return {"fibration_r3", model, sode, std::nullopt, Index{1}};
}

/// Pair groupoid Q x Q over the chart of `base`; elements (a, b) with alpha = a, beta = b.
inline GroupoidModel pair_groupoid(const ChartBox& base, const AlgebroidModel& algebroid) {
  const Index n = base.dim();
  std::vector<std::string> names;
  for (Index i = 0; i < n; ++i) names.push_back("a" + std::to_string(i + 1));
  for (Index i = 0; i < n; ++i) names.push_back("b" + std::to_string(i + 1));
  Vector lo(2 * n);
  Vector hi(2 * n);
  lo << base.lower, base.lower;
  hi << base.upper, base.upper;
  GroupoidMaps maps;
  maps.source = [n](const Vector& g) { return Vector(g.head(n)); };
  maps.target = [n](const Vector& g) { return Vector(g.tail(n)); };
  maps.identity = [n](const Vector& q) {
    Vector g(2 * n);
    g << q, q;
    return g;
  };
  maps.inverse = [n](const Vector& g) {
    Vector out(2 * n);
    out << g.tail(n), g.head(n);
    return out;
  };
  maps.multiply = [n](const Vector& g, const Vector& h) {
    Vector out(2 * n);
    out << g.head(n), h.tail(n);
    return out;
  };
  const Matrix frame = (Matrix(2 * n, n) << Matrix::Zero(n, n), Matrix::Identity(n, n)).finished();
  maps.algebroid_frame = [frame](const Vector&) { return frame; };
  maps.vertical_frame = [frame](const Vector&) { return frame; };
  maps.psi_matrix = [frame](const Vector&) { return Matrix(frame.transpose()); };
  maps.fiber_embed = [n](const Vector& q, const Vector& u) {
    Vector g(2 * n);
    g << q, q + u;
    return g;
  };
  maps.fiber_coords = [n](const Vector& g) { return Vector(g.tail(n) - g.head(n)); };
  return GroupoidModel("pair", ChartBox(lo, hi, names), base, algebroid, std::move(maps));
}

inline BuiltInstance pair(ParamReader& p) {
  const std::string base_name = p.text("base", "harmonic");
  if (base_name != "euclidean" && base_name != "harmonic" && base_name != "pendulum" && base_name != "sphere_chart") {
    throw p.invalid("base", "expected one of euclidean, harmonic, pendulum, sphere_chart");
  }
  BuiltInstance base = build_model({base_name, p.rest()});
  BuiltInstance out{"pair", base.algebroid, base.sode, pair_groupoid(base.algebroid.base(), base.algebroid), std::nullopt};
  return out;
}

/// Groupoid of pi(x, a, b) = x: elements (x, a1, b1, a2, b2).
inline GroupoidModel fibration_groupoid_model(const AlgebroidModel& algebroid, double hw) {
  GroupoidMaps maps;
  maps.source = [](const Vector& g) { return Vector(g.head(3)); };
  maps.target = [](const Vector& g) { return Vector((Vector(3) << g[0], g[3], g[4]).finished()); };
  maps.identity = [](const Vector& q) { return Vector((Vector(5) << q, q[1], q[2]).finished()); };
  maps.inverse = [](const Vector& g) { return Vector((Vector(5) << g[0], g[3], g[4], g[1], g[2]).finished()); };
  maps.multiply = [](const Vector& g, const Vector& h) {
    return Vector((Vector(5) << g[0], g[1], g[2], h[3], h[4]).finished());
  };
  Matrix frame = Matrix::Zero(5, 2);
  frame(3, 0) = 1.0;
  frame(4, 1) = 1.0;
  maps.algebroid_frame = [frame](const Vector&) { return frame; };
  maps.vertical_frame = [frame](const Vector&) { return frame; };
  maps.psi_matrix = [frame](const Vector&) { return Matrix(frame.transpose()); };
  maps.fiber_embed = [](const Vector& q, const Vector& u) {
    return Vector((Vector(5) << q, q[1] + u[0], q[2] + u[1]).finished());
  };
  maps.fiber_coords = [](const Vector& g) { return Vector((Vector(2) << g[3] - g[1], g[4] - g[2]).finished()); };
  return GroupoidModel("fibration_groupoid", ChartBox::cube(5, hw, "g"), ChartBox::cube(3, hw), algebroid,
                       std::move(maps));
}

inline BuiltInstance fibration_groupoid(ParamReader& p) {
  const double hw = p.positive("half_width", 5.0);
  const auto model = vertical_bundle_r3(hw);
  auto sode = fibration_sode(p, model);
  p.finish();
  return {"fibration_groupoid", model, sode, fibration_groupoid_model(model, hw), Index{1}};
}

/// so(3) with structure constants C^c_{ab} = eps_{abc}.
inline AlgebroidModel so3_algebra() {
  std::vector<Expression> structure;
  for (Index a = 0; a < 3; ++a) {
    for (Index b = 0; b < 3; ++b) {
      for (Index c = 0; c < 3; ++c) structure.push_back(Expression::constant(levi_civita(b, c, a)));
    }
  }
  return AlgebroidModel(ChartBox(Vector(0), Vector(0)), 3, {}, structure);
}

/// SO(3) in exponential coordinates |theta| < pi - 0.1, as a groupoid over a point.
inline GroupoidModel so3_group(const AlgebroidModel& algebra) {
  const double r = std::numbers::pi - 0.1;
  GroupoidMaps maps;
  maps.source = [](const Vector&) { return Vector(0); };
  maps.target = [](const Vector&) { return Vector(0); };
  maps.identity = [](const Vector&) { return Vector(Vector::Zero(3)); };
  maps.inverse = [](const Vector& g) { return Vector(-g); };
  maps.multiply = [](const Vector& g, const Vector& h) {
    return Vector(so3::compose(so3::Vec3(g), so3::Vec3(h)));
  };
  maps.algebroid_frame = [](const Vector&) { return Matrix(Matrix::Identity(3, 3)); };
  maps.vertical_frame = [](const Vector&) { return Matrix(Matrix::Identity(3, 3)); };
  maps.psi_matrix = [](const Vector& g) { return Matrix(so3::right_jacobian(so3::Vec3(g))); };
  maps.fiber_embed = [](const Vector&, const Vector& u) { return u; };
  maps.fiber_coords = [](const Vector& g) { return g; };
  return GroupoidModel("so3", ChartBox::cube(3, r, "theta", r), ChartBox(Vector(0), Vector(0)), algebra,
                       std::move(maps));
}

inline Matrix inertia_matrix(ParamReader& p) {
  const auto raw = p.raw("inertia");
  Matrix inertia = Vector((Vector(3) << 1.0, 2.0, 3.0).finished()).asDiagonal();
  if (raw) {
    if (const Vector* v = std::get_if<Vector>(&*raw)) {
      if (v->size() != 3) throw p.invalid("inertia", "expected 3 principal moments");
      inertia = v->asDiagonal();
    } else if (const Matrix* m = std::get_if<Matrix>(&*raw)) {
      if (m->rows() != 3 || m->cols() != 3) throw p.invalid("inertia", "expected a 3 x 3 matrix");
      inertia = *m;
    } else {
      throw p.invalid("inertia", "expected a vector or a matrix");
    }
  }
  if ((inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12 * inertia.cwiseAbs().maxCoeff()) {
    throw p.invalid("inertia", "must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(inertia);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw p.invalid("inertia", "must be positive definite");
  return inertia;
}

/// Quadratic coefficients of xi -> I^-1 (I xi x xi): T^a_{ec} = sum_{d,b} Iinv_{ad} eps_{dbc} I_{be}.
inline std::vector<Expression> rigid_body_coefficients(const Matrix& inertia) {
  const Matrix inv = inertia.inverse();
  std::vector<Expression> coeffs;
  for (Index a = 0; a < 3; ++a) {
    for (Index e = 0; e < 3; ++e) {
      for (Index c = 0; c < 3; ++c) {
        double t = 0.0;
        for (Index d = 0; d < 3; ++d) {
          for (Index b = 0; b < 3; ++b) t += inv(a, d) * levi_civita(d, b, c) * inertia(b, e);
        }
        coeffs.push_back(Expression::constant(t));
      }
    }
  }
  return coeffs;
}

inline BuiltInstance so3_rigid_body(ParamReader& p) {
  const Matrix inertia = inertia_matrix(p);
  p.finish();
  const auto algebra = so3_algebra();
  return {"so3_rigid_body", algebra, spray_from_coefficients(algebra, rigid_body_coefficients(inertia)),
          so3_group(algebra), std::nullopt};
}

inline BuiltInstance so2(ParamReader& p) {
  p.finish();
  const AlgebroidModel algebra(ChartBox(Vector(0), Vector(0)), 1, {}, {});
  const double r = std::numbers::pi - 0.1;
  GroupoidMaps maps;
  maps.source = [](const Vector&) { return Vector(0); };
  maps.target = [](const Vector&) { return Vector(0); };
  maps.identity = [](const Vector&) { return Vector(Vector::Zero(1)); };
  maps.inverse = [](const Vector& g) { return Vector(-g); };
  maps.multiply = [](const Vector& g, const Vector& h) { return Vector(g + h); };
  maps.algebroid_frame = [](const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
  maps.vertical_frame = [](const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
  maps.psi_matrix = [](const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
  maps.fiber_embed = [](const Vector&, const Vector& u) { return u; };
  maps.fiber_coords = [](const Vector& g) { return g; };
  GroupoidModel group("so2", ChartBox::cube(1, r, "theta"), ChartBox(Vector(0), Vector(0)), algebra, std::move(maps));
  return {"so2", algebra, zero_spray(algebra), group, std::nullopt};
}

}  // namespace detail

/// Build a registry instance; unknown names and parameters are rejected.
inline BuiltInstance build_model(const InstanceSpec& spec) {
  detail::ParamReader p(spec.name, spec.params);
  if (spec.name == "euclidean") return detail::euclidean(p);
  if (spec.name == "harmonic") return detail::harmonic(p);
  if (spec.name == "pendulum") return detail::pendulum(p);
  if (spec.name == "sphere_chart") return detail::sphere_chart(p);
  if (spec.name == "fibration_r3") return detail::fibration_r3(p);
  if (spec.name == "pair") return detail::pair(p);
  if (spec.name == "fibration_groupoid") return detail::fibration_groupoid(p);
  if (spec.name == "so3_rigid_body") return detail::so3_rigid_body(p);
  if (spec.name == "so2") return detail::so2(p);
  throw Error(ErrorCode::unknown_instance, "no instance named '" + spec.name + "'");
}

[[nodiscard]] inline BuiltInstance build_model(const std::string& name) { return build_model(InstanceSpec{name, {}}); }

}  // namespace algsode
