/**
 * @file so3.hpp
 * @brief Rotation group helpers in exponential coordinates.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "algsode/error.hpp"

namespace algsode::so3 {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

[[nodiscard]] inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

[[nodiscard]] inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

/// Rodrigues formula.
[[nodiscard]] inline Mat3 exp(const Vec3& theta) {
  const double phi2 = theta.squaredNorm();
  const double phi = std::sqrt(phi2);
  double a;
  double b;
  if (phi < 1e-4) {
    a = 1.0 - phi2 / 6.0 + phi2 * phi2 / 120.0;
    b = 0.5 - phi2 / 24.0 + phi2 * phi2 / 720.0;
  } else {
    a = std::sin(phi) / phi;
    b = (1.0 - std::cos(phi)) / phi2;
  }
  const Mat3 k = hat(theta);
  return Mat3::Identity() + a * k + b * k * k;
}

/// Principal logarithm; requires a rotation angle below pi.
[[nodiscard]] inline Vec3 log(const Mat3& r) {
  const Vec3 axis = vee(r - r.transpose());  // 2 sin(phi) * unit axis
  const double phi = std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
  if (phi < 1e-4) {
    return 0.5 * (1.0 + phi * phi / 6.0 + 7.0 * std::pow(phi, 4) / 360.0) * axis;
  }
  if (std::numbers::pi - phi < 1e-6) throw Error(ErrorCode::out_of_chart, "rotation angle too close to pi for the logarithm");
  return (phi / (2.0 * std::sin(phi))) * axis;
}

/// Right Jacobian: exp(theta + d) = exp(theta) exp(J_r(theta) d) to first order.
[[nodiscard]] inline Mat3 right_jacobian(const Vec3& theta) {
  const double phi2 = theta.squaredNorm();
  const double phi = std::sqrt(phi2);
  double a;
  double b;
  if (phi < 1e-4) {
    a = 0.5 - phi2 / 24.0 + phi2 * phi2 / 720.0;
    b = 1.0 / 6.0 - phi2 / 120.0 + phi2 * phi2 / 5040.0;
  } else {
    a = (1.0 - std::cos(phi)) / phi2;
    b = (phi - std::sin(phi)) / (phi2 * phi);
  }
  const Mat3 k = hat(theta);
  return Mat3::Identity() - a * k + b * k * k;
}

/// Composition in exponential coordinates: log(exp(a) exp(b)).
[[nodiscard]] inline Vec3 compose(const Vec3& a, const Vec3& b) { return log(exp(a) * exp(b)); }

/// Rotation by `angle` about the z axis.
[[nodiscard]] inline Mat3 rot_z(double angle) {
  Mat3 m;
  m << std::cos(angle), -std::sin(angle), 0.0, std::sin(angle), std::cos(angle), 0.0, 0.0, 0.0, 1.0;
  return m;
}

}  // namespace algsode::so3
