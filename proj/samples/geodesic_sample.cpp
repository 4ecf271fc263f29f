// Geodesics of the round sphere in a stereographic chart: shoot between two points,
// check the connecting curve, and print its speed profile.
#include <cstdio>

#include "algsode/expmap.hpp"
#include "algsode/instances.hpp"

int main() {
  using namespace algsode;
  const BuiltInstance sphere = build_model("sphere_chart");
  const SodeField& spray = *sphere.sode;

  Vector from(2);
  Vector to(2);
  from << 0.1, 0.2;
  to << 0.6, -0.4;
  const double h = 1.0;

  IntegratorConfig cfg;
  cfg.sample_interval = 0.1;
  const auto [retraction, sol] = retraction_pair(spray, h, from, to, std::nullopt, {}, cfg);
  std::printf("initial velocity  (%.12f, %.12f)\n", retraction.minus[0], retraction.minus[1]);
  std::printf("final velocity    (%.12f, %.12f)\n", retraction.plus[0], retraction.plus[1]);
  std::printf("newton iterations %d, residual %.3e\n", sol.iterations, sol.residual);

  // Round-metric speed 2|y| / (1 + |q|^2) is constant along geodesics.
  for (std::size_t i = 0; i < sol.trajectory.size(); ++i) {
    const Vector& q = sol.trajectory.q[i];
    const Vector& y = sol.trajectory.y[i];
    std::printf("t=%.2f  q=(% .6f, % .6f)  speed=%.12f\n", sol.trajectory.t[i], q[0], q[1],
                2.0 * y.norm() / (1.0 + q.squaredNorm()));
  }

  const auto [a, b] = exp_pair(spray, h, from, retraction.minus);
  std::printf("exp of the retraction returns (%.12f, %.12f) -> (%.12f, %.12f)\n", a[0], a[1], b[0], b[1]);
  return 0;
}
