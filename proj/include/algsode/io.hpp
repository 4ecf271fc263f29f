/**
 * @file io.hpp
 * @brief Trajectory CSV output.
 */
#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include "algsode/algebroid.hpp"
#include "algsode/error.hpp"

namespace algsode {

/// Round-trip exact decimal form (%.17g).
[[nodiscard]] inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Header `t,q1..qn,y1..yk` then one row per sample.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, Index n, Index k) {
  out << 't';
  for (Index i = 0; i < n; ++i) out << ",q" << i + 1;
  for (Index a = 0; a < k; ++a) out << ",y" << a + 1;
  out << '\n';
  for (std::size_t s = 0; s < traj.size(); ++s) {
    out << format_double(traj.t[s]);
    for (Index i = 0; i < n; ++i) out << ',' << format_double(traj.q[s][i]);
    for (Index a = 0; a < k; ++a) out << ',' << format_double(traj.y[s][a]);
    out << '\n';
  }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj, Index n, Index k) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::config_error, "cannot open " + path + " for writing");
  write_trajectory_csv(out, traj, n, k);
  if (!out) throw Error(ErrorCode::config_error, "failed writing " + path);
}

}  // namespace algsode
