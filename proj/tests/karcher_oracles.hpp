#pragma once

#include <cmath>
#include <random>

#include "lipimm/karcher.hpp"
#include "support.hpp"

namespace lipimm::testing {

/// Angle between two lines of R^3, straight from the definition.
inline double line_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

/// Brute-force minimizer of Σ w_i ∠(ℓ, ℓ_i)² over lines of R^3 near `centre`,
/// scanning the gnomonic chart at `centre` with spacing `step` on [-half, half]².
inline Eigen::Vector3d grid_mean_line(const std::vector<Eigen::Vector3d>& lines, const std::vector<double>& w,
                                      const Eigen::Vector3d& centre, double half, double step) {
  Eigen::Vector3d c = centre.normalized();
  Eigen::Vector3d e1 = c.unitOrthogonal(), e2 = c.cross(e1);
  double best = 1e300;
  Eigen::Vector3d arg = c;
  const int n = static_cast<int>(std::round(half / step));
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j) {
      const Eigen::Vector3d l = c + i * step * e1 + j * step * e2;
      double e = 0;
      for (std::size_t a = 0; a < lines.size(); ++a) {
        const double t = line_angle(l, lines[a]);
        e += w[a] * t * t;
      }
      if (e < best) best = e, arg = l;
    }
  return arg.normalized();
}

}  // namespace lipimm::testing
