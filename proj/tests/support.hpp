#pragma once

#include <random>

#include "lipimm/grassmann.hpp"
#include "lipimm/karcher.hpp"

namespace lipimm::testing {

inline Mat gaussian(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g;
  Mat a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = g(rng);
  return a;
}

inline Subspace random_subspace(std::mt19937_64& rng, int n, int k) {
  return orthonormalize(gaussian(rng, n, k));
}

inline Mat random_orthogonal(std::mt19937_64& rng, int n) {
  Eigen::HouseholderQR<Mat> qr(gaussian(rng, n, n));
  return qr.householderQ() * Mat::Identity(n, n);
}

/// Point at geodesic distance `dist` from `base` in a random direction.
inline Subspace random_at_distance(std::mt19937_64& rng, const Subspace& base, double dist) {
  GrassmannTangent v = make_tangent(base, gaussian(rng, base.ambient_dim(), base.dim()));
  v.delta *= dist / v.norm();
  return exp_map(base, v);
}

/// Point within `radius` of `base`, uniformly random in distance.
inline Subspace random_within(std::mt19937_64& rng, const Subspace& base, double radius) {
  std::uniform_real_distribution<double> u(0, radius);
  return random_at_distance(rng, base, u(rng));
}

inline Subspace apply(const Mat& q, const Subspace& s) { return orthonormalize(q * s.frame()); }

}  // namespace lipimm::testing
