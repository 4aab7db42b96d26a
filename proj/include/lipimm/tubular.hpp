#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lipimm/immersion.hpp"
#include "lipimm/normals.hpp"
#include "lipimm/parallel.hpp"

namespace lipimm {

struct TubeParams {
  double epsilon = 0;
  double sigma = 0;
  double rho = 0;
  double gamma = 0;
  double L = 0;
  double lambda = 0;
  bool half_rho_branch = false;  // σ = (ϱ/2) cos γ rather than cos²γ / (2L(1+λ))

  std::string branch() const { return half_rho_branch ? "half-rho" : "curvature"; }
};

inline TubeParams tube_params(double rho, double lambda, double L, double gamma) {
  if (!(rho > 0) || !(L > 0) || !(lambda >= 0) || !(gamma >= 0))
    fail(ErrorKind::invalid_input, "need rho > 0, L > 0, lambda >= 0, gamma >= 0");
  if (gamma >= std::numbers::pi / 2) fail(ErrorKind::precondition_unmet, "gamma must stay below pi/2");
  TubeParams p;
  p.rho = rho;
  p.lambda = lambda;
  p.L = L;
  p.gamma = gamma;
  const double cg = std::cos(gamma);
  p.epsilon = cg / L;
  const double half = 0.5 * rho * cg, curv = cg * cg / (2 * L * (1 + lambda));
  p.half_rho_branch = half < curv;
  p.sigma = std::min(half, curv);
  return p;
}

/// Tube on a δ₃-chart with the averaged-field constants L and γ.
inline TubeParams pipeline_tube_params(int m, double lambda, double r) {
  const auto c = constants(m, lambda, r);
  return tube_params(delta(3, r, lambda), lambda, c.L_codim1, c.gamma);
}

/// Angle allowance used for tubes along N in codimension > 1: arctan λ + π/12.
/// An extrapolation of the hypersurface construction, not a derived constant.
inline double higher_codim_gamma(double lambda) { return std::atan(lambda) + std::numbers::pi / 12; }

// ---------------------------------------------------------------------------
// Line-graph intersection

namespace detail {

inline Vec graph_point(const GraphPatch& p, Vec x) {
  const double nx = x.norm();
  if (nx > p.radius) x *= p.radius / nx;
  Vec z(p.m + p.k);
  z.head(p.m) = x;
  z.tail(p.k) = p.value(x);
  return z;
}

inline void require_codim1_patch(const GraphPatch& p) {
  if (p.k != 1) fail(ErrorKind::invalid_input, "line intersection needs a codimension-1 patch");
}

}  // namespace detail

struct FiberHit {
  Vec point;  // in R^n
  Vec x;      // patch coordinate of the hit
  double t = 0;
};

/// The point where anchor + t·ω meets the graph of the patch, or none if the line misses it.
inline std::optional<FiberHit> fiber_intersection(const GraphPatch& patch, const Vec& omega, const Vec& anchor) {
  detail::require_codim1_patch(patch);
  const int m = patch.m, n = m + 1;
  if (omega.size() != n || anchor.size() != n) fail(ErrorKind::dimension_mismatch, "line and patch dimensions differ");
  if (std::abs(omega.norm() - 1) > 1e-9) fail(ErrorKind::invalid_input, "direction must be a unit vector");
  const Vec a = patch.isometry.inverse_apply(anchor);
  const Vec d = patch.isometry.rotation.transpose() * omega;
  const Vec ax = a.head(m), dx = d.head(m);
  const double az = a(m), dz = d(m), R = patch.radius;

  // Brackets come from the interpolated graph; an exact evaluator then polishes the root.
  auto residual = [&](double t) { return az + t * dz - patch.interpolate(ax + t * dx)(0); };
  auto exact_residual = [&](double t) { return az + t * dz - patch.value(ax + t * dx)(0); };
  auto check_transversal = [&] {
    int pos = 0, neg = 0;
    for (int idx = 0; idx < patch.node_count(); ++idx) {
      if (!patch.inside[idx]) continue;
      const double s = dz - (patch.jacobian(idx) * dx)(0);
      if (s > 1e-12) ++pos;
      else if (s < -1e-12) ++neg;
      else ++pos, ++neg;
    }
    if (pos && neg) fail(ErrorKind::non_transversal, "the line is tangent to the graph somewhere on the patch");
  };
  auto hit = [&](double t) {
    FiberHit h;
    h.t = t;
    h.x = ax + t * dx;
    h.point = anchor + t * omega;
    return h;
  };

  const double A = dx.squaredNorm();
  if (A < 1e-30) {
    // Line along the graph axis: it meets the graph once above its foot, if the foot is in the ball.
    if (ax.norm() > R) return std::nullopt;
    check_transversal();
    return hit((patch.value(ax)(0) - az) / dz);
  }
  const double B = 2 * ax.dot(dx), C = ax.squaredNorm() - R * R;
  const double disc = B * B - 4 * A * C;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = (-B - sq) / (2 * A), t1 = (-B + sq) / (2 * A);

  constexpr int kScan = 65;
  std::vector<double> ts(kScan), rs(kScan);
  for (int i = 0; i < kScan; ++i) {
    ts[i] = t0 + (t1 - t0) * i / (kScan - 1);
    rs[i] = residual(ts[i]);
  }
  std::vector<std::pair<double, double>> brackets;
  for (int i = 0; i < kScan; ++i) {
    if (rs[i] == 0) brackets.push_back({ts[i], ts[i]});
    else if (i + 1 < kScan && rs[i + 1] != 0 && (rs[i] < 0) != (rs[i + 1] < 0)) brackets.push_back({ts[i], ts[i + 1]});
  }
  if (brackets.empty()) return std::nullopt;
  if (brackets.size() > 1)
    fail(ErrorKind::uniqueness_violation, "the line meets the graph " + std::to_string(brackets.size()) + " times");
  check_transversal();
  auto [lo, hi] = brackets.front();
  if (lo != hi) {
    double rlo = residual(lo);
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double rm = residual(mid);
      if (rm == 0) {
        lo = hi = mid;
        break;
      }
      if ((rm < 0) == (rlo < 0)) lo = mid, rlo = rm;
      else hi = mid;
    }
  }
  double t = 0.5 * (lo + hi);
  if (patch.exact) {
    const double tmax = std::max(std::abs(t0), std::abs(t1));
    double r = exact_residual(t);
    double h = 1e-7 * R;
    for (int it = 0; it < 8 && r != 0; ++it) {
      const double slope = (exact_residual(t + h) - r) / h;
      if (slope == 0) break;
      const double next = t - r / slope;
      if (!(std::abs(next) <= tmax)) break;
      const double rn = exact_residual(next);
      if (std::abs(rn) >= std::abs(r)) break;
      h = std::max(std::abs(next - t), 1e-12 * R);
      t = next;
      r = rn;
    }
  }
  return hit(t);
}

// ---------------------------------------------------------------------------
// Fields along a patch and the fiber map F(x, t) = (x, u(x)) + t·T(x)

/// Unit direction in R^n at a patch coordinate.
using TubeField = std::function<Vec(const Vec&)>;

inline TubeField constant_field(Vec v) {
  v.normalize();
  return [v](const Vec&) { return v; };
}

/// T = S/|S| from the averaged field of chart j, evaluated at the graph point over x.
inline TubeField pipeline_field(const NormalAverager& avg, const GraphPatch& patch, int j) {
  auto p = std::make_shared<const GraphPatch>(patch);
  return [&avg, p, j](const Vec& x) {
    return Vec(avg.S_at_point(p->isometry.apply(detail::graph_point(*p, x)), j).normalized());
  };
}

namespace detail {

inline double radical_inverse(std::uint64_t i, unsigned base) {
  double inv = 1.0 / base, f = inv, out = 0;
  while (i > 0) {
    out += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return out;
}

/// Component `dim` of the Halton point with the given index.
inline double halton(std::uint64_t index, int dim) {
  static constexpr unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
  return radical_inverse(index, primes[dim % 10]);
}

inline std::uint64_t halton_start(std::uint64_t seed) { return 1 + (seed % 1000003) * 7919; }

/// Uniform point of the closed m-ball of radius R from two Halton coordinates.
inline Vec ball_point(int m, double R, double u0, double u1) {
  Vec x(m);
  if (m == 1) x(0) = (2 * u0 - 1) * R;
  else {
    const double rad = R * std::sqrt(u0), th = 2 * std::numbers::pi * u1;
    x(0) = rad * std::cos(th);
    x(1) = rad * std::sin(th);
  }
  return x;
}

inline Vec unit_direction(int n, double u0, double u1) {
  Vec v(n);
  const double th = 2 * std::numbers::pi * u0;
  if (n == 2) {
    v << std::cos(th), std::sin(th);
  } else {
    const double z = 2 * u1 - 1, s = std::sqrt(std::max(0.0, 1 - z * z));
    v << s * std::cos(th), s * std::sin(th), z;
  }
  return v;
}

/// Distance between the segments [p1, q1] and [p2, q2].
inline double segment_distance(const Vec& p1, const Vec& q1, const Vec& p2, const Vec& q2) {
  const Vec d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-300 && e <= 1e-300) return r.norm();
  if (a <= 1e-300) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-300) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2), den = a * e - b * b;
      s = den > 0 ? std::clamp((b * f - c * e) / den, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

}  // namespace detail

struct ProbeOptions {
  long trials = 100000;
  std::uint64_t seed = 42;
  double epsilon_factor = 1;  // > 1 deliberately leaves the guaranteed regime
};

struct InjectivityReport {
  long trials = 0;
  double epsilon = 0;
  bool injective = true;
  long collisions = 0;
  double min_separation = std::numeric_limits<double>::infinity();        // between distinct fibers
  double min_separation_ratio = std::numeric_limits<double>::infinity();  // separation / |x - y|
  long separation_pairs = 0;
  long separation_violations = 0;
  double separation_bound = 0;  // cos γ
  double worst_separation_ratio = std::numeric_limits<double>::infinity();
};

/// Samples pairs x ≠ y of the patch and checks that the fiber segments
/// {F(x,t) : |t| < ε} and {F(y,s) : |s| < ε} are disjoint. Also checks that the
/// distance from (x,u(x)) to the fiber line through y is at least |x - y| cos γ.
/// Half of the pairs are close (|x - y| ≤ 10⁻³ ϱ).
inline InjectivityReport injectivity_probe(const GraphPatch& patch, const TubeField& T, const TubeParams& params,
                                           const ProbeOptions& opt = {}) {
  detail::require_codim1_patch(patch);
  const int m = patch.m;
  const double R = patch.radius, eps = params.epsilon * opt.epsilon_factor;
  const Mat Rt = patch.isometry.rotation.transpose();
  InjectivityReport rep;
  rep.trials = opt.trials;
  rep.epsilon = eps;
  rep.separation_bound = std::cos(params.gamma);
  const double touch = 1e-12 * R;
  const std::uint64_t start = detail::halton_start(opt.seed);

  std::vector<double> sep(opt.trials), ratio(opt.trials), chord(opt.trials);
  std::vector<char> hit(opt.trials, 0);
  parallel_for(opt.trials, [&](std::size_t i) {
    const std::uint64_t h = start + i;
    const Vec x = detail::ball_point(m, R, detail::halton(h, 0), detail::halton(h, 1));
    Vec y = detail::ball_point(m, R, detail::halton(h, 2), detail::halton(h, 3));
    if (i % 2 == 1) {
      y = x + detail::ball_point(m, 1e-3 * R, detail::halton(h, 2), detail::halton(h, 3));
      if (y.norm() > R) y *= R / y.norm();
    }
    const double dxy = (x - y).norm();
    if (dxy == 0) {
      sep[i] = ratio[i] = chord[i] = std::numeric_limits<double>::infinity();
      return;
    }
    const Vec px = detail::graph_point(patch, x), py = detail::graph_point(patch, y);
    const Vec tx = Rt * T(x), ty = Rt * T(y);
    sep[i] = detail::segment_distance(px - eps * tx, px + eps * tx, py - eps * ty, py + eps * ty);
    ratio[i] = sep[i] / dxy;
    hit[i] = sep[i] <= touch;
    auto line_dist = [](const Vec& p, const Vec& base, const Vec& dir) {
      const Vec v = p - base;
      return (v - v.dot(dir) * dir).norm();
    };
    chord[i] = std::min(line_dist(px, py, ty), line_dist(py, px, tx)) / dxy;
  });
  for (long i = 0; i < opt.trials; ++i) {
    if (!std::isfinite(sep[i])) continue;
    rep.collisions += hit[i];
    rep.min_separation = std::min(rep.min_separation, sep[i]);
    rep.min_separation_ratio = std::min(rep.min_separation_ratio, ratio[i]);
    ++rep.separation_pairs;
    rep.worst_separation_ratio = std::min(rep.worst_separation_ratio, chord[i]);
    if (chord[i] < rep.separation_bound - 1e-9) ++rep.separation_violations;
  }
  rep.injective = rep.collisions == 0;
  return rep;
}

struct InclusionReport {
  long points = 0;
  long reached = 0;
  double radius = 0;       // probe points lie within this distance of the inner half-patch
  bool in_contract = true;  // radius ≤ σ, so every point must be reached
  double max_abs_t = 0;    // largest fiber parameter used among reached points
  double epsilon = 0;
  bool holds = true;
};

namespace detail {

// Fiber (x, t) through z with |x - x0| small, for curves: bisection on the cross product of z - P(x) with T(x).
inline std::optional<std::pair<Vec, double>> fiber_foot_curve(const GraphPatch& patch, const TubeField& T,
                                                              const Mat& Rt, const Vec& z, double x0, double w) {
  const double R = patch.radius;
  const double lo0 = std::max(-R, x0 - w), hi0 = std::min(R, x0 + w);
  auto h = [&](double s) {
    Vec x(1);
    x(0) = s;
    const Vec v = z - graph_point(patch, x);
    const Vec t = Rt * T(x);
    return v(0) * t(1) - v(1) * t(0);
  };
  constexpr int kScan = 65;
  std::optional<std::pair<Vec, double>> best;
  double prev_s = lo0, prev_h = h(lo0);
  for (int i = 1; i < kScan; ++i) {
    const double s = lo0 + (hi0 - lo0) * i / (kScan - 1), hs = h(s);
    if (prev_h == 0 || (prev_h < 0) != (hs < 0)) {
      double a = prev_s, b = s, ha = prev_h;
      for (int it = 0; it < 80 && ha != 0; ++it) {
        const double mid = 0.5 * (a + b), hm = h(mid);
        if (hm == 0) {
          a = b = mid;
          break;
        }
        if ((hm < 0) == (ha < 0)) a = mid, ha = hm;
        else b = mid;
      }
      Vec x(1);
      x(0) = ha == 0 ? a : 0.5 * (a + b);
      const double t = (z - graph_point(patch, x)).dot(Rt * T(x));
      if (!best || std::abs(t) < std::abs(best->second)) best = std::make_pair(x, t);
    }
    prev_s = s;
    prev_h = hs;
  }
  return best;
}

// Surfaces: Newton on the two components of z - P(x) normal to T(x0), with a difference Jacobian.
inline std::optional<std::pair<Vec, double>> fiber_foot_surface(const GraphPatch& patch, const TubeField& T,
                                                                const Mat& Rt, const Vec& z, const Vec& x0) {
  const Vec t0 = Rt * T(x0);
  const Mat basis = orthonormalize(t0).complement().frame();
  auto res = [&](const Vec& x) {
    const Vec v = z - graph_point(patch, x);
    const Vec t = Rt * T(x);
    return Vec(basis.transpose() * (v - v.dot(t) * t));
  };
  Vec x = x0;
  const double h = 1e-7 * patch.radius;
  for (int it = 0; it < 40; ++it) {
    const Vec r = res(x);
    if (r.norm() <= 1e-15 * patch.radius) break;
    Mat J(2, 2);
    for (int c = 0; c < 2; ++c) {
      Vec xp = x, xm = x;
      xp(c) += h;
      xm(c) -= h;
      J.col(c) = (res(xp) - res(xm)) / (2 * h);
    }
    x -= J.fullPivLu().solve(r);
    if (!x.allFinite() || x.norm() > patch.radius) return std::nullopt;
  }
  if (res(x).norm() > 1e-12 * patch.radius) return std::nullopt;
  return std::make_pair(x, (z - graph_point(patch, x)).dot(Rt * T(x)));
}

}  // namespace detail

/// Samples points within radius_factor·σ of the graph over B_{ϱ/2} and finds the fiber of F through each.
/// With radius_factor ≤ 1 every point must lie on a fiber with |t| < ε.
inline InclusionReport inclusion_probe(const GraphPatch& patch, const TubeField& T, const TubeParams& params,
                                       long points = 10000, std::uint64_t seed = 42, double radius_factor = 1) {
  detail::require_codim1_patch(patch);
  const int m = patch.m, n = m + 1;
  const Mat Rt = patch.isometry.rotation.transpose();
  InclusionReport rep;
  rep.points = points;
  rep.radius = radius_factor * params.sigma;
  rep.in_contract = radius_factor <= 1;
  rep.epsilon = params.epsilon;
  const std::uint64_t start = detail::halton_start(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<char> ok(points, 0);
  std::vector<double> tabs(points, 0);
  parallel_for(points, [&](std::size_t i) {
    const std::uint64_t h = start + i;
    const Vec x0 = detail::ball_point(m, 0.5 * patch.radius, detail::halton(h, 0), detail::halton(h, 1));
    const Vec v = detail::unit_direction(n, detail::halton(h, 2), detail::halton(h, 3));
    const Vec z = detail::graph_point(patch, x0) + detail::halton(h, 4) * rep.radius * v;
    const auto foot = m == 1 ? detail::fiber_foot_curve(patch, T, Rt, z, x0(0), 64 * (rep.radius + params.epsilon))
                             : detail::fiber_foot_surface(patch, T, Rt, z, x0);
    if (foot && std::abs(foot->second) < params.epsilon && foot->first.norm() <= patch.radius) {
      ok[i] = 1;
      tabs[i] = std::abs(foot->second);
    }
  });
  for (long i = 0; i < points; ++i) {
    rep.reached += ok[i];
    rep.max_abs_t = std::max(rep.max_abs_t, tabs[i]);
  }
  rep.holds = !rep.in_contract || rep.reached == rep.points;
  return rep;
}

}  // namespace lipimm
