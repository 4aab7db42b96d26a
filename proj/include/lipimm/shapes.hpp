#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <functional>
#include <string>
#include <vector>

#include "lipimm/immersion.hpp"

namespace lipimm::shapes {

namespace detail {

inline std::vector<std::vector<int>> cycle_edges(int count) {
  std::vector<std::vector<int>> e(count);
  for (int i = 0; i < count; ++i) e[i] = {i, (i + 1) % count};
  return e;
}

/// Closed curve sampled at evenly spaced parameters t_i = period·i/count.
inline SampledImmersion periodic_curve(int n, int count, double period,
                                       std::function<Vec(double)> pos,
                                       std::function<Vec(double)> vel) {
  if (count < 8) fail(ErrorKind::invalid_input, "need at least 8 samples on a curve");
  Parametrization p;
  p.position = [pos](const Vec& t) { return pos(t(0)); };
  p.jacobian = [vel, n](const Vec& t) {
    Mat j(n, 1);
    j.col(0) = vel(t(0));
    return j;
  };
  Mat x(n, count);
  p.params.resize(count);
  for (int i = 0; i < count; ++i) {
    const double t = period * i / count;
    p.params[i] = Vec::Constant(1, t);
    x.col(i) = pos(t);
  }
  return SampledImmersion(1, std::move(x), cycle_edges(count), {}, std::move(p));
}

}  // namespace detail

inline SampledImmersion circle(double radius, int count, Vec centre = Vec::Zero(2)) {
  if (!(radius > 0)) fail(ErrorKind::invalid_input, "radius must be positive");
  if (centre.size() != 2) fail(ErrorKind::dimension_mismatch, "circle centre must be in R^2");
  return detail::periodic_curve(
      2, count, 2 * std::numbers::pi,
      [=](double t) { return Vec(centre + radius * Eigen::Vector2d(std::cos(t), std::sin(t))); },
      [=](double t) { return Vec(radius * Eigen::Vector2d(-std::sin(t), std::cos(t))); });
}

inline SampledImmersion ellipse(double a, double b, int count) {
  if (!(a > 0) || !(b > 0)) fail(ErrorKind::invalid_input, "semi-axes must be positive");
  return detail::periodic_curve(
      2, count, 2 * std::numbers::pi,
      [=](double t) { return Vec(Eigen::Vector2d(a * std::cos(t), b * std::sin(t))); },
      [=](double t) { return Vec(Eigen::Vector2d(-a * std::sin(t), b * std::cos(t))); });
}

/// Rectangle of the given outer size with quarter-circle corners, by arc length.
inline SampledImmersion rounded_rectangle(double width, double height, double corner, int count) {
  if (!(corner > 0) || 2 * corner > width || 2 * corner > height)
    fail(ErrorKind::invalid_input, "corner radius must fit inside the rectangle");
  const double sx = width - 2 * corner, sy = height - 2 * corner;
  const double arc = std::numbers::pi * corner / 2;
  const double perimeter = 2 * sx + 2 * sy + 4 * arc;
  // Pieces in order: bottom edge, corner, right edge, corner, top edge, corner, left edge, corner.
  struct Piece {
    double len;
    bool straight;
    Eigen::Vector2d start, dir, centre;
    double angle0;
  };
  const double hx = width / 2, hy = height / 2, c = corner;
  std::vector<Piece> pieces = {
      {sx, true, {-hx + c, -hy}, {1, 0}, {}, 0},
      {arc, false, {}, {}, {hx - c, -hy + c}, -std::numbers::pi / 2},
      {sy, true, {hx, -hy + c}, {0, 1}, {}, 0},
      {arc, false, {}, {}, {hx - c, hy - c}, 0},
      {sx, true, {hx - c, hy}, {-1, 0}, {}, 0},
      {arc, false, {}, {}, {-hx + c, hy - c}, std::numbers::pi / 2},
      {sy, true, {-hx, hy - c}, {0, -1}, {}, 0},
      {arc, false, {}, {}, {-hx + c, -hy + c}, std::numbers::pi},
  };
  auto locate = [pieces, perimeter](double s, bool derivative) {
    s = std::fmod(s, perimeter);
    if (s < 0) s += perimeter;
    for (const auto& p : pieces) {
      if (s <= p.len || &p == &pieces.back()) {
        if (p.straight) return Vec(derivative ? p.dir : Eigen::Vector2d(p.start + s * p.dir));
        const double rad = p.len / (std::numbers::pi / 2);
        const double a = p.angle0 + s / rad;
        if (derivative) return Vec(Eigen::Vector2d(-std::sin(a), std::cos(a)));
        return Vec(Eigen::Vector2d(p.centre + rad * Eigen::Vector2d(std::cos(a), std::sin(a))));
      }
      s -= p.len;
    }
    return Vec();
  };
  return detail::periodic_curve(
      2, count, perimeter, [=](double s) { return locate(s, false); },
      [=](double s) { return locate(s, true); });
}

/// Circle in R^3, rotated about the x-axis by `tilt`.
inline SampledImmersion circle3d(double radius, double tilt, int count) {
  if (!(radius > 0)) fail(ErrorKind::invalid_input, "radius must be positive");
  const double ct = std::cos(tilt), st = std::sin(tilt);
  return detail::periodic_curve(
      3, count, 2 * std::numbers::pi,
      [=](double t) {
        return Vec(Eigen::Vector3d(radius * std::cos(t), radius * std::sin(t) * ct, radius * std::sin(t) * st));
      },
      [=](double t) {
        return Vec(Eigen::Vector3d(-radius * std::sin(t), radius * std::cos(t) * ct, radius * std::cos(t) * st));
      });
}

/// (p,q) torus knot on the torus with radii (major, tube).
inline SampledImmersion torus_knot(int p, int q, double major, double tube, int count) {
  if (std::gcd(p, q) != 1) fail(ErrorKind::invalid_input, "p and q must be coprime");
  if (!(major > tube) || !(tube > 0)) fail(ErrorKind::invalid_input, "need major > tube > 0");
  return detail::periodic_curve(
      3, count, 2 * std::numbers::pi,
      [=](double t) {
        const double w = major + tube * std::cos(q * t);
        return Vec(Eigen::Vector3d(w * std::cos(p * t), w * std::sin(p * t), tube * std::sin(q * t)));
      },
      [=](double t) {
        const double w = major + tube * std::cos(q * t);
        const double dw = -tube * q * std::sin(q * t);
        return Vec(Eigen::Vector3d(dw * std::cos(p * t) - w * p * std::sin(p * t),
                                   dw * std::sin(p * t) + w * p * std::cos(p * t),
                                   tube * q * std::cos(q * t)));
      });
}

/// Lemniscate of Bernoulli: an immersed figure-eight whose two crossing
/// parameters map to the same point whenever count is a multiple of 4.
inline SampledImmersion figure_eight(double a, int count) {
  return detail::periodic_curve(
      2, count, 2 * std::numbers::pi,
      [=](double t) {
        const double d = 1 + std::sin(t) * std::sin(t);
        return Vec(Eigen::Vector2d(a * std::cos(t) / d, a * std::sin(t) * std::cos(t) / d));
      },
      [=](double t) {
        const double s = std::sin(t), c = std::cos(t), d = 1 + s * s;
        const double dd = 2 * s * c;
        return Vec(Eigen::Vector2d(a * (-s * d - c * dd) / (d * d),
                                   a * ((c * c - s * s) * d - s * c * dd) / (d * d)));
      });
}

/// Torus with major radius R and tube radius r on a nu × nv parameter grid.
inline SampledImmersion torus(double major, double tube, int nu, int nv) {
  if (!(major > tube) || !(tube > 0)) fail(ErrorKind::invalid_input, "need major > tube > 0");
  if (nu < 4 || nv < 4) fail(ErrorKind::invalid_input, "torus grid is too coarse");
  Parametrization p;
  p.position = [=](const Vec& t) {
    const double w = major + tube * std::cos(t(1));
    return Vec(Eigen::Vector3d(w * std::cos(t(0)), w * std::sin(t(0)), tube * std::sin(t(1))));
  };
  p.jacobian = [=](const Vec& t) {
    const double w = major + tube * std::cos(t(1));
    Mat j(3, 2);
    j << -w * std::sin(t(0)), -tube * std::sin(t(1)) * std::cos(t(0)),
        w * std::cos(t(0)), -tube * std::sin(t(1)) * std::sin(t(0)),
        0, tube * std::cos(t(1));
    return j;
  };
  const int count = nu * nv;
  Mat x(3, count);
  p.params.resize(count);
  auto at = [nu, nv](int i, int j) { return ((i + nu) % nu) + nu * ((j + nv) % nv); };
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < nu; ++i) {
      Vec t(2);
      t << 2 * std::numbers::pi * i / nu, 2 * std::numbers::pi * j / nv;
      p.params[at(i, j)] = t;
      x.col(at(i, j)) = p.position(t);
    }
  std::vector<std::vector<int>> tris;
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < nu; ++i) {
      tris.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      tris.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
    }
  return SampledImmersion(2, std::move(x), std::move(tris), {}, std::move(p));
}

/// Icosphere of the given radius after `levels` rounds of 4-way subdivision.
inline SampledImmersion sphere(double radius, int levels) {
  if (!(radius > 0) || levels < 0 || levels > 8) fail(ErrorKind::invalid_input, "bad sphere parameters");
  const double t = (1 + std::sqrt(5.0)) / 2;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                    {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                    {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  Mat x(3, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) x.col(i) = radius * v[i];
  std::vector<std::vector<int>> cells;
  for (const auto& tri : f) cells.push_back({tri[0], tri[1], tri[2]});
  return SampledImmersion(2, std::move(x), std::move(cells));
}

/// Same samples and complex, with the analytic parametrization dropped.
inline SampledImmersion without_evaluator(const SampledImmersion& f) {
  return SampledImmersion(f.m(), f.positions(), f.cells(), f.ids());
}

struct ShapeSpec {
  std::string name;
  std::map<std::string, double> params;
  std::vector<int> samples;  // one count for curves, two for the torus grid
};

inline double param_or(const ShapeSpec& s, const std::string& key, double fallback) {
  auto it = s.params.find(key);
  return it == s.params.end() ? fallback : it->second;
}

inline const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names = {"circle",   "ellipse", "rounded-rectangle", "circle3d",
                                                 "torus-knot", "sphere", "torus",          "figure-eight"};
  return names;
}

inline SampledImmersion make_shape(const ShapeSpec& s) {
  const int count = s.samples.empty() ? 4096 : s.samples[0];
  if (s.name == "circle") return circle(param_or(s, "radius", 1.0), count);
  if (s.name == "ellipse") return ellipse(param_or(s, "a", 1.5), param_or(s, "b", 1.0), count);
  if (s.name == "rounded-rectangle")
    return rounded_rectangle(param_or(s, "width", 3.0), param_or(s, "height", 2.0),
                             param_or(s, "corner", 0.5), count);
  if (s.name == "circle3d") return circle3d(param_or(s, "radius", 1.0), param_or(s, "tilt", 0.2), count);
  if (s.name == "torus-knot")
    return torus_knot(static_cast<int>(param_or(s, "p", 2)), static_cast<int>(param_or(s, "q", 3)),
                      param_or(s, "R", 3.0), param_or(s, "r", 1.5), count);
  if (s.name == "figure-eight") return figure_eight(param_or(s, "a", 1.0), count);
  if (s.name == "torus") {
    const int nu = count, nv = s.samples.size() > 1 ? s.samples[1] : count;
    return torus(param_or(s, "R", 2.0), param_or(s, "r", 0.5), nu, nv);
  }
  if (s.name == "sphere") {
    int levels = 0;
    while (10 * (1 << (2 * levels)) + 2 < count && levels < 8) ++levels;
    return sphere(param_or(s, "radius", 1.0), levels);
  }
  fail(ErrorKind::invalid_input, "unknown shape '" + s.name + "'");
}

}  // namespace lipimm::shapes
