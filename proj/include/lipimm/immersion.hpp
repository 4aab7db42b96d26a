#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iterator>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lipimm/grassmann.hpp"
#include "lipimm/parallel.hpp"

namespace lipimm {

/// δ_l = [3(1+λ)]^{-l} r, the radius ladder used by nets and charts.
inline double delta(int l, double r, double lambda) {
  if (l < 0) fail(ErrorKind::invalid_input, "ladder level must be non-negative");
  if (!(r > 0) || !(lambda >= 0)) fail(ErrorKind::invalid_input, "need r > 0 and lambda >= 0");
  return std::pow(3.0 * (1.0 + lambda), -l) * r;
}

struct EuclideanIsometry {
  Mat rotation;
  Vec translation;

  Vec apply(const Vec& x) const { return rotation * x + translation; }
  Vec inverse_apply(const Vec& y) const { return rotation.transpose() * (y - translation); }
};

inline EuclideanIsometry make_isometry(Mat rotation, Vec translation) {
  const auto n = rotation.rows();
  if (rotation.cols() != n || translation.size() != n)
    fail(ErrorKind::dimension_mismatch, "isometry parts have inconsistent sizes");
  if ((rotation.transpose() * rotation - Mat::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorKind::invalid_input, "rotation is not orthogonal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-12)
    fail(ErrorKind::invalid_input, "rotation does not preserve orientation");
  return {std::move(rotation), std::move(translation)};
}

/// An isometry whose first m columns span `plane` and that maps 0 to `origin`.
inline EuclideanIsometry adapted_isometry(const Subspace& plane, const Vec& origin) {
  const int n = plane.ambient_dim(), m = plane.dim();
  Mat rot(n, n);
  rot.leftCols(m) = plane.frame();
  rot.rightCols(n - m) = plane.complement().frame();
  if (rot.determinant() < 0) rot.col(n - 1) = -rot.col(n - 1);
  return make_isometry(std::move(rot), origin);
}

/// Analytic parametrization of the sampled manifold, used for exact resampling.
struct Parametrization {
  std::function<Vec(const Vec&)> position;
  std::function<Mat(const Vec&)> jacobian;  // n×m
  std::vector<Vec> params;                  // one parameter per sample
};

/// Samples of an immersion f: M^m → R^n together with a simplicial complex on
/// them (edges for curves, triangles for surfaces). Cheap to copy.
class SampledImmersion {
 public:
  SampledImmersion() = default;

  SampledImmersion(int m, Mat positions, std::vector<std::vector<int>> cells,
                   std::vector<std::int64_t> ids = {},
                   std::optional<Parametrization> param = std::nullopt) {
    auto d = std::make_shared<Data>();
    d->m = m;
    d->positions = std::move(positions);
    d->cells = std::move(cells);
    d->param = std::move(param);
    const int n = static_cast<int>(d->positions.rows());
    const int count = static_cast<int>(d->positions.cols());
    if (m < 1 || m > 2) fail(ErrorKind::invalid_input, "only curves and surfaces are supported");
    if (n <= m) fail(ErrorKind::dimension_mismatch, "ambient dimension must exceed m");
    if (count < m + 2) fail(ErrorKind::invalid_input, "too few samples");
    if (!d->positions.allFinite()) fail(ErrorKind::invalid_input, "non-finite sample position");

    if (ids.empty()) {
      ids.resize(count);
      std::iota(ids.begin(), ids.end(), 0);
    }
    if (static_cast<int>(ids.size()) != count) fail(ErrorKind::invalid_input, "one id per sample");
    d->ids = std::move(ids);
    for (int i = 0; i < count; ++i)
      if (!d->index.emplace(d->ids[i], i).second)
        fail(ErrorKind::invalid_input, "duplicate sample id " + std::to_string(d->ids[i]));

    d->adjacency.assign(count, {});
    d->incident.assign(count, {});
    for (std::size_t c = 0; c < d->cells.size(); ++c) {
      const auto& cell = d->cells[c];
      if (static_cast<int>(cell.size()) != m + 1)
        fail(ErrorKind::invalid_input, "cells must have m+1 vertices");
      for (int v : cell)
        if (v < 0 || v >= count) fail(ErrorKind::invalid_input, "cell vertex out of range");
      for (std::size_t a = 0; a < cell.size(); ++a) {
        d->incident[cell[a]].push_back(static_cast<int>(c));
        for (std::size_t b = 0; b < cell.size(); ++b)
          if (a != b) d->adjacency[cell[a]].push_back(cell[b]);
      }
    }
    for (auto& nb : d->adjacency) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      if (static_cast<int>(nb.size()) < m + 1)
        fail(ErrorKind::invariant_violation, "sample has too few neighbours for a closed manifold");
    }
    check_connected(*d);

    if (d->param) {
      if (static_cast<int>(d->param->params.size()) != count)
        fail(ErrorKind::invalid_input, "one parameter per sample");
      for (int i = 0; i < count; ++i)
        if ((d->param->position(d->param->params[i]) - d->positions.col(i)).norm() > 1e-9)
          fail(ErrorKind::invalid_input, "sample does not lie on its parametrization", d->ids[i]);
    }
    compute_tangents(*d);
    for (const auto& cell : d->cells) {
      if (m == 1) {
        d->volume += (d->positions.col(cell[1]) - d->positions.col(cell[0])).norm();
      } else {
        const Vec a = d->positions.col(cell[1]) - d->positions.col(cell[0]);
        const Vec b = d->positions.col(cell[2]) - d->positions.col(cell[0]);
        d->volume += 0.5 * std::sqrt(std::max(0.0, a.squaredNorm() * b.squaredNorm() -
                                                     a.dot(b) * a.dot(b)));
      }
      for (std::size_t a = 0; a < cell.size(); ++a)
        for (std::size_t b = a + 1; b < cell.size(); ++b)
          d->max_edge = std::max(
              d->max_edge, (d->positions.col(cell[a]) - d->positions.col(cell[b])).norm());
    }
    d_ = std::move(d);
  }

  int m() const { return d_->m; }
  int n() const { return static_cast<int>(d_->positions.rows()); }
  int codim() const { return n() - m(); }
  int size() const { return static_cast<int>(d_->positions.cols()); }
  const Mat& positions() const { return d_->positions; }
  Vec position(int i) const { return d_->positions.col(i); }
  const std::vector<int>& neighbors(int i) const { return d_->adjacency[i]; }
  const std::vector<std::vector<int>>& cells() const { return d_->cells; }
  const std::vector<int>& incident_cells(int i) const { return d_->incident[i]; }
  std::int64_t id(int i) const { return d_->ids[i]; }
  const std::vector<std::int64_t>& ids() const { return d_->ids; }
  int index_of(std::int64_t id) const {
    auto it = d_->index.find(id);
    if (it == d_->index.end()) fail(ErrorKind::invalid_input, "unknown sample id " + std::to_string(id));
    return it->second;
  }
  bool has_evaluator() const { return d_->param.has_value(); }
  const Parametrization& evaluator() const { return *d_->param; }
  /// Orthonormal n×m frame of the tangent space at sample i.
  const Mat& tangent(int i) const { return d_->tangents[i]; }
  double volume() const { return d_->volume; }
  double max_edge() const { return d_->max_edge; }

 private:
  struct Data {
    int m = 0;
    Mat positions;
    std::vector<std::vector<int>> cells;
    std::vector<std::vector<int>> adjacency;
    std::vector<std::vector<int>> incident;
    std::vector<std::int64_t> ids;
    std::unordered_map<std::int64_t, int> index;
    std::optional<Parametrization> param;
    std::vector<Mat> tangents;
    double volume = 0;
    double max_edge = 0;
  };

  static void check_connected(const Data& d) {
    const int count = static_cast<int>(d.adjacency.size());
    std::vector<char> seen(count, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : d.adjacency[v])
        if (!seen[w]) {
          seen[w] = 1;
          ++reached;
          stack.push_back(w);
        }
    }
    if (reached != count) fail(ErrorKind::invariant_violation, "sampled manifold is disconnected");
  }

  static void compute_tangents(Data& d) {
    const int count = static_cast<int>(d.positions.cols());
    d.tangents.resize(count);
    for (int i = 0; i < count; ++i) {
      if (d.param) {
        d.tangents[i] = orthonormalize(d.param->jacobian(d.param->params[i])).frame();
        continue;
      }
      const auto& nb = d.adjacency[i];
      if (d.m == 1 && nb.size() == 2) {
        // Central difference across the two curve neighbours, oriented by the edge list.
        int prev = nb[0], next = nb[1];
        for (int c : d.incident[i])
          if (d.cells[c][0] == i) next = d.cells[c][1];
          else prev = d.cells[c][0];
        Mat t = d.positions.col(next) - d.positions.col(prev);
        d.tangents[i] = orthonormalize(t).frame();
        continue;
      }
      Mat diffs(d.positions.rows(), nb.size());
      for (std::size_t j = 0; j < nb.size(); ++j) diffs.col(j) = d.positions.col(nb[j]) - d.positions.col(i);
      Eigen::JacobiSVD<Mat> svd(diffs, Eigen::ComputeThinU);
      d.tangents[i] = orthonormalize(svd.matrixU().leftCols(d.m)).frame();
    }
  }

  std::shared_ptr<const Data> d_;
};

namespace detail {

// Per-thread visit marks, reused across component searches.
struct Marks {
  std::vector<std::uint32_t> stamp;
  std::uint32_t gen = 0;
};

inline Marks& fresh_marks(std::size_t n) {
  thread_local Marks mk;
  if (mk.stamp.size() < n) {
    mk.stamp.assign(n, 0);
    mk.gen = 0;
  }
  if (++mk.gen == 0) {
    std::fill(mk.stamp.begin(), mk.stamp.end(), 0);
    mk.gen = 1;
  }
  return mk;
}

}  // namespace detail

/// Sample indices of the connected component containing q of the samples whose
/// projection onto `frame`, recentred at f(q), lies in the open ball of radius rho.
inline std::vector<int> component_indices(const SampledImmersion& f, int q, const Mat& frame, double rho) {
  const Mat& X = f.positions();
  const Vec origin = X.col(q);
  auto inside = [&](int p) { return (frame.transpose() * (X.col(p) - origin)).squaredNorm() < rho * rho; };
  auto& mk = detail::fresh_marks(f.size());
  std::vector<int> out{q};
  mk.stamp[q] = mk.gen;
  for (std::size_t head = 0; head < out.size(); ++head) {
    for (int w : f.neighbors(out[head])) {
      if (mk.stamp[w] == mk.gen) continue;
      mk.stamp[w] = mk.gen;
      if (inside(w)) out.push_back(w);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// U^E_{ρ,q} as sample ids.
inline std::vector<std::int64_t> q_component(const SampledImmersion& f, int q, const Subspace& E, double rho) {
  if (E.ambient_dim() != f.n() || E.dim() != f.m())
    fail(ErrorKind::dimension_mismatch, "plane must be an m-plane in R^n");
  if (!(rho > 0)) fail(ErrorKind::invalid_input, "radius must be positive");
  std::vector<std::int64_t> ids;
  for (int i : component_indices(f, q, E.frame(), rho)) ids.push_back(f.id(i));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Rule assigning an m-plane E(q) to every sample.
struct PlaneRule {
  enum class Kind { tangent, best_fit, explicit_map };
  Kind kind = Kind::tangent;
  std::function<Subspace(std::int64_t)> map;

  static PlaneRule tangent() { return {}; }
  static PlaneRule best_fit() { return {Kind::best_fit, {}}; }
  static PlaneRule explicit_planes(std::function<Subspace(std::int64_t)> fn) {
    return {Kind::explicit_map, std::move(fn)};
  }
  std::string name() const {
    switch (kind) {
      case Kind::tangent: return "tangent";
      case Kind::best_fit: return "best-fit";
      case Kind::explicit_map: return "explicit";
    }
    return "?";
  }
};

/// Principal m-plane of the samples reachable from q inside the Euclidean ball of radius `radius`.
inline Subspace best_fit_plane(const SampledImmersion& f, int q, double radius) {
  const Mat& X = f.positions();
  auto& mk = detail::fresh_marks(f.size());
  std::vector<int> pts{q};
  mk.stamp[q] = mk.gen;
  for (std::size_t head = 0; head < pts.size(); ++head)
    for (int w : f.neighbors(pts[head])) {
      if (mk.stamp[w] == mk.gen) continue;
      mk.stamp[w] = mk.gen;
      if ((X.col(w) - X.col(q)).norm() < radius) pts.push_back(w);
    }
  if (static_cast<int>(pts.size()) < f.m() + 2)
    fail(ErrorKind::insufficient_sampling, "too few samples to fit a plane", f.id(q));
  std::sort(pts.begin(), pts.end());
  Vec mean = Vec::Zero(f.n());
  for (int p : pts) mean += X.col(p);
  mean /= static_cast<double>(pts.size());
  Mat c(f.n(), pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j) c.col(j) = X.col(pts[j]) - mean;
  Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeThinU);
  Mat frame = svd.matrixU().leftCols(f.m());
  for (int j = 0; j < f.m(); ++j) {
    Eigen::Index at;
    frame.col(j).cwiseAbs().maxCoeff(&at);
    if (frame(at, j) < 0) frame.col(j) = -frame.col(j);
  }
  return orthonormalize(frame);
}

/// An immersion together with its radius r, slope bound λ and plane assignment.
class FramedImmersion {
 public:
  FramedImmersion(SampledImmersion f, double r, double lambda, PlaneRule rule = PlaneRule::tangent())
      : f_(std::move(f)), r_(r), lambda_(lambda), rule_(std::move(rule)) {
    if (!(r_ > 0) || !(lambda_ >= 0)) fail(ErrorKind::invalid_input, "need r > 0 and lambda >= 0");
    const int count = f_.size();
    planes_.resize(count);
    isos_.resize(count);
    const double fit_radius = lipimm::delta(1, r_, lambda_);
    parallel_for(count, [&](std::size_t i) {
      const int q = static_cast<int>(i);
      switch (rule_.kind) {
        case PlaneRule::Kind::tangent: planes_[q] = orthonormalize(f_.tangent(q)); break;
        case PlaneRule::Kind::best_fit: planes_[q] = best_fit_plane(f_, q, fit_radius); break;
        case PlaneRule::Kind::explicit_map: planes_[q] = rule_.map(f_.id(q)); break;
      }
      if (planes_[q].ambient_dim() != f_.n() || planes_[q].dim() != f_.m())
        fail(ErrorKind::dimension_mismatch, "plane rule returned a plane of the wrong shape", f_.id(q));
      isos_[q] = adapted_isometry(planes_[q], f_.position(q));
    });
  }

  const SampledImmersion& f() const { return f_; }
  double r() const { return r_; }
  double lambda() const { return lambda_; }
  const PlaneRule& rule() const { return rule_; }
  double delta(int l) const { return lipimm::delta(l, r_, lambda_); }
  const Subspace& plane(int q) const { return planes_[q]; }
  const EuclideanIsometry& isometry(int q) const { return isos_[q]; }

  /// U_{ρ,q} with respect to E(q), as sorted sample indices.
  std::vector<int> component(int q, double rho) const {
    return component_indices(f_, q, planes_[q].frame(), rho);
  }
  /// Coordinates of f(p) in the plane E(q) about f(q).
  Vec chart_coords(int q, int p) const {
    return planes_[q].frame().transpose() * (f_.position(p) - f_.position(q));
  }

 private:
  SampledImmersion f_;
  double r_, lambda_;
  PlaneRule rule_;
  std::vector<Subspace> planes_;
  std::vector<EuclideanIsometry> isos_;
};

/// Graph representation of f on U_{r,q}: after the isometry A, the patch is
/// {(x, u(x)) : x ∈ B_r} with u sampled on a regular grid.
struct GraphPatch {
  int m = 0, k = 0;
  double radius = 0;
  int cells = 0;  // grid cells per radius
  int base = -1;
  EuclideanIsometry isometry;
  std::vector<int> members;  // sample indices of the component
  std::vector<char> inside;  // grid node lies in the closed ball
  Mat values;                // k × nodes
  Mat jacobians;             // (k·m) × nodes, column-major k×m blocks
  double lambda_measured = 0;
  std::function<Vec(const Vec&)> exact;

  int side() const { return 2 * cells + 1; }
  int node_count() const { return m == 1 ? side() : side() * side(); }
  double step() const { return radius / cells; }
  Vec node(int idx) const {
    Vec x(m);
    x(0) = -radius + (idx % side()) * step();
    if (m == 2) x(1) = -radius + (idx / side()) * step();
    return x;
  }
  Mat jacobian(int idx) const { return Eigen::Map<const Mat>(jacobians.col(idx).data(), k, m); }

  /// u(x) for x in the closed ball, exact when the immersion is analytic.
  Vec value(const Vec& x) const { return exact ? exact(x) : interpolate(x); }

  /// Interpolated u(x) from the node values, ignoring any exact evaluator.
  Vec interpolate(const Vec& x) const {
    const double h = step();
    if (m == 1) {
      const double s = std::clamp((x(0) + radius) / h, 0.0, static_cast<double>(side() - 1));
      const int i = std::min(static_cast<int>(s), side() - 2);
      const double t = s - i;
      return (1 - t) * values.col(i) + t * values.col(i + 1);
    }
    const double sx = std::clamp((x(0) + radius) / h, 0.0, static_cast<double>(side() - 1));
    const double sy = std::clamp((x(1) + radius) / h, 0.0, static_cast<double>(side() - 1));
    const int i = std::min(static_cast<int>(sx), side() - 2);
    const int j = std::min(static_cast<int>(sy), side() - 2);
    const double tx = sx - i, ty = sy - j;
    const int c[4] = {i + side() * j, i + 1 + side() * j, i + side() * (j + 1), i + 1 + side() * (j + 1)};
    const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    Vec acc = Vec::Zero(k);
    double wsum = 0;
    for (int a = 0; a < 4; ++a)
      if (inside[c[a]]) {
        acc += w[a] * values.col(c[a]);
        wsum += w[a];
      }
    if (wsum == 0) fail(ErrorKind::invalid_input, "point outside the patch grid");
    return acc / wsum;
  }

  /// Point (x, u(x)) in R^n, in patch-local coordinates.
  Vec graph_point(const Vec& x) const {
    Vec y(m + k);
    y.head(m) = x;
    y.tail(k) = value(x);
    return y;
  }
};

struct PatchOptions {
  int cells = 0;  // 0 picks 64 per radius for curves, 32 for surfaces
  bool fold_check = true;
};

namespace detail {

// Newton solve for the parameter whose image projects to x in the patch plane.
using PositionFn = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;

inline bool newton_to_plane(const PositionFn& pos, const JacobianFn& jac, const Mat& frame,
                            const Vec& origin, const Vec& x, Vec& t) {
  for (int it = 0; it < 60; ++it) {
    const Vec res = frame.transpose() * (pos(t) - origin) - x;
    if (res.norm() <= 1e-15 * (1.0 + x.norm())) return true;
    const Mat J = frame.transpose() * jac(t);
    const Vec dt = J.fullPivLu().solve(res);
    if (!dt.allFinite()) return false;
    t -= dt;
    if (dt.norm() <= 1e-16 * (1.0 + t.norm())) break;
  }
  const Vec res = frame.transpose() * (pos(t) - origin) - x;
  return res.norm() <= 1e-12 * (1.0 + x.norm());
}

inline void check_folds(const SampledImmersion& f, const std::vector<int>& members,
                        const std::vector<Vec>& proj, double h, int q) {
  const int m = f.m();
  const double near = 0.5 * h, far = 4.0 * h;
  const Mat& X = f.positions();
  std::vector<int> order(members.size());
  std::iota(order.begin(), order.end(), 0);
  // Sweep along the first coordinate; only pairs within `near` can qualify.
  std::sort(order.begin(), order.end(), [&](int a, int b) { return proj[a](0) < proj[b](0); });
  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const int i = order[a], j = order[b];
      if (proj[j](0) - proj[i](0) >= near) break;
      if (m > 1 && (proj[j] - proj[i]).norm() >= near) continue;
      if ((X.col(members[i]) - X.col(members[j])).squaredNorm() > far * far)
        fail(ErrorKind::not_a_graph, "projection onto the plane folds", f.id(q));
    }
  }
}

}  // namespace detail

inline GraphPatch extract_graph_patch(const SampledImmersion& f, int q, const Subspace& E, double r,
                                      const PatchOptions& opt = {}) {
  if (E.ambient_dim() != f.n() || E.dim() != f.m())
    fail(ErrorKind::dimension_mismatch, "plane must be an m-plane in R^n");
  if (!(r > 0)) fail(ErrorKind::invalid_input, "radius must be positive");
  GraphPatch g;
  g.m = f.m();
  g.k = f.codim();
  g.radius = r;
  g.cells = opt.cells > 0 ? opt.cells : (g.m == 1 ? 64 : 32);
  g.base = q;
  g.isometry = adapted_isometry(E, f.position(q));
  g.members = component_indices(f, q, E.frame(), r);
  const Mat frame = g.isometry.rotation.leftCols(g.m);
  const Mat normal = g.isometry.rotation.rightCols(g.k);
  const Vec origin = f.position(q);
  const double h = g.step();

  std::vector<Vec> proj(g.members.size());
  for (std::size_t i = 0; i < g.members.size(); ++i)
    proj[i] = frame.transpose() * (f.position(g.members[i]) - origin);
  if (opt.fold_check) detail::check_folds(f, g.members, proj, h, q);

  const int nodes = g.node_count();
  g.inside.assign(nodes, 0);
  g.values = Mat::Zero(g.k, nodes);
  for (int idx = 0; idx < nodes; ++idx) g.inside[idx] = g.node(idx).norm() <= r * (1 + 1e-12);

  if (f.has_evaluator()) {
    const auto& P = f.evaluator();
    // Seed each node with the member whose projection is nearest, bucketed by grid cell.
    std::unordered_map<std::int64_t, std::vector<int>> buckets;
    auto key = [&](const Vec& x) {
      std::int64_t kx = static_cast<std::int64_t>(std::floor((x(0) + r) / h));
      std::int64_t ky = g.m == 2 ? static_cast<std::int64_t>(std::floor((x(1) + r) / h)) : 0;
      return kx * 1000003 + ky;
    };
    for (std::size_t i = 0; i < proj.size(); ++i) buckets[key(proj[i])].push_back(static_cast<int>(i));
    auto seed_for = [&](const Vec& x) {
      int best = -1;
      double bd = 1e300;
      for (int ring = 0; ring <= 2 * g.cells + 2 && best < 0; ++ring) {
        const int ry = g.m == 2 ? ring : 0;
        for (int dx = -ring; dx <= ring; ++dx)
          for (int dy = -ry; dy <= ry; ++dy) {
            Vec c = x;
            c(0) += dx * h;
            if (g.m == 2) c(1) += dy * h;
            auto it = buckets.find(key(c));
            if (it == buckets.end()) continue;
            for (int i : it->second) {
              const double d = (proj[i] - x).norm();
              if (d < bd) bd = d, best = i;
            }
          }
      }
      return best;
    };
    std::vector<Vec> node_params(nodes);
    for (int idx = 0; idx < nodes; ++idx) {
      if (!g.inside[idx]) continue;
      const Vec x = g.node(idx);
      const int s = seed_for(x);
      Vec t = P.params[g.members[s]];
      if (!detail::newton_to_plane(P.position, P.jacobian, frame, origin, x, t))
        fail(ErrorKind::not_a_graph, "no preimage of a grid node on the patch", f.id(q));
      g.values.col(idx) = normal.transpose() * (P.position(t) - origin);
      node_params[idx] = t;
    }
    auto shared = std::make_shared<std::vector<Vec>>(std::move(node_params));
    const int side = g.side(), cells = g.cells, m = g.m;
    const auto inside = std::make_shared<std::vector<char>>(g.inside);
    g.exact = [pos = P.position, jac = P.jacobian, frame, normal, origin, shared, inside, side,
               cells, m, r, h](const Vec& x) {
      // Start from the nearest grid node inside the ball.
      int i = std::clamp(static_cast<int>(std::lround((x(0) + r) / h)), 0, side - 1);
      int j = m == 2 ? std::clamp(static_cast<int>(std::lround((x(1) + r) / h)), 0, side - 1) : 0;
      int idx = i + side * j;
      if (!(*inside)[idx]) idx = m == 1 ? cells : cells + side * cells;
      Vec t = (*shared)[idx];
      if (!detail::newton_to_plane(pos, jac, frame, origin, x, t))
        fail(ErrorKind::not_a_graph, "graph evaluation failed to converge");
      return Vec(normal.transpose() * (pos(t) - origin));
    };
  } else {
    if (f.max_edge() > r / 2)
      fail(ErrorKind::insufficient_sampling, "sample spacing is too coarse for the patch radius", f.id(q));
    std::vector<char> covered(nodes, 0);
    std::vector<char> in_members(f.size(), 0);
    for (int p : g.members) in_members[p] = 1;
    if (g.m == 1) {
      // Members plus their neighbours, ordered along the plane.
      std::vector<int> pts = g.members;
      for (int p : g.members)
        for (int w : f.neighbors(p))
          if (!in_members[w]) pts.push_back(w);
      std::sort(pts.begin(), pts.end());
      pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
      std::vector<std::pair<double, Vec>> xu;
      for (int p : pts) {
        const Vec d = f.position(p) - origin;
        xu.emplace_back((frame.transpose() * d)(0), normal.transpose() * d);
      }
      std::sort(xu.begin(), xu.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (int idx = 0; idx < nodes; ++idx) {
        if (!g.inside[idx]) continue;
        const double x = g.node(idx)(0);
        auto it = std::lower_bound(xu.begin(), xu.end(), x,
                                   [](const auto& a, double v) { return a.first < v; });
        if (it == xu.begin() || it == xu.end()) continue;
        const auto& hi = *it;
        const auto& lo = *(it - 1);
        const double t = (x - lo.first) / (hi.first - lo.first);
        g.values.col(idx) = (1 - t) * lo.second + t * hi.second;
        covered[idx] = 1;
      }
    } else {
      std::vector<int> tris;
      // One ring past the members: a triangle can cut the rim with no vertex inside.
      for (int p : g.members)
        for (int nb : f.neighbors(p))
          for (int c : f.incident_cells(nb)) tris.push_back(c);
      std::sort(tris.begin(), tris.end());
      tris.erase(std::unique(tris.begin(), tris.end()), tris.end());
      for (int c : tris) {
        const auto& cell = f.cells()[c];
        Eigen::Vector2d v[3];
        Vec u[3];
        for (int a = 0; a < 3; ++a) {
          const Vec d = f.position(cell[a]) - origin;
          v[a] = frame.transpose() * d;
          u[a] = normal.transpose() * d;
        }
        const double det = (v[1] - v[0]).x() * (v[2] - v[0]).y() - (v[2] - v[0]).x() * (v[1] - v[0]).y();
        if (std::abs(det) < 1e-300) continue;
        const double lo_x = std::min({v[0].x(), v[1].x(), v[2].x()}), hi_x = std::max({v[0].x(), v[1].x(), v[2].x()});
        const double lo_y = std::min({v[0].y(), v[1].y(), v[2].y()}), hi_y = std::max({v[0].y(), v[1].y(), v[2].y()});
        const int i0 = std::max(0, static_cast<int>(std::ceil((lo_x + r) / h)));
        const int i1 = std::min(g.side() - 1, static_cast<int>(std::floor((hi_x + r) / h)));
        const int j0 = std::max(0, static_cast<int>(std::ceil((lo_y + r) / h)));
        const int j1 = std::min(g.side() - 1, static_cast<int>(std::floor((hi_y + r) / h)));
        for (int j = j0; j <= j1; ++j)
          for (int i = i0; i <= i1; ++i) {
            const int idx = i + g.side() * j;
            if (!g.inside[idx] || covered[idx]) continue;
            const Eigen::Vector2d x = g.node(idx);
            const Eigen::Vector2d e1 = v[1] - v[0], e2 = v[2] - v[0], d = x - v[0];
            const double b1 = (d.x() * e2.y() - e2.x() * d.y()) / det;
            const double b2 = (e1.x() * d.y() - d.x() * e1.y()) / det;
            const double b0 = 1 - b1 - b2;
            if (b0 < -1e-12 || b1 < -1e-12 || b2 < -1e-12) continue;
            g.values.col(idx) = b0 * u[0] + b1 * u[1] + b2 * u[2];
            covered[idx] = 1;
          }
      }
    }
    for (int idx = 0; idx < nodes; ++idx)
      if (g.inside[idx] && !covered[idx])
        fail(ErrorKind::insufficient_sampling, "patch grid is not covered by the samples", f.id(q));
  }

  // Central differences, second-order one-sided stencils at the rim.
  g.jacobians = Mat::Zero(g.k * g.m, nodes);
  const int side = g.side();
  auto ok = [&](int i, int j) {
    return i >= 0 && j >= 0 && i < side && j < side && g.inside[i + side * j];
  };
  for (int idx = 0; idx < nodes; ++idx) {
    if (!g.inside[idx]) continue;
    const int i = idx % side, j = g.m == 2 ? idx / side : 0;
    Mat J(g.k, g.m);
    for (int axis = 0; axis < g.m; ++axis) {
      const int di = axis == 0 ? 1 : 0, dj = axis == 1 ? 1 : 0;
      auto val = [&](int s) { return g.values.col((i + s * di) + side * (j + s * dj)); };
      auto has = [&](int s) { return ok(i + s * di, j + s * dj); };
      if (has(-1) && has(1)) J.col(axis) = (val(1) - val(-1)) / (2 * h);
      else if (has(1) && has(2)) J.col(axis) = (-3 * val(0) + 4 * val(1) - val(2)) / (2 * h);
      else if (has(-1) && has(-2)) J.col(axis) = (3 * val(0) - 4 * val(-1) + val(-2)) / (2 * h);
      else if (has(1)) J.col(axis) = (val(1) - val(0)) / h;
      else if (has(-1)) J.col(axis) = (val(0) - val(-1)) / h;
      else J.col(axis).setZero();
    }
    g.jacobians.col(idx) = Eigen::Map<const Vec>(J.data(), g.k * g.m);
    g.lambda_measured = std::max(g.lambda_measured, J.norm());
  }
  const int centre = g.m == 1 ? g.cells : g.cells + side * g.cells;
  if (g.values.col(centre).norm() > 1e-9)
    fail(ErrorKind::invariant_violation, "graph does not pass through the origin", f.id(q));
  return g;
}

struct RLambdaReport {
  bool pass = false;
  double worst_lambda = 0;
  int worst_sample = -1;
  std::vector<double> lambda_per_sample;
  std::vector<GraphPatch> patches;  // filled only on request
};

struct CheckOptions {
  PatchOptions patch;
  bool keep_patches = false;
};

namespace detail {
template <class Fn>
auto tag_sample(const SampledImmersion& f, int q, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.sample()) throw;
    throw Error(e.kind(), std::string(e.what()) + " (sample " + std::to_string(f.id(q)) + ")", f.id(q));
  }
}
}  // namespace detail

inline RLambdaReport check_r_lambda(const FramedImmersion& fi, const CheckOptions& opt = {}) {
  const auto& f = fi.f();
  RLambdaReport rep;
  rep.lambda_per_sample.assign(f.size(), 0);
  if (opt.keep_patches) rep.patches.resize(f.size());
  parallel_for(f.size(), [&](std::size_t i) {
    const int q = static_cast<int>(i);
    detail::tag_sample(f, q, [&] {
      GraphPatch g = extract_graph_patch(f, q, fi.plane(q), fi.r(), opt.patch);
      rep.lambda_per_sample[q] = g.lambda_measured;
      if (opt.keep_patches) rep.patches[q] = std::move(g);
      return 0;
    });
  });
  for (int q = 0; q < f.size(); ++q)
    if (rep.worst_sample < 0 || rep.lambda_per_sample[q] > rep.worst_lambda) {
      rep.worst_lambda = rep.lambda_per_sample[q];
      rep.worst_sample = q;
    }
  rep.pass = rep.worst_lambda <= fi.lambda();
  return rep;
}

struct FunctionCheckReport {
  bool pass = false;
  double worst_lambda = 0;
  int worst_sample = -1;
  bool injective = true;
};

/// Sample-level check for immersions known only through their samples:
/// difference quotients of u over member pairs and injectivity on each patch.
inline FunctionCheckReport check_r_lambda_function(const FramedImmersion& fi) {
  const auto& f = fi.f();
  const int m = f.m();
  std::vector<double> worst(f.size(), 0);
  parallel_for(f.size(), [&](std::size_t i) {
    const int q = static_cast<int>(i);
    const auto members = fi.component(q, fi.r());
    const Mat frame = fi.isometry(q).rotation.leftCols(m);
    const Mat normal = fi.isometry(q).rotation.rightCols(f.codim());
    std::vector<std::pair<Vec, Vec>> xu;
    for (int p : members) {
      const Vec d = f.position(p) - f.position(q);
      xu.emplace_back(frame.transpose() * d, normal.transpose() * d);
    }
    std::vector<int> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return xu[a].first(0) < xu[b].first(0); });
    // Injectivity: no two distinct members within 1e-9 in R^n.
    for (std::size_t a = 0; a < order.size(); ++a)
      for (std::size_t b = a + 1; b < order.size(); ++b) {
        if (xu[order[b]].first(0) - xu[order[a]].first(0) > 1e-9) break;
        if ((f.position(members[order[a]]) - f.position(members[order[b]])).norm() <= 1e-9)
          fail(ErrorKind::injectivity_violation, "two samples of one patch coincide", f.id(q));
      }
    double w = 0;
    auto quotient = [&](int a, int b) {
      const double dx = (xu[a].first - xu[b].first).norm();
      const double du = (xu[a].second - xu[b].second).norm();
      if (dx == 0) return du == 0 ? 0.0 : std::numeric_limits<double>::infinity();
      return du / dx;
    };
    if (m == 1) {
      // For points sorted along a line, the largest quotient is between neighbours.
      for (std::size_t a = 0; a + 1 < order.size(); ++a) w = std::max(w, quotient(order[a], order[a + 1]));
    } else {
      for (std::size_t a = 0; a < order.size(); ++a)
        for (std::size_t b = a + 1; b < order.size(); ++b) w = std::max(w, quotient(order[a], order[b]));
    }
    worst[q] = w;
  });
  FunctionCheckReport rep;
  for (int q = 0; q < f.size(); ++q)
    if (rep.worst_sample < 0 || worst[q] > rep.worst_lambda) {
      rep.worst_lambda = worst[q];
      rep.worst_sample = q;
    }
  rep.pass = rep.worst_lambda <= fi.lambda();
  return rep;
}

/// Graph systems: one patch per base point, all on the same grid.
struct GraphSystem {
  std::vector<GraphPatch> patches;
};

inline GraphSystem graph_system(const FramedImmersion& fi, const std::vector<int>& bases, int cells) {
  GraphSystem gs;
  gs.patches.resize(bases.size());
  PatchOptions opt;
  opt.cells = cells;
  parallel_for(bases.size(), [&](std::size_t j) {
    gs.patches[j] = extract_graph_patch(fi.f(), bases[j], fi.plane(bases[j]), fi.r(), opt);
  });
  return gs;
}

/// Σ_j ( ‖R_j - R̃_j‖_op + |T_j - T̃_j| + max_grid |u_j - ũ_j| ).
inline double graph_system_distance(const GraphSystem& a, const GraphSystem& b) {
  if (a.patches.size() != b.patches.size())
    fail(ErrorKind::dimension_mismatch, "graph systems have different sizes");
  double total = 0;
  for (std::size_t j = 0; j < a.patches.size(); ++j) {
    const auto& p = a.patches[j];
    const auto& q = b.patches[j];
    if (p.m != q.m || p.k != q.k || p.cells != q.cells || std::abs(p.radius - q.radius) > 1e-15)
      fail(ErrorKind::dimension_mismatch, "patches are on different grids");
    Eigen::JacobiSVD<Mat> svd(p.isometry.rotation - q.isometry.rotation);
    double sup = 0;
    for (int idx = 0; idx < p.node_count(); ++idx)
      if (p.inside[idx]) sup = std::max(sup, (p.values.col(idx) - q.values.col(idx)).norm());
    total += svd.singularValues()(0) + (p.isometry.translation - q.isometry.translation).norm() + sup;
  }
  return total;
}

struct PatchIntersectionReport {
  double max_distance_ratio = 0;  // max |f(q) - f(p')| / ((1+λ)ρ) over p' ∈ U_{ρ,q}
  bool distance_bound_holds = false;
  bool overlap = false;            // U_{δ,q} ∩ U_{δ,p} ≠ ∅ with δ = ρ/(3(1+λ))
  bool inclusion_holds = true;     // U_{δ,p} ⊂ U_{ρ,q} when they overlap
  std::size_t missing = 0;
};

inline PatchIntersectionReport patch_intersection_check(const FramedImmersion& fi, int p, int q, double rho) {
  if (!(rho > 0) || rho > fi.r()) fail(ErrorKind::invalid_input, "need 0 < rho <= r");
  const auto& f = fi.f();
  PatchIntersectionReport rep;
  const auto big = fi.component(q, rho);
  for (int s : big)
    rep.max_distance_ratio = std::max(
        rep.max_distance_ratio, (f.position(s) - f.position(q)).norm() / ((1 + fi.lambda()) * rho));
  rep.distance_bound_holds = rep.max_distance_ratio < 1.0;
  const double small = rho / (3 * (1 + fi.lambda()));
  const auto uq = fi.component(q, small);
  const auto up = fi.component(p, small);
  std::vector<int> common;
  std::set_intersection(uq.begin(), uq.end(), up.begin(), up.end(), std::back_inserter(common));
  rep.overlap = !common.empty();
  if (rep.overlap) {
    for (int s : up)
      if (!std::binary_search(big.begin(), big.end(), s)) ++rep.missing;
    rep.inclusion_holds = rep.missing == 0;
  }
  return rep;
}

}  // namespace lipimm
