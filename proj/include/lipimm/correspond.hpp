#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lipimm/grassmann.hpp"
#include "lipimm/immersion.hpp"
#include "lipimm/nets.hpp"
#include "lipimm/normals.hpp"
#include "lipimm/parallel.hpp"
#include "lipimm/spatial.hpp"
#include "lipimm/tubular.hpp"

namespace lipimm {

// ---------------------------------------------------------------------------
// Closeness of two immersions

/// strict: graph-system distance below [3(1+λ)(1+r)]^{-1}σ plus normal-image closeness.
/// empirical: normal-image closeness only; the graph distance is reported, and every fibre
/// is then required to land in the matched δ₂-chart, which is what the strict bound buys.
enum class Closeness { strict, empirical };

inline const char* closeness_name(Closeness c) { return c == Closeness::strict ? "strict" : "empirical"; }

inline Closeness parse_closeness(const std::string& s) {
  if (s == "strict") return Closeness::strict;
  if (s == "empirical") return Closeness::empirical;
  fail(ErrorKind::invalid_input, "closeness policy must be strict or empirical, got " + s);
}

struct ClosenessReport {
  Closeness policy = Closeness::strict;
  bool r_lambda_checked = false;
  bool source_r_lambda = true;
  bool target_r_lambda = true;
  double source_worst_lambda = 0;
  double target_worst_lambda = 0;
  bool graph_distance_computed = false;
  bool graph_distance_partial = false;  // the strict sum stopped once past the threshold
  double graph_distance = 0;
  double graph_threshold = 0;
  double normal_distance = 0;
  double normal_threshold = 0;
  bool met = false;
  std::string reason;
};

struct CorrespondOptions {
  Closeness closeness = Closeness::strict;
  bool verify_r_lambda = true;
  bool graph_distance = false;  // also compute the full graph distance under the empirical policy
  int graph_cells = 16;
  int patch_cells = 32;
  bool chart_consistency = true;
  int max_iterations = 50;  // fixed-point cap in higher codimension
};

namespace detail {

inline TubeParams correspondence_tube(int m, int codim, double lambda, double r) {
  if (codim == 1) return pipeline_tube_params(m, lambda, r);
  const auto c = constants(m, lambda, r);
  return tube_params(delta(3, r, lambda), lambda, c.L_highercodim, higher_codim_gamma(lambda));
}

inline double patch_deviation(const GraphPatch& p, const GraphPatch& q) {
  Eigen::JacobiSVD<Mat> svd(p.isometry.rotation - q.isometry.rotation);
  double sup = 0;
  for (int idx = 0; idx < p.node_count(); ++idx)
    if (p.inside[idx]) sup = std::max(sup, (p.values.col(idx) - q.values.col(idx)).norm());
  return svd.singularValues()(0) + (p.isometry.translation - q.isometry.translation).norm() + sup;
}

inline void require_compatible(const FramedImmersion& a, const FramedImmersion& b) {
  if (a.f().n() != b.f().n() || a.f().m() != b.f().m())
    fail(ErrorKind::dimension_mismatch, "immersions have different dimensions");
  if (a.r() != b.r() || a.lambda() != b.lambda()) fail(ErrorKind::invalid_input, "immersions carry different (r, lambda)");
}

}  // namespace detail

/// Graph-system distance over the net of f1 and the matched samples of f2, with patches of
/// radius r. With `stop_above` finite the sum stops once it exceeds that value.
inline double net_graph_distance(const FramedImmersion& f1, const DeltaNet& net, const FramedImmersion& f2,
                                 const std::vector<int>& matched, int cells,
                                 double stop_above = std::numeric_limits<double>::infinity(), bool* partial = nullptr) {
  PatchOptions opt;
  opt.cells = cells;
  opt.fold_check = false;  // both immersions already passed the graph check at radius r
  double total = 0;
  if (partial) *partial = false;
  constexpr int kBlock = 64;
  std::vector<double> dev;
  for (int start = 0; start < net.size(); start += kBlock) {
    const int count = std::min(kBlock, net.size() - start);
    dev.assign(count, 0);
    parallel_for(count, [&](std::size_t i) {
      const int j = start + static_cast<int>(i);
      const auto a = extract_graph_patch(f1.f(), net.point(j), f1.plane(net.point(j)), f1.r(), opt);
      const auto b = extract_graph_patch(f2.f(), matched[j], f2.plane(matched[j]), f2.r(), opt);
      dev[i] = detail::patch_deviation(a, b);
    });
    for (double d : dev) total += d;
    if (total >= stop_above && start + count < net.size()) {
      if (partial) *partial = true;
      break;
    }
  }
  return total;
}

/// Checks the hypotheses of the correspondence construction without projecting anything.
inline ClosenessReport correspondence_preconditions(const FramedImmersion& f1, const DeltaNet& net,
                                                    const FramedImmersion& f2, const CorrespondOptions& opt = {}) {
  detail::require_compatible(f1, f2);
  const int m = f1.f().m(), codim = f1.f().codim();
  ClosenessReport rep;
  rep.policy = opt.closeness;
  std::vector<std::string> why;
  if (opt.verify_r_lambda) {
    rep.r_lambda_checked = true;
    const auto a = check_r_lambda(f1), b = check_r_lambda(f2);
    rep.source_r_lambda = a.pass;
    rep.target_r_lambda = b.pass;
    rep.source_worst_lambda = a.worst_lambda;
    rep.target_worst_lambda = b.worst_lambda;
    if (!a.pass) why.push_back("source fails the (r, lambda) check");
    if (!b.pass) why.push_back("target fails the (r, lambda) check");
  }
  const auto matched = match_net_points(net, f1.f(), f2.f());

  std::vector<double> nd(net.size());
  if (codim == 1) {
    rep.normal_threshold = std::numbers::pi / 4 - 0.5 * std::atan(f1.lambda());
    parallel_for(net.size(), [&](std::size_t j) {
      nd[j] = compare_normal_images(f1, net, f2, static_cast<int>(j), matched[j]).hausdorff;
    });
  } else {
    rep.normal_threshold = kNormalSupportRadius;
    parallel_for(net.size(), [&](std::size_t j) {
      nd[j] = geodesic_distance(normal_space(f1.f(), net.point(static_cast<int>(j))), normal_space(f2.f(), matched[j]));
    });
  }
  rep.normal_distance = *std::max_element(nd.begin(), nd.end());
  if (rep.normal_distance >= rep.normal_threshold) why.push_back("normal images are too far apart");

  const auto tube = detail::correspondence_tube(m, codim, f1.lambda(), f1.r());
  rep.graph_threshold = tube.sigma / (3 * (1 + f1.lambda()) * (1 + f1.r()));
  if (opt.closeness == Closeness::strict || opt.graph_distance) {
    rep.graph_distance_computed = true;
    const double stop = opt.closeness == Closeness::strict ? rep.graph_threshold : std::numeric_limits<double>::infinity();
    rep.graph_distance = net_graph_distance(f1, net, f2, matched, opt.graph_cells, stop, &rep.graph_distance_partial);
    if (opt.closeness == Closeness::strict && rep.graph_distance >= rep.graph_threshold)
      why.push_back("graph-system distance is above the closeness threshold");
  }
  rep.met = why.empty();
  for (std::size_t i = 0; i < why.size(); ++i) rep.reason += (i ? "; " : "") + why[i];
  return rep;
}

// ---------------------------------------------------------------------------
// Correspondence

struct Correspondence {
  SampledImmersion source, target;
  Mat phi;                    // n × source samples: f2(φ(p))
  std::vector<int> nearest;   // target sample nearest to each φ(p)
  std::vector<int> chart;     // net index used for each source sample
  std::vector<int> matched;   // per net point, the matched target sample
  ClosenessReport closeness;
  double max_displacement = 0;
  double max_line_residual = 0;
  double max_hit_radius = 0;  // |x| of the hit in the matched chart
  double hit_radius_bound = 0;  // δ₂
  double chart_disagreement = 0;
  long charts_compared = 0;
  int max_iterations = 0;         // higher codimension only
  double worst_contraction = 0;   // higher codimension only
};

struct PlaneHit {
  Vec point;
  Vec x;
  int iterations = 0;
  double contraction = 0;
};

/// Intersection of the affine plane anchor + span(N) with the graph of a patch, by a chord
/// iteration in patch coordinates. The observed step ratios are reported as the contraction.
inline std::optional<PlaneHit> fiber_plane_intersection(const GraphPatch& patch, const Subspace& N, const Vec& anchor,
                                                        int max_iterations = 50) {
  const int m = patch.m, n = patch.m + patch.k;
  if (N.ambient_dim() != n || N.dim() != patch.k || anchor.size() != n)
    fail(ErrorKind::dimension_mismatch, "fibre and patch dimensions differ");
  const Mat C = patch.isometry.rotation.transpose() * N.complement().frame();  // n × m, patch coordinates
  const Vec a = patch.isometry.inverse_apply(anchor);
  const double R = patch.radius;
  auto F = [&](const Vec& x) { return Vec(C.transpose() * (detail::graph_point(patch, x) - a)); };
  Vec x = a.head(m);
  if (x.norm() > R) x *= R / x.norm();
  const double h = 1e-6 * R;
  Mat J(m, m);
  for (int d = 0; d < m; ++d) {
    Vec e = Vec::Zero(m);
    e(d) = h;
    Vec lo = x - e, hi = x + e;
    J.col(d) = (F(hi) - F(lo)) / (2 * h);
  }
  const auto lu = J.fullPivLu();
  if (!lu.isInvertible()) fail(ErrorKind::non_transversal, "the fibre is tangent to the graph");
  PlaneHit hit;
  double prev = 0;
  for (int it = 1; it <= max_iterations; ++it) {
    const Vec dx = lu.solve(F(x));
    x -= dx;
    const double step = dx.norm();
    if (prev > 1e-13 * R) hit.contraction = std::max(hit.contraction, step / prev);
    prev = step;
    hit.iterations = it;
    if (x.norm() > R * (1 + 1e-9)) return std::nullopt;
    if (step <= 1e-15 * R) break;
    if (it == max_iterations) fail(ErrorKind::non_convergence, "fibre iteration did not converge");
  }
  if (hit.contraction >= 1) fail(ErrorKind::non_convergence, "fibre iteration is not contracting");
  hit.x = x;
  hit.point = patch.isometry.apply(detail::graph_point(patch, x));
  return hit;
}

namespace detail {

struct Hit {
  Vec point;
  double radius = 0;
  int iterations = 0;
  double contraction = 0;
};

// Shared projection loop. `project(p, patch)` returns the hit of p's fibre on the patch;
// `residual(p, y)` is the distance of y from p's fibre.
template <class Project, class Residual>
Correspondence project_samples(const FramedImmersion& f1, const DeltaNet& net, const FramedImmersion& f2,
                               const std::vector<int>& owner, const std::vector<std::vector<int>>& cover,
                               ClosenessReport closeness, const CorrespondOptions& opt, Project&& project,
                               Residual&& residual) {
  const auto& src = f1.f();
  const auto& tgt = f2.f();
  Correspondence c;
  c.source = src;
  c.target = tgt;
  c.closeness = std::move(closeness);
  c.matched = match_net_points(net, src, tgt);
  c.chart = owner;
  c.hit_radius_bound = f1.delta(2);
  const int count = src.size();
  c.phi.resize(src.n(), count);
  c.nearest.assign(count, -1);

  std::vector<char> used(net.size(), 0);
  for (int p = 0; p < count; ++p) {
    used[owner[p]] = 1;
    if (opt.chart_consistency && cover[p].size() > 1) used[cover[p][1]] = 1;
  }
  PatchOptions popt;
  popt.cells = opt.patch_cells;
  popt.fold_check = false;
  std::vector<GraphPatch> patches(net.size());
  const double d1 = f1.delta(1);
  parallel_for(net.size(), [&](std::size_t j) {
    if (used[j]) patches[j] = extract_graph_patch(tgt, c.matched[j], f2.plane(c.matched[j]), d1, popt);
  });

  std::vector<double> radius(count, 0), line(count, 0), disagree(count, 0), contraction(count, 0);
  std::vector<int> iters(count, 0);
  std::vector<char> compared(count, 0);
  const bool strict = c.closeness.policy == Closeness::strict;
  auto miss = [&](int p, const std::string& what) {
    fail(strict ? ErrorKind::invariant_violation : ErrorKind::precondition_unmet,
         what + "; closeness insufficient", src.id(p));
  };
  parallel_for(count, [&](std::size_t pp) {
    const int p = static_cast<int>(pp);
    const auto hit = project(p, patches[owner[p]]);
    if (!hit) miss(p, "the fibre misses the matched chart");
    if (hit->radius >= c.hit_radius_bound) miss(p, "the fibre lands outside the matched delta_2-chart");
    c.phi.col(p) = hit->point;
    radius[p] = hit->radius;
    iters[p] = hit->iterations;
    contraction[p] = hit->contraction;
    line[p] = residual(p, hit->point);
    if (opt.chart_consistency && cover[p].size() > 1) {
      const auto other = project(p, patches[cover[p][1]]);
      if (!other) miss(p, "the fibre misses a second covering chart");
      disagree[p] = (other->point - hit->point).norm();
      compared[p] = 1;
    }
  });

  for (int p = 0; p < count; ++p) {
    c.max_hit_radius = std::max(c.max_hit_radius, radius[p]);
    c.max_line_residual = std::max(c.max_line_residual, line[p]);
    c.chart_disagreement = std::max(c.chart_disagreement, disagree[p]);
    c.charts_compared += compared[p];
    c.max_iterations = std::max(c.max_iterations, iters[p]);
    c.worst_contraction = std::max(c.worst_contraction, contraction[p]);
    c.max_displacement = std::max(c.max_displacement, (c.phi.col(p) - src.position(p)).norm());
  }
  if (c.max_line_residual > 1e-9)
    fail(ErrorKind::invariant_violation, "a target point is off its fibre by " + std::to_string(c.max_line_residual));
  if (c.chart_disagreement > 1e-9)
    fail(ErrorKind::well_definedness_violation,
         "two charts give target points " + std::to_string(c.chart_disagreement) + " apart");

  if (tgt.n() <= 3) {
    PointIndex index(tgt.positions());
    for (int p = 0; p < count; ++p) c.nearest[p] = index.nearest(c.phi.col(p));
  } else {
    for (int p = 0; p < count; ++p) {
      Eigen::Index at;
      (tgt.positions().colwise() - c.phi.col(p)).colwise().squaredNorm().minCoeff(&at);
      c.nearest[p] = static_cast<int>(at);
    }
  }
  return c;
}

inline void require_met(const ClosenessReport& rep) {
  if (!rep.met) fail(ErrorKind::precondition_unmet, "correspondence preconditions unmet: " + rep.reason);
}

}  // namespace detail

/// φ(p) = the point where the line f1(p) + ω(p) meets f2, for every sample of f1.
inline Correspondence build_correspondence(const NormalAverager& avg, const DirectionField& field,
                                           const FramedImmersion& f2, const CorrespondOptions& opt = {}) {
  const auto& f1 = avg.framed();
  const auto& net = avg.net();
  auto pre = correspondence_preconditions(f1, net, f2, opt);
  detail::require_met(pre);
  const auto cover = detail::cover_lists(net.sets(3), f1.f().size());
  auto project = [&](int p, const GraphPatch& patch) -> std::optional<detail::Hit> {
    const auto h = fiber_intersection(patch, field.T(p), f1.f().position(p));
    if (!h) return std::nullopt;
    return detail::Hit{h->point, h->x.norm(), 0, 0};
  };
  auto residual = [&](int p, const Vec& y) {
    const Vec d = y - f1.f().position(p);
    const Vec w = field.T(p);
    return (d - d.dot(w) * w).norm();
  };
  return detail::project_samples(f1, net, f2, field.owner, cover, std::move(pre), opt, project, residual);
}

/// Higher codimension: φ(p) is where the affine plane f1(p) + N(p) meets f2.
inline Correspondence build_correspondence(const NormalSpaces& ns, const NormalField& field, const FramedImmersion& f2,
                                           const CorrespondOptions& opt = {}) {
  const auto& f1 = ns.framed();
  const auto& net = ns.net();
  auto pre = correspondence_preconditions(f1, net, f2, opt);
  detail::require_met(pre);
  const auto cover = detail::cover_lists(net.sets(3), f1.f().size());
  std::vector<int> owner(f1.f().size());
  for (int p = 0; p < f1.f().size(); ++p) {
    if (cover[p].empty()) fail(ErrorKind::invariant_violation, "sample lies in no delta_3-chart", f1.f().id(p));
    owner[p] = cover[p][0];
  }
  auto project = [&](int p, const GraphPatch& patch) -> std::optional<detail::Hit> {
    const auto h = fiber_plane_intersection(patch, field.N[p], f1.f().position(p), opt.max_iterations);
    if (!h) return std::nullopt;
    return detail::Hit{h->point, h->x.norm(), h->iterations, h->contraction};
  };
  auto residual = [&](int p, const Vec& y) {
    const Mat C = field.N[p].complement().frame();
    return (C.transpose() * (y - f1.f().position(p))).norm();
  };
  return detail::project_samples(f1, net, f2, owner, cover, std::move(pre), opt, project, residual);
}

// ---------------------------------------------------------------------------
// Bijectivity at sample scale

struct BijectivityReport {
  bool injective = false;
  bool surjective = false;
  double min_separation = 0;
  long nearest_collisions = 0;   // sources sharing a nearest target sample with another source
  long unresolved_collisions = 0;  // of those, pairs whose φ points coincide
  double tau = 0;
  double worst_gap = 0;
  long gaps = 0;
  int worst_target = -1;
};

/// `coverage` optionally restricts which source samples count towards surjectivity.
inline BijectivityReport verify_bijectivity(const Correspondence& c, const std::vector<char>& coverage = {}) {
  const int count = c.source.size();
  const auto& tgt = c.target;
  if (!coverage.empty() && static_cast<int>(coverage.size()) != count)
    fail(ErrorKind::invalid_input, "coverage mask needs one entry per source sample");
  BijectivityReport rep;
  const double scale = std::max(1.0, c.phi.cwiseAbs().maxCoeff());
  const double coincide = 1e-12 * scale;

  std::vector<std::vector<int>> by_target(tgt.size());
  for (int p = 0; p < count; ++p) by_target[c.nearest[p]].push_back(p);
  for (const auto& group : by_target) {
    if (group.size() < 2) continue;
    rep.nearest_collisions += static_cast<long>(group.size());
    for (std::size_t a = 0; a < group.size(); ++a)
      for (std::size_t b = a + 1; b < group.size(); ++b)
        if ((c.phi.col(group[a]) - c.phi.col(group[b])).norm() <= coincide) ++rep.unresolved_collisions;
  }

  rep.min_separation = std::numeric_limits<double>::infinity();
  const double reach = 2 * c.source.max_edge();
  if (c.phi.rows() <= 3) {
    PointIndex index(c.phi);
    for (int p = 0; p < count; ++p)
      for (int q : index.within(c.phi.col(p), reach))
        if (q != p) rep.min_separation = std::min(rep.min_separation, (c.phi.col(p) - c.phi.col(q)).norm());
  } else {
    for (int p = 0; p < count; ++p)
      for (int q = p + 1; q < count; ++q)
        rep.min_separation = std::min(rep.min_separation, (c.phi.col(p) - c.phi.col(q)).norm());
  }
  if (!std::isfinite(rep.min_separation)) rep.min_separation = reach;
  rep.injective = rep.min_separation > coincide && rep.unresolved_collisions == 0;

  rep.tau = 2 * tgt.max_edge();
  std::vector<int> kept;
  for (int p = 0; p < count; ++p)
    if (coverage.empty() || coverage[p]) kept.push_back(p);
  if (kept.empty()) {
    rep.gaps = tgt.size();
    rep.worst_gap = std::numeric_limits<double>::infinity();
    return rep;
  }
  Mat covered(c.phi.rows(), kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) covered.col(i) = c.phi.col(kept[i]);
  std::vector<double> gap(tgt.size());
  if (covered.rows() <= 3) {
    PointIndex index(covered);
    parallel_for(tgt.size(), [&](std::size_t t) {
      const Vec y = tgt.position(static_cast<int>(t));
      gap[t] = (covered.col(index.nearest(y)) - y).norm();
    });
  } else {
    parallel_for(tgt.size(), [&](std::size_t t) {
      gap[t] = std::sqrt((covered.colwise() - tgt.position(static_cast<int>(t))).colwise().squaredNorm().minCoeff());
    });
  }
  for (int t = 0; t < tgt.size(); ++t) {
    if (gap[t] > rep.tau) ++rep.gaps;
    if (gap[t] > rep.worst_gap) {
      rep.worst_gap = gap[t];
      rep.worst_target = t;
    }
  }
  rep.surjective = rep.gaps == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Lipschitz constant of the reparametrization in chart coordinates

struct ReparamLipschitzReport {
  int chart = -1;
  double empirical = 0;
  double bound_formula = 0;  // (1 + tan γ)(1 + λ + rL)
  double bound_sharp = 0;    // 2(1 + λ)²
  bool holds = false;
  bool sharp_holds = false;
  double sharp_margin = 0;
};

inline double reparam_formula_bound(int m, int codim, double lambda, double r) {
  const auto c = constants(m, lambda, r);
  if (codim == 1) return c.Lambda;
  return (1 + std::tan(higher_codim_gamma(lambda))) * (1 + lambda + r * c.L_highercodim);
}

/// max |f̂(x) - f̂(y)| / |x - y| over the δ₃-chart j, where x are coordinates of f1 in E(q_j)
/// and f̂(x) = f2(φ(p)).
inline ReparamLipschitzReport reparametrized_lipschitz(const Correspondence& c, const FramedImmersion& f1,
                                                      const DeltaNet& net, int j) {
  const auto& f = f1.f();
  ReparamLipschitzReport rep;
  rep.chart = j;
  rep.bound_formula = reparam_formula_bound(f.m(), f.codim(), f1.lambda(), f1.r());
  rep.bound_sharp = 2 * (1 + f1.lambda()) * (1 + f1.lambda());
  const auto& samples = net.set(3, j);
  const int q = net.point(j);
  std::vector<Vec> x(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) x[i] = f1.chart_coords(q, samples[i]);
  auto quotient = [&](std::size_t a, std::size_t b) {
    const double dx = (x[a] - x[b]).norm();
    if (dx == 0) return 0.0;
    return (c.phi.col(samples[a]) - c.phi.col(samples[b])).norm() / dx;
  };
  if (f.m() == 1) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a](0) < x[b](0); });
    for (std::size_t i = 0; i + 1 < order.size(); ++i) rep.empirical = std::max(rep.empirical, quotient(order[i], order[i + 1]));
  } else {
    for (std::size_t a = 0; a < samples.size(); ++a)
      for (std::size_t b = a + 1; b < samples.size(); ++b) rep.empirical = std::max(rep.empirical, quotient(a, b));
  }
  rep.holds = rep.empirical <= rep.bound_formula;
  rep.sharp_holds = rep.empirical <= rep.bound_sharp;
  rep.sharp_margin = rep.bound_sharp - rep.empirical;
  return rep;
}

/// Worst chart over `charts` (all charts when empty).
inline ReparamLipschitzReport worst_reparametrized_lipschitz(const Correspondence& c, const FramedImmersion& f1,
                                                             const DeltaNet& net, const std::vector<int>& charts = {}) {
  const auto list = detail::chart_list(net.size(), charts);
  std::vector<ReparamLipschitzReport> reps(list.size());
  parallel_for(list.size(), [&](std::size_t i) { reps[i] = reparametrized_lipschitz(c, f1, net, list[i]); });
  ReparamLipschitzReport worst = reps.front();
  for (const auto& r : reps)
    if (r.empirical > worst.empirical) worst = r;
  return worst;
}

// ---------------------------------------------------------------------------
// Convergence harness

struct ConvergenceOptions {
  double r = 0.2;
  double lambda = 0.25;
  int level = 5;
  Closeness closeness = Closeness::empirical;
  /// Every member must meet the ball of this radius about the origin.
  double anchor_tolerance = 2.0;
  std::vector<double> sandwich_radii;  // empty: r/4, r/2, r
  int sandwich_bases = 64;
  int graph_net_level = 1;
};

struct DecayRow {
  int member = -1;
  double distance_to_limit = 0;  // sup_p |f^i(φ^i(p)) - limit(p)|
  double increment = 0;          // sup_p distance to the next kept member; 0 for the last
  double max_displacement = 0;   // sup_p |f^i(φ^i(p)) - f¹(p)|
};

struct SandwichRow {
  double rho = 0;
  double eps = 0;
  int bases = 0;
  double worst_inner_gap = 0;    // graph points over B_{ϱ-ε} farthest from the limit's U_ϱ
  double worst_outer_excess = 0;  // limit points of U_ϱ farthest from the graph over B_{ϱ+ε}
  bool holds = false;
};

struct ConvergenceReport {
  bool conclusive = false;
  std::string note;
  std::vector<double> anchor_distance;
  bool anchored = false;
  std::vector<int> kept;
  std::vector<int> dropped;
  std::vector<std::string> drop_reasons;
  Mat graph_distances;  // kept × kept, on a coarse net of the reference
  int graph_net_level = 0;
  std::vector<DecayRow> decay;
  bool decay_monotone = false;
  SampledImmersion limit;
  FunctionCheckReport limit_check;
  std::vector<SandwichRow> sandwich;
  bool limit_pass = false;
};

namespace detail {

inline std::vector<SandwichRow> sandwich_check(const FramedImmersion& limit, const SampledImmersion& member,
                                               const std::vector<double>& radii, int bases) {
  const auto& f = limit.f();
  const double eps = 2 * f.max_edge();
  const int stride = std::max(1, f.size() / std::max(1, bases));
  std::vector<int> base_list;
  for (int q = 0; q < f.size(); q += stride) base_list.push_back(q);
  std::unique_ptr<PointIndex> member_index;
  if (member.n() <= 3) member_index = std::make_unique<PointIndex>(member.positions());
  std::vector<SandwichRow> rows;
  for (double rho : radii) {
    SandwichRow row;
    row.rho = rho;
    row.eps = eps;
    row.bases = static_cast<int>(base_list.size());
    std::vector<double> inner(base_list.size(), 0), outer(base_list.size(), 0);
    parallel_for(base_list.size(), [&](std::size_t b) {
      const int q = base_list[b];
      const int s = member_index ? member_index->nearest(f.position(q)) : 0;
      PatchOptions popt;
      popt.fold_check = false;
      const auto patch = extract_graph_patch(member, s, limit.plane(q), rho + eps, popt);
      const auto U = limit.component(q, rho);
      const int m = f.m();
      // Outer: each point of U_ϱ sits over B_{ϱ+ε} and on the graph, within ε.
      for (int p : U) {
        const Vec z = patch.isometry.inverse_apply(f.position(p));
        const Vec x = z.head(m);
        double excess = std::max(0.0, x.norm() - (rho + eps));
        if (x.norm() <= patch.radius) excess = std::max(excess, (z.tail(patch.k) - patch.value(x)).norm() - eps);
        outer[b] = std::max(outer[b], excess);
      }
      // Inner: every graph point over B_{ϱ-ε} is within ε of U_ϱ.
      Mat pts(f.n(), U.size());
      for (std::size_t i = 0; i < U.size(); ++i) pts.col(i) = f.position(U[i]);
      for (int idx = 0; idx < patch.node_count(); ++idx) {
        const Vec x = patch.node(idx);
        if (x.norm() > rho - eps) continue;
        const Vec y = patch.isometry.apply(patch.graph_point(x));
        const double d = std::sqrt((pts.colwise() - y).colwise().squaredNorm().minCoeff());
        inner[b] = std::max(inner[b], d - eps);
      }
    });
    row.worst_inner_gap = *std::max_element(inner.begin(), inner.end());
    row.worst_outer_excess = *std::max_element(outer.begin(), outer.end());
    row.holds = row.worst_inner_gap <= 0 && row.worst_outer_excess <= 0;
    rows.push_back(row);
  }
  return rows;
}

// Net, averaged field and correspondence builder for one reference immersion.
struct Reference {
  const FramedImmersion* fi = nullptr;
  DeltaNet net;
  std::unique_ptr<NormalAverager> avg;
  std::unique_ptr<DirectionField> field;
  std::unique_ptr<NormalSpaces> spaces;
  std::unique_ptr<NormalField> normals;

  Reference(const FramedImmersion& f, int level) : fi(&f), net(build_net(f, net_options(level))) {
    if (f.f().codim() == 1) {
      avg = std::make_unique<NormalAverager>(f, net);
      field = std::make_unique<DirectionField>(direction_field(*avg));
    } else {
      spaces = std::make_unique<NormalSpaces>(f, net);
      normals = std::make_unique<NormalField>(normal_field(*spaces));
    }
  }
  static NetOptions net_options(int level) {
    NetOptions o;
    o.level = level;
    o.z_levels = {3};
    return o;
  }
  Correspondence build(const FramedImmersion& other, const CorrespondOptions& opt) const {
    return field ? build_correspondence(*avg, *field, other, opt) : build_correspondence(*spaces, *normals, other, opt);
  }
};

}  // namespace detail

/// Convergence of a family at desk scale: thin to members close to the reference and to the
/// previously kept member, reparametrize every kept member over the reference, and check the
/// last reparametrization as the limit candidate.
inline ConvergenceReport convergence_harness(const std::vector<SampledImmersion>& family,
                                             const ConvergenceOptions& opt = {}) {
  if (family.size() < 2) fail(ErrorKind::invalid_input, "a family needs at least two members");
  for (const auto& f : family)
    if (f.n() != family[0].n() || f.m() != family[0].m())
      fail(ErrorKind::dimension_mismatch, "family members have different dimensions");
  ConvergenceReport rep;
  std::vector<FramedImmersion> framed;
  for (const auto& f : family) framed.emplace_back(f, opt.r, opt.lambda);
  for (std::size_t i = 0; i < framed.size(); ++i) {
    const auto check = check_r_lambda(framed[i]);
    if (!check.pass)
      fail(ErrorKind::precondition_unmet, "family member " + std::to_string(i) + " fails the (r, lambda) check (worst " +
                                              std::to_string(check.worst_lambda) + ")");
  }
  for (const auto& f : family) rep.anchor_distance.push_back(std::sqrt(f.positions().colwise().squaredNorm().minCoeff()));
  rep.anchored = *std::max_element(rep.anchor_distance.begin(), rep.anchor_distance.end()) <= opt.anchor_tolerance;
  if (!rep.anchored) fail(ErrorKind::precondition_unmet, "family members do not meet a common ball about the origin");

  CorrespondOptions copt;
  copt.closeness = opt.closeness;
  copt.verify_r_lambda = false;  // checked above for every member
  const detail::Reference ref(framed[0], opt.level);
  rep.kept = {0};
  std::vector<Correspondence> corr;
  std::optional<DeltaNet> prev_net;
  int prev_member = 0;
  for (std::size_t i = 1; i < framed.size(); ++i) {
    try {
      const int last = rep.kept.back();
      if (last != 0) {
        if (prev_member != last) {
          prev_net = build_net(framed[last], detail::Reference::net_options(opt.level));
          prev_member = last;
        }
        const auto pre = correspondence_preconditions(framed[last], *prev_net, framed[i], copt);
        if (!pre.met) throw Error(ErrorKind::precondition_unmet, "against member " + std::to_string(last) + ": " + pre.reason);
      }
      corr.push_back(ref.build(framed[i], copt));
      rep.kept.push_back(static_cast<int>(i));
    } catch (const Error& e) {
      if (category_of(e.kind()) != ErrorCategory::precondition) throw;
      rep.dropped.push_back(static_cast<int>(i));
      rep.drop_reasons.push_back(e.what());
    }
  }
  if (rep.kept.size() < 2) {
    rep.note = "no admissible subsequence of length 2: the family is too spread";
    return rep;
  }
  rep.conclusive = true;
  rep.note = "limit candidate: the last kept member reparametrized over the reference";

  const auto& src = family[0];
  std::vector<Mat> images{src.positions()};
  for (const auto& c : corr) images.push_back(c.phi);
  const Mat& lim = images.back();
  rep.decay.resize(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& row = rep.decay[i];
    row.member = rep.kept[i];
    row.distance_to_limit = (images[i] - lim).colwise().norm().maxCoeff();
    row.max_displacement = (images[i] - src.positions()).colwise().norm().maxCoeff();
    if (i + 1 < images.size()) row.increment = (images[i] - images[i + 1]).colwise().norm().maxCoeff();
  }
  rep.decay_monotone = true;
  for (std::size_t i = 1; i < rep.decay.size(); ++i)
    if (rep.decay[i].distance_to_limit > rep.decay[i - 1].distance_to_limit + 1e-12) rep.decay_monotone = false;

  // Graph-system distances between kept members over a coarse net of the reference.
  rep.graph_net_level = opt.graph_net_level;
  NetOptions gopt;
  gopt.level = opt.graph_net_level;
  gopt.z_levels = {};
  const auto coarse = build_net(framed[0], gopt);
  std::vector<GraphSystem> systems;
  for (int k : rep.kept)
    systems.push_back(graph_system(framed[k], match_net_points(coarse, src, family[k]), 16));
  const int K = static_cast<int>(rep.kept.size());
  rep.graph_distances = Mat::Zero(K, K);
  for (int a = 0; a < K; ++a)
    for (int b = a + 1; b < K; ++b)
      rep.graph_distances(a, b) = rep.graph_distances(b, a) = graph_system_distance(systems[a], systems[b]);

  rep.limit = SampledImmersion(src.m(), lim, src.cells(), src.ids());
  const FramedImmersion limit(rep.limit, opt.r, opt.lambda);
  rep.limit_check = check_r_lambda_function(limit);
  auto radii = opt.sandwich_radii;
  if (radii.empty()) radii = {opt.r / 4, opt.r / 2, opt.r};
  rep.sandwich = detail::sandwich_check(limit, family[rep.kept.back()], radii, opt.sandwich_bases);
  rep.limit_pass = rep.limit_check.pass && rep.limit_check.injective &&
                   std::all_of(rep.sandwich.begin(), rep.sandwich.end(), [](const SandwichRow& s) { return s.holds; });
  return rep;
}

}  // namespace lipimm
