#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iterator>
#include <limits>
#include <memory>
#include <numeric>
#include <numbers>
#include <optional>
#include <vector>

#include "lipimm/grassmann.hpp"
#include "lipimm/immersion.hpp"
#include "lipimm/karcher.hpp"
#include "lipimm/nets.hpp"
#include "lipimm/parallel.hpp"
#include "lipimm/spatial.hpp"

namespace lipimm {

// ---------------------------------------------------------------------------
// Cutoff

namespace detail {

/// C∞ step on [0,1]: 0 below, 1 above, with ψ(x) + ψ(1-x) = 1.
inline double smooth_step(double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double a = std::exp(-1 / x), b = std::exp(-1 / (1 - x));
  return a / (a + b);
}

/// Ψ(y) = ∫_0^y ψ, tabulated once and read back with cubic Hermite interpolation.
class StepIntegral {
 public:
  static const StepIntegral& instance() {
    static const StepIntegral table;
    return table;
  }
  double operator()(double y) const {
    if (y <= 0) return 0;
    if (y >= 1) return 0.5;
    const double s = y * kNodes;
    const int i = std::min(static_cast<int>(s), kNodes - 1);
    const double t = s - i, h = 1.0 / kNodes;
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
    return h00 * v_[i] + h10 * h * d_[i] + h01 * v_[i + 1] + h11 * h * d_[i + 1];
  }

 private:
  static constexpr int kNodes = 2048;
  StepIntegral() : v_(kNodes + 1), d_(kNodes + 1) {
    // 8-point Gauss-Legendre on every table interval.
    static constexpr std::array<double, 8> x = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                0.7966664774136267,  0.9602898564975363};
    static constexpr std::array<double, 8> w = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                0.2223810344533745, 0.1012285362903763};
    const double h = 1.0 / kNodes;
    v_[0] = 0;
    for (int i = 0; i < kNodes; ++i) {
      double acc = 0;
      for (int q = 0; q < 8; ++q) acc += w[q] * smooth_step((i + 0.5 + 0.5 * x[q]) * h);
      v_[i + 1] = v_[i] + 0.5 * h * acc;
    }
    for (int i = 0; i <= kNodes; ++i) d_[i] = smooth_step(i * h);
  }
  std::vector<double> v_, d_;
};

}  // namespace detail

/// The cutoff g: 1 on [0, inner], 0 beyond 1, smooth and non-increasing between.
///
/// g' is minus a scaled C∞ plateau: it ramps up over the first `ramp` fraction
/// of [inner, 1], stays flat, and ramps down over the last `ramp` fraction.
/// Its largest slope is 1/((1 - ramp)(1 - inner)).
struct CutoffSpec {
  double inner = 0;
  double ramp = 0.2;

  static CutoffSpec for_lambda(double lambda) {
    CutoffSpec s;
    s.inner = 1.0 / (3 * (1 + lambda));
    s.validate();
    return s;
  }

  void validate() const {
    if (!(inner > 0 && inner < 1)) fail(ErrorKind::invalid_input, "cutoff inner radius must lie in (0,1)");
    if (!(ramp > 0 && ramp <= 0.5)) fail(ErrorKind::invalid_input, "cutoff ramp fraction must lie in (0, 1/2]");
    if (max_slope() > 2) fail(ErrorKind::invalid_input, "cutoff slope would exceed 2");
  }

  double max_slope() const { return 1.0 / ((1 - ramp) * (1 - inner)); }

  double g(double t) const {
    if (t < 0) fail(ErrorKind::invalid_input, "cutoff argument must be non-negative");
    if (t <= inner) return 1;
    if (t >= 1) return 0;
    const double s = (t - inner) / (1 - inner), a = ramp;
    const auto& Psi = detail::StepIntegral::instance();
    double area;
    if (s <= a) area = a * Psi(s / a);
    else if (s <= 1 - a) area = a / 2 + (s - a);
    else area = (1 - a) - a * Psi((1 - s) / a);
    return std::clamp(1 - area / (1 - a), 0.0, 1.0);
  }

  double derivative(double t) const {
    if (t < 0) fail(ErrorKind::invalid_input, "cutoff argument must be non-negative");
    if (t <= inner || t >= 1) return 0;
    const double s = (t - inner) / (1 - inner), a = ramp;
    const double plateau = s < a ? detail::smooth_step(s / a) : s > 1 - a ? detail::smooth_step((1 - s) / a) : 1.0;
    return -plateau * max_slope();
  }
};

inline double cutoff_g(double t, const CutoffSpec& spec) { return spec.g(t); }

// ---------------------------------------------------------------------------
// Constants

struct ConstantsBundle {
  int m = 0;
  double lambda = 0, r = 0;
  double L_codim1 = 0;
  double L_highercodim = 0;
  double gamma = 0;
  double tan_gamma = 0;
  double epsilon = 0;
  double sigma = 0;
  double Lambda = 0;
  double sharp_Lambda = 0;  // 2(1+λ)²
};

inline ConstantsBundle constants(int m, double lambda, double r) {
  if (m < 1 || !(lambda >= 0) || !(r > 0)) fail(ErrorKind::invalid_input, "need m >= 1, lambda >= 0, r > 0");
  ConstantsBundle c;
  c.m = m;
  c.lambda = lambda;
  c.r = r;
  c.L_codim1 = std::pow(3 * (1 + lambda), 6 * m + 4) / r;
  c.L_highercodim = std::pow(4.0, 12 * m + 6) / r;
  c.gamma = std::numbers::pi / 4 + 0.5 * std::atan(lambda);
  c.tan_gamma = std::tan(c.gamma);
  const double cg = std::cos(c.gamma);
  c.epsilon = cg / c.L_codim1;
  c.sigma = cg * cg / (2 * c.L_codim1 * (1 + lambda));
  c.Lambda = (1 + c.tan_gamma) * (1 + lambda + r * c.L_codim1);
  c.sharp_Lambda = 2 * (1 + lambda) * (1 + lambda);
  return c;
}

// ---------------------------------------------------------------------------
// Normals of a hypersurface

inline void require_codim1(const SampledImmersion& f) {
  if (f.codim() != 1) fail(ErrorKind::invalid_input, "this construction needs codimension 1");
}

/// Unit normal of f at sample p, sign unspecified.
inline Vec sample_normal(const SampledImmersion& f, int p) {
  const Mat& t = f.tangent(p);
  if (f.n() == 2) {
    Vec v(2);
    v << -t(1, 0), t(0, 0);
    return v.normalized();
  }
  return orthonormalize(t).complement().frame().col(0);
}

/// Normal space of f at sample p.
inline Subspace normal_space(const SampledImmersion& f, int p) { return orthonormalize(f.tangent(p)).complement(); }

/// Graph normals (-Du, 1)/√(1+|Du|²), rotated into R^n, at every grid node inside the ball.
inline Mat unit_normal_patch(const GraphPatch& patch) {
  if (patch.k != 1) fail(ErrorKind::invalid_input, "graph normals need codimension 1");
  const int n = patch.m + 1;
  Mat out = Mat::Zero(n, patch.node_count());
  for (int idx = 0; idx < patch.node_count(); ++idx) {
    if (!patch.inside[idx]) continue;
    Vec v(n);
    v.head(patch.m) = -patch.jacobian(idx).transpose();
    v(patch.m) = 1;
    out.col(idx) = patch.isometry.rotation * (v / v.norm());
  }
  return out;
}

/// A continuous unit normal ν_j on a set of samples, signed to agree with the chart axis A_j(e_{m+1}).
struct NormalChart {
  int base = -1;
  std::vector<int> samples;  // sorted
  Mat normals;               // n × samples

  Vec at(int sample) const {
    auto it = std::lower_bound(samples.begin(), samples.end(), sample);
    if (it == samples.end() || *it != sample) fail(ErrorKind::invalid_input, "sample is not in this chart");
    return normals.col(it - samples.begin());
  }
};

inline NormalChart normal_chart(const FramedImmersion& fi, int base, std::vector<int> samples) {
  const auto& f = fi.f();
  require_codim1(f);
  NormalChart c;
  c.base = base;
  c.samples = std::move(samples);
  const Vec axis = fi.isometry(base).rotation.col(f.n() - 1);
  c.normals.resize(f.n(), c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    Vec v = sample_normal(f, c.samples[i]);
    if (v.dot(axis) < 0) v = -v;
    c.normals.col(i) = v;
  }
  return c;
}

/// +1 if the two normal fields agree at every shared sample, -1 if they are opposite at every one.
inline int sign_alignment(const NormalChart& a, const NormalChart& b) {
  std::vector<int> common;
  std::set_intersection(a.samples.begin(), a.samples.end(), b.samples.begin(), b.samples.end(),
                        std::back_inserter(common));
  if (common.empty()) fail(ErrorKind::precondition_unmet, "the two charts do not overlap");
  int plus = 0, minus = 0;
  for (int p : common) (a.at(p).dot(b.at(p)) > 0 ? plus : minus)++;
  if (plus && minus)
    fail(ErrorKind::coherence_violation,
         "normals agree at " + std::to_string(plus) + " and disagree at " + std::to_string(minus) + " shared samples");
  return plus ? 1 : -1;
}

inline int normal_sign_alignment(const FramedImmersion& fi, const DeltaNet& net, int j, int k) {
  return sign_alignment(normal_chart(fi, net.point(j), net.set(1, j)), normal_chart(fi, net.point(k), net.set(1, k)));
}

// ---------------------------------------------------------------------------
// Averaged vector S and the direction field ω

/// Per-net data shared by S, T, ω and N: net-plane normals, reference normals, cutoff.
class NormalAverager {
 public:
  NormalAverager(const FramedImmersion& fi, const DeltaNet& net)
      : fi_(&fi), net_(&net), cutoff_(CutoffSpec::for_lambda(fi.lambda())), delta2_(fi.delta(2)) {
    if (net.r() != fi.r() || net.lambda() != fi.lambda())
      fail(ErrorKind::invalid_input, "net was built for different (r, lambda)");
    const auto& f = fi.f();
    const int s = net.size();
    if (f.codim() == 1) {
      w_.resize(f.n(), s);
      ref_.resize(f.n(), s);
      for (int k = 0; k < s; ++k) {
        const int q = net.point(k);
        w_.col(k) = fi.isometry(q).rotation.col(f.n() - 1);
        Vec v = sample_normal(f, q);
        ref_.col(k) = v.dot(w_.col(k)) < 0 ? Vec(-v) : v;
      }
      if (f.n() <= 3) {
        Mat pos(f.n(), s);
        for (int k = 0; k < s; ++k) pos.col(k) = f.position(net.point(k));
        index_ = std::make_shared<PointIndex>(pos);
      }
    }
  }

  const FramedImmersion& framed() const { return *fi_; }
  const DeltaNet& net() const { return *net_; }
  const CutoffSpec& cutoff() const { return cutoff_; }

  /// g(|f(q) - f(q_k)| / δ₂) for sample index q and net index k.
  double weight(int q, int k) const {
    const auto& f = fi_->f();
    return cutoff_.g((f.position(q) - f.position(net_->point(k))).norm() / delta2_);
  }

  /// Unit normal w_k of the net plane E_k.
  Vec w(int k) const { return w_.col(k); }
  /// ν_j(q_j).
  Vec reference_normal(int j) const { return ref_.col(j); }

  /// Sign making ±w_k lie within arctan λ of ν_j(q_j).
  int sign(int j, int k) const {
    const double bound = std::atan(fi_->lambda()) + 1e-9;
    const Vec wk = w_.col(k), nj = ref_.col(j);
    if (sphere_angle(wk, nj) <= bound) return 1;
    if (sphere_angle(-wk, nj) <= bound) return -1;
    fail(ErrorKind::coherence_violation,
         "neither sign of the normal of net plane " + std::to_string(net_->point_id(k)) +
             " lies within arctan(lambda) of the reference normal of chart " + std::to_string(net_->point_id(j)),
         net_->point_id(k));
  }

  /// S at an arbitrary point y of R^n: Σ_k g(|y - f(q_k)| / δ₂) · sign(j,k) · w_k.
  Vec S_at_point(const Vec& y, int j) const {
    if (!index_) fail(ErrorKind::invalid_input, "pointwise S needs a hypersurface in R^2 or R^3");
    Vec s = Vec::Zero(y.size());
    for (int k : index_->within(y, delta2_)) {
      const double g = cutoff_.g((y - fi_->f().position(net_->point(k))).norm() / delta2_);
      if (g > 0) s += (g * sign(j, k)) * w_.col(k);
    }
    return s;
  }

  /// S(q) relative to chart j, without the lower-bound check.
  Vec S_raw(int q, int j) const {
    Vec s = Vec::Zero(fi_->f().n());
    for (int k : net_->z_of_index(q)) {
      const double g = weight(q, k);
      if (g > 0) s += (g * sign(j, k)) * w_.col(k);
    }
    return s;
  }

 private:
  const FramedImmersion* fi_;
  const DeltaNet* net_;
  CutoffSpec cutoff_;
  double delta2_;
  Mat w_, ref_;
  std::shared_ptr<PointIndex> index_;
};

/// S(q) in chart j for the sample with id `q`; enforces |S| >= 1/(1+λ).
inline Vec averaged_vector_S(const NormalAverager& avg, std::int64_t q, int j) {
  const auto& f = avg.framed().f();
  require_codim1(f);
  const int qi = f.index_of(q);
  const Vec s = avg.S_raw(qi, j);
  const double bound = 1.0 / (1 + avg.framed().lambda());
  if (s.norm() < bound - 1e-12)
    fail(ErrorKind::invariant_violation,
         "|S| = " + std::to_string(s.norm()) + " is below 1/(1+lambda) = " + std::to_string(bound), q);
  return s;
}

struct ChartField {
  int j = -1;
  std::vector<int> samples;  // U_{δ3,j}, sorted
  Mat S;                     // n × samples

  Vec S_at(int sample) const {
    auto it = std::lower_bound(samples.begin(), samples.end(), sample);
    if (it == samples.end() || *it != sample) fail(ErrorKind::invalid_input, "sample is not in this chart");
    return S.col(it - samples.begin());
  }
  Mat T() const { return S.colwise().normalized(); }
};

/// S per δ₃-chart, plus a global field glued from the lowest-index chart at each sample.
struct DirectionField {
  std::vector<ChartField> charts;
  Mat S;                  // n × samples, global
  std::vector<int> owner;  // chart giving the global value
  double min_norm = 0;
  double worst_overlap = 0;
  long overlaps_checked = 0;

  Vec T(int p) const { return S.col(p).normalized(); }
  Subspace omega(int p) const { return orthonormalize(S.col(p)); }
};

inline DirectionField direction_field(const NormalAverager& avg) {
  const auto& fi = avg.framed();
  const auto& net = avg.net();
  const auto& f = fi.f();
  require_codim1(f);
  if (net.level() < 4) fail(ErrorKind::precondition_unmet, "the averaged field needs at least a δ₄-net");
  DirectionField field;
  field.charts.resize(net.size());
  const double bound = 1.0 / (1 + fi.lambda());
  std::vector<double> chart_min(net.size(), std::numeric_limits<double>::infinity());
  parallel_for(net.size(), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    auto& c = field.charts[j];
    c.j = j;
    c.samples = net.set(3, j);
    c.S.resize(f.n(), c.samples.size());
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      c.S.col(i) = avg.S_raw(c.samples[i], j);
      const double nrm = c.S.col(i).norm();
      chart_min[j] = std::min(chart_min[j], nrm);
      if (nrm < bound - 1e-12)
        fail(ErrorKind::invariant_violation, "|S| = " + std::to_string(nrm) + " is below 1/(1+lambda)",
             f.id(c.samples[i]));
    }
  });
  field.min_norm = *std::min_element(chart_min.begin(), chart_min.end());

  const auto cover = detail::cover_lists(net.sets(3), f.size());
  field.S.resize(f.n(), f.size());
  field.owner.assign(f.size(), -1);
  std::vector<double> worst(f.size(), 0);
  std::vector<long> count(f.size(), 0);
  parallel_for(f.size(), [&](std::size_t pp) {
    const int p = static_cast<int>(pp);
    const auto& charts = cover[p];
    if (charts.empty()) fail(ErrorKind::invariant_violation, "sample lies in no δ₃-chart", f.id(p));
    const Vec s0 = field.charts[charts[0]].S_at(p);
    field.S.col(p) = s0;
    field.owner[p] = charts[0];
    for (std::size_t i = 1; i < charts.size(); ++i) {
      const double d = line_distance(s0, field.charts[charts[i]].S_at(p));
      worst[p] = std::max(worst[p], d);
      ++count[p];
      if (d > 1e-9)
        fail(ErrorKind::well_definedness_violation,
             "omega differs by " + std::to_string(d) + " between charts " + std::to_string(net.point_id(charts[0])) +
                 " and " + std::to_string(net.point_id(charts[i])),
             f.id(p));
    }
  });
  field.worst_overlap = *std::max_element(worst.begin(), worst.end());
  for (long c : count) field.overlaps_checked += c;
  return field;
}

// ---------------------------------------------------------------------------
// Angle bound against a second immersion

enum class CheckStatus { pass, conclusion_violated, precondition_unmet };

inline const char* status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::conclusion_violated: return "conclusion-violated";
    case CheckStatus::precondition_unmet: return "precondition-unmet";
  }
  return "?";
}

/// For each net point q_j of f, the sample of `other` nearest to f(q_j).
inline std::vector<int> match_net_points(const DeltaNet& net, const SampledImmersion& f, const SampledImmersion& other) {
  if (f.n() != other.n()) fail(ErrorKind::dimension_mismatch, "immersions live in different spaces");
  std::vector<int> out(net.size());
  if (other.n() <= 3) {
    PointIndex grid(other.positions());
    for (int j = 0; j < net.size(); ++j) out[j] = grid.nearest(f.position(net.point(j)));
  } else {
    for (int j = 0; j < net.size(); ++j) {
      Eigen::Index at;
      (other.positions().colwise() - f.position(net.point(j))).colwise().squaredNorm().minCoeff(&at);
      out[j] = static_cast<int>(at);
    }
  }
  return out;
}

struct NormalImageComparison {
  double hausdorff = 0;
  NormalChart theirs;  // ν of `other` on the δ₁-set of the matched sample
};

/// Hausdorff distance between the normal images of f on U_{δ₁,j} and of `other` on the δ₁-set
/// of its matched sample. The other chart is signed to agree with ν_j(q_j) at the match.
inline NormalImageComparison compare_normal_images(const FramedImmersion& fi, const DeltaNet& net,
                                                   const FramedImmersion& other, int j, int matched) {
  const NormalChart mine = normal_chart(fi, net.point(j), net.set(1, j));
  NormalImageComparison out;
  out.theirs = normal_chart(other, matched, other.component(matched, fi.delta(1)));
  if (out.theirs.at(matched).dot(mine.at(net.point(j))) < 0) out.theirs.normals = -out.theirs.normals;
  out.hausdorff = hausdorff_distance(SpherePointSet(mine.normals), SpherePointSet(out.theirs.normals));
  return out;
}

struct AngleBoundReport {
  CheckStatus status = CheckStatus::pass;
  double precondition_worst = 0;  // max Hausdorff distance of normal images
  double precondition_bound = 0;  // π/4 - ½ arctan λ
  double worst_angle = 0;
  double gamma = 0;
  int charts = 0;
  int worst_chart = -1;
};

/// Checks ∢(S(q), ν^other_j(p)) ≤ γ over q ∈ U_{δ₃,j} and p in the matched δ₁-set of `other`,
/// after checking that the normal images of f and `other` on the δ₁-sets are close.
/// `stride` > 1 checks every stride-th chart.
inline AngleBoundReport angle_bound_check(const NormalAverager& avg, const DirectionField& field,
                                          const FramedImmersion& other, int stride = 1) {
  const auto& fi = avg.framed();
  const auto& net = avg.net();
  const auto& f = fi.f();
  require_codim1(f);
  require_codim1(other.f());
  if (other.r() != fi.r() || other.lambda() != fi.lambda())
    fail(ErrorKind::invalid_input, "immersions carry different (r, lambda)");
  AngleBoundReport rep;
  rep.gamma = std::numbers::pi / 4 + 0.5 * std::atan(fi.lambda());
  rep.precondition_bound = std::numbers::pi / 4 - 0.5 * std::atan(fi.lambda());
  const auto matched = match_net_points(net, f, other.f());
  std::vector<int> charts;
  for (int j = 0; j < net.size(); j += std::max(1, stride)) charts.push_back(j);
  rep.charts = static_cast<int>(charts.size());
  std::vector<double> haus(charts.size()), ang(charts.size());
  parallel_for(charts.size(), [&](std::size_t c) {
    const int j = charts[c];
    const auto cmp = compare_normal_images(fi, net, other, j, matched[j]);
    haus[c] = cmp.hausdorff;
    const Mat T = field.charts[j].T();
    const Mat dots = T.transpose() * cmp.theirs.normals;
    const double lo = std::clamp(dots.minCoeff(), -1.0, 1.0);
    ang[c] = std::acos(lo);
  });
  for (std::size_t c = 0; c < charts.size(); ++c) {
    rep.precondition_worst = std::max(rep.precondition_worst, haus[c]);
    if (ang[c] > rep.worst_angle) {
      rep.worst_angle = ang[c];
      rep.worst_chart = charts[c];
    }
  }
  if (rep.precondition_worst >= rep.precondition_bound) rep.status = CheckStatus::precondition_unmet;
  else if (rep.worst_angle > rep.gamma) rep.status = CheckStatus::conclusion_violated;
  return rep;
}

// ---------------------------------------------------------------------------
// Lipschitz checks in chart coordinates

struct LipschitzReport {
  double empirical_L = 0;
  double bound_L = 0;
  bool holds = false;
  int worst_chart = -1;
};

namespace detail {

template <class Dist>
double chart_lipschitz(const FramedImmersion& fi, int base, const std::vector<int>& samples, Dist&& dist) {
  const int cnt = static_cast<int>(samples.size());
  Mat x(fi.f().m(), cnt);
  for (int i = 0; i < cnt; ++i) x.col(i) = fi.chart_coords(base, samples[i]);
  double worst = 0;
  for (int a = 0; a < cnt; ++a)
    for (int b = a + 1; b < cnt; ++b) {
      const double dx = (x.col(a) - x.col(b)).norm();
      if (dx > 0) worst = std::max(worst, dist(a, b) / dx);
    }
  return worst;
}

inline std::vector<int> chart_list(int size, const std::vector<int>& charts) {
  if (!charts.empty()) return charts;
  std::vector<int> all(size);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

}  // namespace detail

/// max |T(x) - T(y)| / |x - y| over pairs of a δ₃-chart, in the chart's plane coordinates.
/// An empty `charts` list means every chart.
inline LipschitzReport field_lipschitz_check(const NormalAverager& avg, const DirectionField& field,
                                             const std::vector<int>& charts = {}) {
  const auto& fi = avg.framed();
  LipschitzReport rep;
  rep.bound_L = constants(fi.f().m(), fi.lambda(), fi.r()).L_codim1;
  const auto list = detail::chart_list(avg.net().size(), charts);
  std::vector<double> worst(list.size());
  parallel_for(list.size(), [&](std::size_t c) {
    const auto& ch = field.charts.at(list[c]);
    const Mat T = ch.T();
    worst[c] = detail::chart_lipschitz(fi, avg.net().point(ch.j), ch.samples,
                                       [&](int a, int b) { return (T.col(a) - T.col(b)).norm(); });
  });
  for (std::size_t c = 0; c < list.size(); ++c)
    if (worst[c] > rep.empirical_L) {
      rep.empirical_L = worst[c];
      rep.worst_chart = list[c];
    }
  rep.holds = rep.empirical_L <= rep.bound_L;
  return rep;
}

// ---------------------------------------------------------------------------
// Higher codimension: the averaged normal N

struct NormalMeasure {
  DiracMixture mu;
  std::vector<int> net_indices;  // atom i is the normal space of net point net_indices[i]
  double support_radius = 0;     // max distance of an atom from ν(q)
  double margin = 0;             // π/12 - support_radius
};

inline constexpr double kNormalSupportRadius = std::numbers::pi / 12;
inline constexpr double kNormalBallRadius = std::numbers::pi / 6;

/// Normal spaces N_j of the net planes, computed once per net.
class NormalSpaces {
 public:
  NormalSpaces(const FramedImmersion& fi, const DeltaNet& net) : fi_(&fi), net_(&net), atoms_(net.size()) {
    if (fi.lambda() > 0.25) fail(ErrorKind::regime, "the averaged normal needs lambda <= 1/4");
    parallel_for(net.size(), [&](std::size_t k) { atoms_[k] = fi.plane(net.point(static_cast<int>(k))).complement(); });
    cutoff_ = CutoffSpec::for_lambda(fi.lambda());
  }
  const FramedImmersion& framed() const { return *fi_; }
  const DeltaNet& net() const { return *net_; }
  const Subspace& atom(int k) const { return atoms_.at(k); }

  NormalMeasure measure(int q) const {
    const auto& f = fi_->f();
    const double d2 = fi_->delta(2);
    std::vector<Atom> atoms;
    std::vector<int> idx;
    for (int k : net_->z_of_index(q)) {
      const double g = cutoff_.g((f.position(q) - f.position(net_->point(k))).norm() / d2);
      if (g > 0) {
        atoms.push_back({atoms_[k], g});
        idx.push_back(k);
      }
    }
    if (atoms.empty()) fail(ErrorKind::invariant_violation, "no net point carries weight at this sample", f.id(q));
    const Subspace nu = normal_space(f, q);
    double radius = 0;
    for (const auto& a : atoms) radius = std::max(radius, geodesic_distance(nu, a.point));
    if (radius >= kNormalSupportRadius)
      fail(ErrorKind::invariant_violation,
           "an atom lies " + std::to_string(radius) + " from the normal space, not within pi/12", f.id(q));
    return NormalMeasure{DiracMixture::normalized(std::move(atoms)), std::move(idx), radius,
                         kNormalSupportRadius - radius};
  }

  Subspace mean(int q) const { return mean(q, measure(q)); }

  Subspace mean(int q, const NormalMeasure& m) const {
    KarcherOptions opt;
    opt.kappa = 2.0;
    opt.center = normal_space(fi_->f(), q);
    opt.radius = kNormalBallRadius;
    return karcher_mean(m.mu, opt).mean;
  }

 private:
  const FramedImmersion* fi_;
  const DeltaNet* net_;
  std::vector<Subspace> atoms_;
  CutoffSpec cutoff_;
};

/// μ_q for the sample with id q.
inline NormalMeasure normal_measure(const NormalSpaces& ns, std::int64_t q) {
  return ns.measure(ns.framed().f().index_of(q));
}

/// N(q): the center of mass of μ_q in the ball of radius π/6 about ν(q).
inline Subspace averaged_normal_N(const NormalSpaces& ns, std::int64_t q) {
  return ns.mean(ns.framed().f().index_of(q));
}

struct NormalField {
  std::vector<Subspace> N;   // per sample
  double min_margin = 0;     // smallest π/12 - support radius
};

inline NormalField normal_field(const NormalSpaces& ns) {
  const auto& f = ns.framed().f();
  NormalField field;
  field.N.resize(f.size());
  std::vector<double> margin(f.size());
  parallel_for(f.size(), [&](std::size_t p) {
    const NormalMeasure m = ns.measure(static_cast<int>(p));
    margin[p] = m.margin;
    field.N[p] = ns.mean(static_cast<int>(p), m);
  });
  field.min_margin = *std::min_element(margin.begin(), margin.end());
  return field;
}

/// max d(N(x), N(y)) / |x - y| over pairs of a δ₃-chart.
inline LipschitzReport N_lipschitz_check(const NormalSpaces& ns, const NormalField& field,
                                         const std::vector<int>& charts = {}) {
  const auto& fi = ns.framed();
  LipschitzReport rep;
  rep.bound_L = constants(fi.f().m(), fi.lambda(), fi.r()).L_highercodim;
  const auto list = detail::chart_list(ns.net().size(), charts);
  std::vector<double> worst(list.size());
  parallel_for(list.size(), [&](std::size_t c) {
    const int j = list[c];
    const auto& samples = ns.net().set(3, j);
    worst[c] = detail::chart_lipschitz(fi, ns.net().point(j), samples, [&](int a, int b) {
      return geodesic_distance(field.N[samples[a]], field.N[samples[b]]);
    });
  });
  for (std::size_t c = 0; c < list.size(); ++c)
    if (worst[c] > rep.empirical_L) {
      rep.empirical_L = worst[c];
      rep.worst_chart = list[c];
    }
  rep.holds = rep.empirical_L <= rep.bound_L;
  return rep;
}

struct SmoothnessReport {
  double max_first_difference = 0;   // max d(N_i, N_{i+1}) / h
  double max_second_difference = 0;  // max |log(N_{i+1}) + log(N_{i-1})| / h² at N_i
  double max_jump_ratio = 0;         // max d_i / max(d_{i-1}, d_{i+1})
  bool continuous = false;
};

/// Finite-difference regularity of N along the δ₃-chart of a curve (m = 1), ordered by chart coordinate.
inline SmoothnessReport normal_smoothness(const NormalSpaces& ns, const NormalField& field, int j) {
  const auto& fi = ns.framed();
  if (fi.f().m() != 1) fail(ErrorKind::invalid_input, "the smoothness proxy walks along curves only");
  const int base = ns.net().point(j);
  std::vector<std::pair<double, int>> order;
  for (int p : ns.net().set(3, j)) order.push_back({fi.chart_coords(base, p)(0), p});
  std::sort(order.begin(), order.end());
  SmoothnessReport rep;
  const int cnt = static_cast<int>(order.size());
  if (cnt < 3) {
    rep.continuous = true;
    return rep;
  }
  std::vector<double> d(cnt - 1);
  for (int i = 0; i + 1 < cnt; ++i) {
    const double h = order[i + 1].first - order[i].first;
    d[i] = geodesic_distance(field.N[order[i].second], field.N[order[i + 1].second]);
    rep.max_first_difference = std::max(rep.max_first_difference, d[i] / h);
  }
  for (int i = 1; i + 1 < cnt; ++i) {
    const Subspace& mid = field.N[order[i].second];
    const Mat sum = log_map(mid, field.N[order[i + 1].second]).delta + log_map(mid, field.N[order[i - 1].second]).delta;
    const double h = 0.5 * (order[i + 1].first - order[i - 1].first);
    rep.max_second_difference = std::max(rep.max_second_difference, sum.norm() / (h * h));
  }
  const double floor = 1e-13;
  for (int i = 0; i < cnt - 1; ++i) {
    double local = 0;
    if (i > 0) local = std::max(local, d[i - 1]);
    if (i + 2 < cnt) local = std::max(local, d[i + 1]);
    rep.max_jump_ratio = std::max(rep.max_jump_ratio, (d[i] + floor) / (local + floor));
  }
  rep.continuous = rep.max_jump_ratio <= 10;
  return rep;
}

}  // namespace lipimm
