#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lipimm/grassmann.hpp"

namespace lipimm {

struct Atom {
  Subspace point;
  double weight;
};

/// A finitely supported probability measure on one Grassmannian.
class DiracMixture {
 public:
  explicit DiracMixture(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) fail(ErrorKind::invalid_input, "mixture has no atoms");
    double total = 0;
    for (const auto& a : atoms_) {
      require_same_grassmannian(atoms_.front().point, a.point);
      if (!(a.weight > 0) || !std::isfinite(a.weight))
        fail(ErrorKind::invalid_input, "atom weights must be positive and finite");
      total += a.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
      fail(ErrorKind::invalid_input, "weights sum to " + std::to_string(total) + ", not 1");
  }

  /// Rescales positive weights to sum to one.
  static DiracMixture normalized(std::vector<Atom> atoms) {
    double total = 0;
    for (const auto& a : atoms) total += a.weight;
    if (!(total > 0)) fail(ErrorKind::invalid_input, "weights do not have a positive sum");
    for (auto& a : atoms) a.weight /= total;
    return DiracMixture(std::move(atoms));
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  int ambient_dim() const { return atoms_.front().point.ambient_dim(); }
  int dim() const { return atoms_.front().point.dim(); }

 private:
  std::vector<Atom> atoms_;
};

/// Curvature bound of G(n,k): 2 in general, 1 when the Grassmannian is a projective space.
inline double curvature_bound(int n, int k) { return std::min(k, n - k) == 1 ? 1.0 : 2.0; }

/// Largest radius for which supports in a ball keep a unique center of mass.
inline double admissible_radius_bound(double kappa) {
  return std::numbers::pi / (4 * std::sqrt(kappa));
}

inline double energy(const Subspace& p, const DiracMixture& mu) {
  double e = 0;
  for (const auto& a : mu.atoms()) {
    const double d = geodesic_distance(p, a.point);
    e += a.weight * d * d;
  }
  return e;
}

inline GrassmannTangent weighted_log_sum(const Subspace& p, const DiracMixture& mu) {
  Mat acc = Mat::Zero(p.ambient_dim(), p.dim());
  for (const auto& a : mu.atoms()) acc += a.weight * log_map(p, a.point).delta;
  return make_tangent(p, acc);
}

inline GrassmannTangent energy_gradient(const Subspace& p, const DiracMixture& mu) {
  require_same_grassmannian(p, mu.atoms().front().point);
  auto g = weighted_log_sum(p, mu);
  g.delta *= -2.0;
  return g;
}

struct KarcherOptions {
  double tol = 1e-10;
  int max_iterations = 10000;
  std::optional<double> kappa;          // defaults to curvature_bound(n, k)
  std::optional<Subspace> center;       // defaults to the first atom
  std::optional<double> radius;         // defaults to the support radius about the center
};

struct MeanReport {
  Subspace mean;
  int iterations = 0;
  double final_gradient_norm = 0;
  Subspace admissible_ball_center;
  double admissible_ball_radius = 0;
  double kappa = 0;
  std::vector<double> energy_trace;
};

/// Returns the radius of the smallest ball about `center` holding every atom.
inline double support_radius(const DiracMixture& mu, const Subspace& center) {
  double r = 0;
  for (const auto& a : mu.atoms()) r = std::max(r, geodesic_distance(center, a.point));
  return r;
}

inline MeanReport karcher_mean(const DiracMixture& mu, const KarcherOptions& opt = {}) {
  MeanReport rep;
  rep.kappa = opt.kappa.value_or(curvature_bound(mu.ambient_dim(), mu.dim()));
  rep.admissible_ball_center = opt.center.value_or(mu.atoms().front().point);
  require_same_grassmannian(rep.admissible_ball_center, mu.atoms().front().point);
  const double support = support_radius(mu, rep.admissible_ball_center);
  rep.admissible_ball_radius = opt.radius.value_or(support);
  const double bound = admissible_radius_bound(rep.kappa);
  if (support > rep.admissible_ball_radius + 1e-15)
    fail(ErrorKind::inadmissible_support,
         "atom at distance " + std::to_string(support) + " lies outside the ball of radius " +
             std::to_string(rep.admissible_ball_radius));
  if (rep.admissible_ball_radius >= bound)
    fail(ErrorKind::inadmissible_support,
         "support radius " + std::to_string(rep.admissible_ball_radius) +
             " is not below π/(4√κ) = " + std::to_string(bound));

  Subspace p = rep.admissible_ball_center;
  double e = energy(p, mu);
  rep.energy_trace.push_back(e);
  for (;;) {
    const GrassmannTangent step = weighted_log_sum(p, mu);
    rep.final_gradient_norm = 2.0 * step.norm();
    if (rep.final_gradient_norm <= opt.tol) break;
    if (rep.iterations >= opt.max_iterations)
      fail(ErrorKind::non_convergence,
           "gradient norm " + std::to_string(rep.final_gradient_norm) + " after " +
               std::to_string(rep.iterations) + " iterations");
    double alpha = 1.0;
    Subspace next;
    double e_next = 0;
    for (int halvings = 0;; ++halvings) {
      next = exp_map(p, GrassmannTangent{step.base, alpha * step.delta});
      e_next = energy(next, mu);
      // Increases at the roundoff level are not a reason to shorten the step.
      if (e_next <= e * (1 + 1e-14) || halvings >= 60) break;
      alpha *= 0.5;
    }
    p = next;
    e = e_next;
    rep.energy_trace.push_back(e);
    ++rep.iterations;
  }
  rep.mean = p;
  return rep;
}

/// C(κ, ϱ) = 1 + tan(2√κ ϱ) / (√κ ϱ); tends to 3 as ϱ → 0.
inline double stability_constant(double kappa, double rho) {
  if (!(kappa > 0) || !(rho >= 0)) fail(ErrorKind::invalid_input, "need kappa > 0, rho >= 0");
  const double bound = admissible_radius_bound(kappa);
  if (rho >= bound) fail(ErrorKind::regime, "rho must stay below π/(4√κ)");
  const double s = std::sqrt(kappa) * rho;
  if (s < 1e-6) return 3.0 + 8.0 * s * s / 3.0;
  return 1.0 + std::tan(2 * s) / s;
}

struct StabilityReport {
  double lhs = 0;
  double rhs = 0;
  double constant = 0;
  bool holds = false;
};

/// Compares d(mean(mu1), mean(mu2)) with C(κ,ϱ) · Σ_x d(mean(mu2), x) |w1(x) - w2(x)|.
inline StabilityReport verify_stability(const DiracMixture& mu1, const DiracMixture& mu2,
                                        double kappa, double rho,
                                        std::optional<Subspace> center = std::nullopt) {
  require_same_grassmannian(mu1.atoms().front().point, mu2.atoms().front().point);
  const Subspace c = center.value_or(mu1.atoms().front().point);
  for (const auto* mu : {&mu1, &mu2})
    if (support_radius(*mu, c) >= rho)
      fail(ErrorKind::inadmissible_support, "supports are not inside the common ball");
  KarcherOptions opt;
  opt.kappa = kappa;
  opt.center = c;
  opt.radius = rho;
  opt.tol = 1e-12;
  const Subspace q1 = karcher_mean(mu1, opt).mean;
  const Subspace q2 = karcher_mean(mu2, opt).mean;

  // Merge the two supports, identifying atoms that are the same subspace.
  std::vector<Subspace> pts;
  std::vector<double> w1, w2;
  auto slot = [&](const Subspace& s) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (same_subspace(pts[i], s)) return i;
    pts.push_back(s);
    w1.push_back(0);
    w2.push_back(0);
    return pts.size() - 1;
  };
  for (const auto& a : mu1.atoms()) w1[slot(a.point)] += a.weight;
  for (const auto& a : mu2.atoms()) w2[slot(a.point)] += a.weight;

  StabilityReport rep;
  rep.constant = stability_constant(kappa, rho);
  rep.lhs = geodesic_distance(q1, q2);
  double acc = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    acc += geodesic_distance(q2, pts[i]) * std::abs(w1[i] - w2[i]);
  rep.rhs = rep.constant * acc;
  rep.holds = rep.lhs <= rep.rhs + 1e-9;
  return rep;
}

}  // namespace lipimm
