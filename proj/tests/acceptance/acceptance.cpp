// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../karcher_oracles.hpp"
#include "../support.hpp"
#include "lipimm/correspond.hpp"
#include "lipimm/karcher.hpp"
#include "lipimm/nets.hpp"
#include "lipimm/normals.hpp"
#include "lipimm/shapes.hpp"
#include "lipimm/tubular.hpp"

using namespace lipimm;
using namespace lipimm::testing;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kR = 0.2, kLambda = 0.25;

/// Collects failed checks for one criterion together with a short summary.
class Ledger {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  template <class T>
  void note(const std::string& key, T value) {
    std::ostringstream ss;
    ss.precision(6);
    ss << key << "=" << value;
    notes_.push_back(ss.str());
  }
  bool ok() const { return failures_.empty(); }
  std::string text() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : " ") + n;
    for (const auto& f : failures_) s += " [failed: " + f + "]";
    return s;
  }

 private:
  std::vector<std::string> failures_, notes_;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<void(Ledger&)> body;
};

NetOptions net_level(int l, std::vector<int> z = {3}) {
  NetOptions o;
  o.level = l;
  o.z_levels = std::move(z);
  return o;
}

std::vector<int> spread(int size, int count) {
  std::vector<int> out;
  if (count >= size) {
    for (int i = 0; i < size; ++i) out.push_back(i);
    return out;
  }
  for (int i = 0; i < count; ++i) out.push_back(static_cast<int>(static_cast<long>(i) * size / count));
  return out;
}

DiracMixture random_mixture(std::mt19937_64& rng, const Subspace& centre, int atoms, double radius) {
  std::uniform_real_distribution<double> w(0.1, 1.0);
  std::vector<Atom> a;
  a.push_back({centre, w(rng)});
  for (int i = 1; i < atoms; ++i) a.push_back({random_within(rng, centre, radius), w(rng)});
  return DiracMixture::normalized(std::move(a));
}

// ---------------------------------------------------------------------------

void grassmann_suite(Ledger& L) {
  std::mt19937_64 rng(101);
  int violations = 0, triples = 0;
  double worst_roundtrip = 0, worst_line_oracle = 0;
  for (auto [n, k] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{5, 2}}) {
    for (int t = 0; t < 200; ++t, ++triples) {
      const Subspace a = random_subspace(rng, n, k), b = random_subspace(rng, n, k), c = random_subspace(rng, n, k);
      const double ab = geodesic_distance(a, b), ba = geodesic_distance(b, a);
      const double ac = geodesic_distance(a, c), cb = geodesic_distance(c, b);
      if (std::abs(ab - ba) > 1e-12) ++violations;
      if (geodesic_distance(a, a) > 1e-7 || !(ab > 0)) ++violations;
      if (ab > ac + cb + 1e-12) ++violations;
      const Mat q = random_orthogonal(rng, n);
      if (std::abs(geodesic_distance(apply(q, a), apply(q, b)) - ab) > 1e-10) ++violations;
      if (k == 1) {
        const double oracle = std::acos(std::min(1.0, std::abs(a.frame().col(0).dot(b.frame().col(0)))));
        worst_line_oracle = std::max(worst_line_oracle, std::abs(oracle - ab));
      }

      GrassmannTangent v = make_tangent(a, gaussian(rng, n, k));
      Eigen::JacobiSVD<Mat> svd(v.delta);
      v.delta *= (kPi / 2 - 0.1) * std::uniform_real_distribution<double>(0, 1)(rng) / svd.singularValues()(0);
      const GrassmannTangent w = log_map(a, exp_map(a, v));
      worst_roundtrip = std::max(worst_roundtrip, (w.delta - v.delta).norm());
    }
  }
  L.note("triples", triples);
  L.note("axiom_violations", violations);
  L.note("exp_log_roundtrip", worst_roundtrip);
  L.note("line_oracle_gap", worst_line_oracle);
  L.require(violations == 0, "metric axioms / invariance");
  L.require(worst_roundtrip < 1e-9, "exp/log round trip < 1e-9");
  L.require(worst_line_oracle < 1e-7, "line distance oracle");
}

void karcher_oracle(Ledger& L) {
  std::mt19937_64 rng(202);
  const double step = 1e-3;
  double worst_grid = 0;
  for (int t = 0; t < 20; ++t) {
    const Subspace c = random_subspace(rng, 3, 1);
    const DiracMixture mu = random_mixture(rng, c, 3, 0.4);
    std::vector<Eigen::Vector3d> lines;
    std::vector<double> w;
    for (const auto& a : mu.atoms()) {
      lines.push_back(a.point.frame().col(0));
      w.push_back(a.weight);
    }
    const Eigen::Vector3d g = grid_mean_line(lines, w, c.frame().col(0), 0.45, step);
    worst_grid = std::max(worst_grid, geodesic_distance(karcher_mean(mu).mean, orthonormalize(Mat(g))));
  }

  const double h = 1e-5;
  double worst_fd = 0;
  int configs = 0;
  for (auto [n, k] : {std::pair{3, 1}, std::pair{4, 2}}) {
    for (int t = 0; t < 50; ++t, ++configs) {
      const Subspace c = random_subspace(rng, n, k);
      const DiracMixture mu = random_mixture(rng, c, 4, 0.5);
      const Subspace p = random_within(rng, c, 0.3);
      GrassmannTangent v = make_tangent(p, gaussian(rng, n, k));
      v.delta /= v.norm();
      GrassmannTangent plus = v, minus = v;
      plus.delta *= h;
      minus.delta *= -h;
      const double fd = (energy(exp_map(p, plus), mu) - energy(exp_map(p, minus), mu)) / (2 * h);
      const double analytic = (energy_gradient(p, mu).delta.array() * v.delta.array()).sum();
      worst_fd = std::max(worst_fd, std::abs(fd - analytic) / std::max(1e-3, std::abs(analytic)));
    }
  }
  L.note("grid_gap", worst_grid);
  L.note("gradient_rel_err", worst_fd);
  L.note("fd_configs", configs);
  L.require(worst_grid <= step, "mean within grid resolution");
  L.require(worst_fd < 1e-5, "gradient vs central differences");
}

void stability(Ledger& L) {
  const double C = stability_constant(2, kPi / 6);
  L.note("C(2,pi/6)", C);
  L.require(C > 15.99 && C < 16.0, "constant in (15.99, 16.00)");
  std::mt19937_64 rng(303);
  int violations = 0;
  double worst_ratio = 0;
  for (int t = 0; t < 200; ++t) {
    const Subspace c = random_subspace(rng, 4, 2);
    const DiracMixture mu1 = random_mixture(rng, c, 4, 0.45), mu2 = random_mixture(rng, c, 3, 0.45);
    const auto r = verify_stability(mu1, mu2, 2, kPi / 6, c);
    if (!r.holds) ++violations;
    if (r.rhs > 0) worst_ratio = std::max(worst_ratio, r.lhs / r.rhs);
  }
  L.note("violations", violations);
  L.note("worst_lhs_over_rhs", worst_ratio);
  L.require(violations == 0, "200 random pairs");
}

void circle_threshold(Ledger& L) {
  const auto f = shapes::circle(1.0, 4096);
  const auto pass = check_r_lambda(FramedImmersion(f, 0.2, 0.25));
  const auto fail = check_r_lambda(FramedImmersion(f, 0.25, 0.25));
  const double oracle_pass = 0.2 / std::sqrt(1 - 0.04), oracle_fail = 0.25 / std::sqrt(1 - 0.0625);
  L.note("worst@0.2", pass.worst_lambda);
  L.note("worst@0.25", fail.worst_lambda);
  L.require(pass.pass, "passes at (0.2, 0.25)");
  L.require(!fail.pass, "fails at (0.25, 0.25)");
  L.require(std::abs(pass.worst_lambda - 0.204124) <= 1e-3, "0.204124 +- 1e-3");
  L.require(std::abs(fail.worst_lambda - 0.258199) <= 1e-3, "0.258199 +- 1e-3");
  L.require(std::abs(pass.worst_lambda - oracle_pass) <= 1e-3 && std::abs(fail.worst_lambda - oracle_fail) <= 1e-3,
            "analytic r/sqrt(1-r^2)");
}

void net_bounds(Ledger& L) {
  struct Case {
    const char* name;
    SampledImmersion f;
    int level;
    int pinned_size;
    int pinned_multiplicity;
  };
  const auto circle = shapes::circle(1.0, 4096);
  // the finer torus keeps its sample spacing below delta_2
  const auto torus = shapes::torus(2.0, 0.5, 600, 200), fine_torus = shapes::torus(2.0, 0.5, 1200, 400);
  const std::vector<Case> cases = {{"circle", circle, 1, 117, 1},
                                   {"circle", circle, 2, 409, 2},
                                   {"torus", torus, 1, 11350, 1},
                                   {"torus", fine_torus, 2, 158400, 4}};
  for (const auto& c : cases) {
    FramedImmersion fi(c.f, kR, kLambda);
    const auto net = build_net(fi, net_level(c.level, {c.level}));
    const auto rep = verify_net_bounds(net, c.f);
    const std::string tag = std::string(c.name) + "_l" + std::to_string(c.level);
    L.note(tag + "_size", rep.size);
    L.note(tag + "_mult", rep.worst_multiplicity);
    L.require(rep.size_bound_holds, tag + " size bound");
    L.require(rep.multiplicity_bound_holds, tag + " multiplicity bound");
    L.require(std::abs(rep.multiplicity_bound - std::pow(3 * (1 + kLambda), (c.level + 1) * c.f.m())) < 1e-9,
              tag + " multiplicity formula");
    L.require(rep.size == c.pinned_size, tag + " pinned size");
    L.require(rep.worst_multiplicity == c.pinned_multiplicity, tag + " pinned multiplicity");
  }
}

struct CirclePipeline {
  FramedImmersion fi;
  DeltaNet net;
  NormalAverager avg;
  DirectionField field;
  CirclePipeline()
      : fi(shapes::circle(1.0, 24576), kR, kLambda),
        net(build_net(fi, net_level(5))),
        avg(fi, net),
        field(direction_field(avg)) {}
};

const CirclePipeline& circle_pipeline() {
  static const CirclePipeline p;
  return p;
}

void averaged_field(Ledger& L) {
  const auto& p = circle_pipeline();
  const auto c = constants(1, kLambda, kR);
  const FramedImmersion near(shapes::circle(1.001, 24576), kR, kLambda);
  const auto angle = angle_bound_check(p.avg, p.field, near);
  const auto lip = field_lipschitz_check(p.avg, p.field, spread(p.net.size(), 256));
  L.note("min_S", p.field.min_norm);
  L.note("overlap", p.field.worst_overlap);
  L.note("worst_angle", angle.worst_angle);
  L.note("gamma", c.gamma);
  L.note("L_T", lip.empirical_L);
  L.require(p.field.min_norm >= 1 / (1 + kLambda), "min |S| >= 1/(1+lambda)");
  L.require(std::abs(1 / (1 + kLambda) - 0.8) < 1e-15, "1/(1+lambda) = 0.8");
  L.require(p.field.worst_overlap <= 1e-9, "omega overlap agreement");
  L.require(angle.status == CheckStatus::pass && angle.worst_angle <= c.gamma, "angles <= gamma");
  L.require(std::abs(c.gamma - 0.907888) < 1e-6, "gamma = 0.907888");
  L.require(lip.holds && lip.empirical_L <= 2.7497e6, "Lipschitz of T <= 2.7497e6");
  L.require(std::abs(lip.empirical_L - 1.0) < 0.05, "pinned Lipschitz of T near 1");
}

void tube_suite(Ledger& L) {
  const auto& p = circle_pipeline();
  const int j = 0, q = p.net.point(j);
  const auto patch = extract_graph_patch(p.fi.f(), q, p.fi.plane(q), p.fi.delta(3));
  const auto params = pipeline_tube_params(1, kLambda, kR);
  const auto T = pipeline_field(p.avg, patch, j);
  const auto inj = injectivity_probe(patch, T, params);
  const auto inc = inclusion_probe(patch, T, params, 10000);
  L.note("epsilon", params.epsilon);
  L.note("sigma", params.sigma);
  L.note("trials", inj.trials);
  L.note("collisions", inj.collisions);
  L.note("worst_sep_ratio", inj.worst_separation_ratio);
  L.note("reached", inc.reached);
  L.require(std::abs(params.epsilon - 2.238e-7) < 1e-10, "epsilon = 2.238e-7");
  L.require(std::abs(params.sigma - 5.510e-8) < 1e-11, "sigma = 5.510e-8");
  L.require(inj.trials == 100000 && inj.injective && inj.collisions == 0, "injective on 1e5 trials");
  L.require(inc.in_contract && inc.reached == 10000 && inc.holds, "inclusion reaches 1e4 points");
  L.require(inj.separation_violations == 0 && inj.worst_separation_ratio >= std::cos(params.gamma) - 1e-9,
            "separation |dgraph| >= |x-y| cos gamma");
}

void correspondence(Ledger& L) {
  const int samples = 8192;
  const FramedImmersion f1(shapes::circle(1.0, samples), kR, kLambda);
  const FramedImmersion f2(shapes::circle(1.001, samples), kR, kLambda);
  const auto net = build_net(f1, net_level(4));
  const NormalAverager avg(f1, net);
  const auto field = direction_field(avg);

  CorrespondOptions strict;
  const auto self = build_correspondence(avg, field, f1, strict);
  const double self_err = (self.phi - f1.f().positions()).cwiseAbs().maxCoeff();

  CorrespondOptions empirical;
  empirical.closeness = Closeness::empirical;
  empirical.graph_distance = true;
  const auto c = build_correspondence(avg, field, f2, empirical);
  const auto bij = verify_bijectivity(c);
  const auto lip = worst_reparametrized_lipschitz(c, f1, net);
  L.note("self_error", self_err);
  L.note("max_displacement", c.max_displacement);
  L.note("graph_distance", c.closeness.graph_distance);
  L.note("strict_threshold", c.closeness.graph_threshold);
  L.note("lipschitz", lip.empirical);
  L.note("formula_bound", lip.bound_formula);
  L.require(self_err <= 1e-10, "identity exact to 1e-10");
  L.require(bij.injective && bij.surjective, "sample-scale bijection");
  L.require(std::abs(c.max_displacement - 0.001) <= 1e-4, "displacement 0.001 +- 10%");
  L.require(lip.sharp_holds && lip.empirical <= 3.125, "Lipschitz <= 3.125");
  L.require(lip.holds && std::abs(lip.bound_formula - 1.2543e6) < 1e2, "Lipschitz <= 1.2543e6");
}

void convergence_demo(Ledger& L) {
  std::vector<SampledImmersion> family;
  for (int i = 1; i <= 8; ++i) family.push_back(shapes::circle(1 + std::ldexp(1.0, -i), 8192));
  ConvergenceOptions opt;
  opt.level = 4;
  const auto rep = convergence_harness(family, opt);
  L.note("kept", rep.kept.size());
  L.require(rep.conclusive && rep.kept.size() >= 2, "admissible subsequence");
  if (!rep.conclusive) return;
  double worst_dist = 0, worst_inc = 0;
  for (std::size_t a = 0; a + 1 < rep.decay.size(); ++a) {
    const int i = rep.decay[a].member + 1;
    const double dist = std::ldexp(1.0, -i) - std::ldexp(1.0, -8);
    worst_dist = std::max(worst_dist, std::abs(rep.decay[a].distance_to_limit - dist) / dist);
    if (rep.decay[a + 1].member == rep.decay[a].member + 1) {
      const double inc = std::ldexp(1.0, -(i + 1));
      worst_inc = std::max(worst_inc, std::abs(rep.decay[a].increment - inc) / inc);
    }
  }
  L.note("dist_rel_err", worst_dist);
  L.note("increment_rel_err", worst_inc);
  L.note("limit_worst_lambda", rep.limit_check.worst_lambda);
  L.require(worst_dist <= 0.2, "distances follow 2^-i within 20%");
  L.require(worst_inc <= 0.2, "increments follow 2^-(i+1) within 20%");
  L.require(rep.limit_check.pass && rep.limit_check.injective, "limit passes function check");
  L.require(rep.limit_pass, "limit sandwich");
}

void higher_codim(Ledger& L) {
  // a level-3 net leaves the samples around most q asymmetric
  const FramedImmersion fi(shapes::circle3d(1.0, 0.4, 4096), kR, kLambda);
  const auto net = build_net(fi, net_level(3));
  const NormalSpaces ns(fi, net);
  const auto field = normal_field(ns);
  L.note("min_margin", field.min_margin);
  L.require(field.min_margin > 0, "support within pi/12 with margin");

  // In G(3,2) the mean normal plane is the complement of the mean tangent line.
  const auto& f = fi.f();
  const auto spec = CutoffSpec::for_lambda(kLambda);
  const double d2 = fi.delta(2);
  double worst_grid = 0;
  for (int q : {0, 517, 1500, 2900, 4000}) {
    std::vector<Eigen::Vector3d> lines;
    std::vector<double> w;
    for (int j = 0; j < net.size(); ++j) {
      const double d = (f.position(q) - f.position(net.point(j))).norm();
      if (d >= d2) continue;
      w.push_back(spec.g(d / d2));
      lines.push_back(f.tangent(net.point(j)).col(0));
    }
    const Eigen::Vector3d l = grid_mean_line(lines, w, f.tangent(q).col(0), 0.01, 5e-5);
    worst_grid = std::max(worst_grid, geodesic_distance(field.N[q].complement(), orthonormalize(Mat(l))));
  }
  L.note("grid_gap", worst_grid);
  L.require(worst_grid <= 1e-3, "grid oracle to 1e-3");

  const auto lip = N_lipschitz_check(ns, field, spread(net.size(), 128));
  L.note("L_N", lip.empirical_L);
  L.note("bound", lip.bound_L);
  L.require(lip.holds && std::abs(lip.bound_L - std::pow(4.0, 18) / kR) < 1, "Lipschitz of N <= 4^18/r");

  std::vector<SampledImmersion> family;
  for (int i = 1; i <= 6; ++i) family.push_back(shapes::circle3d(1 + std::ldexp(1.0, -i), 0.4, 4096));
  ConvergenceOptions opt;
  opt.level = 4;
  const auto rep = convergence_harness(family, opt);
  L.note("family_kept", rep.kept.size());
  L.require(rep.conclusive && rep.decay_monotone && rep.limit_pass, "R^3 family converges");
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "grassmann metric suite", 5, grassmann_suite},
      {2, "karcher oracle equivalence", 60, karcher_oracle},
      {3, "stability constant", 120, stability},
      {4, "(r,lambda) threshold on the circle", 10, circle_threshold},
      {5, "net bounds", 60, net_bounds},
      {6, "averaged field", 60, averaged_field},
      {7, "tube suite", 120, tube_suite},
      {8, "correspondence", 60, correspondence},
      {9, "convergence demo", 120, convergence_demo},
      {10, "higher codimension", 180, higher_codim},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Ledger L;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(L);
    } catch (const std::exception& e) {
      L.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    L.require(secs < c.budget_seconds, "runtime budget " + std::to_string(static_cast<int>(c.budget_seconds)) + " s");
    if (!L.ok()) ++failed;
    std::printf("criterion %2d %-36s %s  %7.2f s  %s\n", c.id, c.name, L.ok() ? "PASS" : "FAIL", secs,
                L.text().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
