#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "lipimm/immersion.hpp"
#include "lipimm/parallel.hpp"

namespace lipimm {

struct NetOptions {
  int level = 5;
  /// Levels ι whose intersection sets Z_ι(j) are stored; empty means 0..level.
  std::vector<int> z_levels;
};

/// A δ_l-net: base samples q_1..q_s whose δ_l-sets cover every sample, with the
/// δ_ι-sets and intersection structure needed downstream.
class DeltaNet {
 public:
  int level() const { return level_; }
  double r() const { return r_; }
  double lambda() const { return lambda_; }
  int m() const { return m_; }
  int size() const { return static_cast<int>(points_.size()); }
  /// Sample index of q_j.
  int point(int j) const { return points_.at(j); }
  const std::vector<int>& points() const { return points_; }
  std::int64_t point_id(int j) const { return ids_.at(j); }
  const std::vector<std::int64_t>& point_ids() const { return ids_; }
  /// Net index whose base sample has index `sample`, or -1.
  int index_of_sample(int sample) const {
    auto it = by_sample_.find(sample);
    return it == by_sample_.end() ? -1 : it->second;
  }

  bool has_sets(int iota) const { return sets_.count(iota) > 0; }
  /// U_{δ_ι, q_j} as sorted sample indices.
  const std::vector<int>& set(int iota, int j) const { return sets_at(iota).at(j); }
  const std::vector<std::vector<int>>& sets(int iota) const { return sets_at(iota); }

  bool has_z(int iota) const { return z_.count(iota) > 0; }
  std::vector<int> z_levels() const {
    std::vector<int> out;
    for (const auto& [iota, _] : z_) out.push_back(iota);
    return out;
  }
  const std::vector<int>& z_set(int iota, int j) const {
    if (iota < 0 || iota > level_) fail(ErrorKind::invalid_input, "iota out of range");
    auto it = z_.find(iota);
    if (it == z_.end()) fail(ErrorKind::invalid_input, "Z sets at level " + std::to_string(iota) + " were not built");
    if (j < 0 || j >= size()) fail(ErrorKind::invalid_input, "net index out of range");
    return it->second[j];
  }

  /// Net points whose δ₂-set contains the sample with index `p`.
  const std::vector<int>& z_of_index(int p) const { return cover2_.at(p); }

 private:
  friend DeltaNet net_from_points(const FramedImmersion&, std::vector<int>, const NetOptions&);
  const std::vector<std::vector<int>>& sets_at(int iota) const {
    auto it = sets_.find(iota);
    if (it == sets_.end()) fail(ErrorKind::invalid_input, "sets at level " + std::to_string(iota) + " were not built");
    return it->second;
  }

  int level_ = 0, m_ = 0;
  double r_ = 0, lambda_ = 0;
  std::vector<int> points_;
  std::vector<std::int64_t> ids_;
  std::map<int, int> by_sample_;
  std::map<int, std::vector<std::vector<int>>> sets_;
  std::map<int, std::vector<std::vector<int>>> z_;
  std::vector<std::vector<int>> cover2_;
};

namespace detail {

/// For each sample, the net indices whose set contains it.
inline std::vector<std::vector<int>> cover_lists(const std::vector<std::vector<int>>& sets, int samples) {
  std::vector<std::vector<int>> cover(samples);
  for (int j = 0; j < static_cast<int>(sets.size()); ++j)
    for (int p : sets[j]) cover[p].push_back(j);
  return cover;
}

// Z(j) = union of the cover lists over U(j); exact and needs no geometric pruning.
inline std::vector<std::vector<int>> intersection_sets(const std::vector<std::vector<int>>& sets, int samples) {
  const auto cover = cover_lists(sets, samples);
  std::vector<std::vector<int>> z(sets.size());
  parallel_for(sets.size(), [&](std::size_t j) {
    auto& mk = fresh_marks(sets.size());
    for (int p : sets[j])
      for (int k : cover[p])
        if (mk.stamp[k] != mk.gen) {
          mk.stamp[k] = mk.gen;
          z[j].push_back(k);
        }
    std::sort(z[j].begin(), z[j].end());
  });
  return z;
}

}  // namespace detail

/// Assembles a net over given base samples: stores δ_ι-sets for ι in 1..l+1 and
/// the requested Z levels, then asserts cover at every ι ≤ l and δ_{l+1} separation.
inline DeltaNet net_from_points(const FramedImmersion& fi, std::vector<int> points, const NetOptions& opt) {
  if (opt.level < 1) fail(ErrorKind::invalid_input, "net level must be at least 1");
  const auto& f = fi.f();
  DeltaNet net;
  net.level_ = opt.level;
  net.m_ = f.m();
  net.r_ = fi.r();
  net.lambda_ = fi.lambda();
  net.points_ = std::move(points);
  for (int j = 0; j < net.size(); ++j) {
    const int q = net.points_[j];
    if (q < 0 || q >= f.size()) fail(ErrorKind::invalid_input, "net point is not a sample");
    if (!net.by_sample_.emplace(q, j).second) fail(ErrorKind::invalid_input, "repeated net point", f.id(q));
    net.ids_.push_back(f.id(q));
  }

  std::vector<int> z_levels = opt.z_levels;
  if (z_levels.empty()) {
    z_levels.resize(opt.level + 1);
    std::iota(z_levels.begin(), z_levels.end(), 0);
  }
  std::set<int> levels{2};
  for (int i = 1; i <= opt.level + 1; ++i) levels.insert(i);
  for (int i : z_levels) {
    if (i < 0 || i > opt.level) fail(ErrorKind::invalid_input, "Z level out of range");
    levels.insert(i);
  }
  for (int iota : levels) {
    auto& sets = net.sets_[iota];
    sets.resize(net.size());
    const double rho = fi.delta(iota);
    parallel_for(net.size(), [&](std::size_t j) { sets[j] = fi.component(net.points_[j], rho); });
  }

  for (int iota = 0; iota <= opt.level; ++iota) {
    if (!net.has_sets(iota)) continue;
    std::vector<char> covered(f.size(), 0);
    for (const auto& s : net.sets(iota))
      for (int p : s) covered[p] = 1;
    for (int p = 0; p < f.size(); ++p)
      if (!covered[p])
        fail(ErrorKind::invariant_violation,
             "sample not covered by the δ" + std::to_string(iota) + "-sets of the net", f.id(p));
  }
  std::vector<int> owner(f.size(), -1);
  const auto& sep = net.sets(opt.level + 1);
  for (int j = 0; j < net.size(); ++j)
    for (int p : sep[j]) {
      if (owner[p] >= 0)
        fail(ErrorKind::invariant_violation,
             "δ_{l+1}-sets of net points " + std::to_string(net.ids_[owner[p]]) + " and " +
                 std::to_string(net.ids_[j]) + " overlap",
             f.id(p));
      owner[p] = j;
    }

  for (int iota : z_levels) net.z_[iota] = detail::intersection_sets(net.sets(iota), f.size());
  net.cover2_ = detail::cover_lists(net.sets(2), f.size());
  return net;
}

/// Greedy construction: scan samples by increasing id and add each one that the
/// δ_l-sets chosen so far do not cover.
inline DeltaNet build_net(const FramedImmersion& fi, const NetOptions& opt = {}) {
  if (opt.level < 1) fail(ErrorKind::invalid_input, "net level must be at least 1");
  const auto& f = fi.f();
  std::vector<int> order(f.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return f.id(a) < f.id(b); });
  std::vector<char> covered(f.size(), 0);
  std::vector<int> points;
  const double rho = fi.delta(opt.level);
  for (int q : order) {
    if (covered[q]) continue;
    points.push_back(q);
    for (int p : fi.component(q, rho)) covered[p] = 1;
  }
  return net_from_points(fi, std::move(points), opt);
}

/// Net by base sample ids, e.g. read back from a file.
inline DeltaNet net_from_ids(const FramedImmersion& fi, const std::vector<std::int64_t>& ids, const NetOptions& opt) {
  std::vector<int> points;
  points.reserve(ids.size());
  for (auto id : ids) points.push_back(fi.f().index_of(id));
  return net_from_points(fi, std::move(points), opt);
}

struct NetBoundsReport {
  int size = 0;
  double size_bound = 0;
  bool size_bound_holds = false;
  int worst_multiplicity = 0;
  std::int64_t worst_sample = -1;
  double multiplicity_bound = 0;
  bool multiplicity_bound_holds = false;
};

inline double net_size_bound(const DeltaNet& net, double volume) {
  return std::pow(delta(net.level() + 1, net.r(), net.lambda()), -net.m()) * volume;
}

inline double net_multiplicity_bound(const DeltaNet& net) {
  return std::pow(3 * (1 + net.lambda()), (net.level() + 1) * net.m());
}

inline NetBoundsReport verify_net_bounds(const DeltaNet& net, const SampledImmersion& f) {
  NetBoundsReport rep;
  rep.size = net.size();
  rep.size_bound = net_size_bound(net, f.volume());
  rep.size_bound_holds = rep.size <= rep.size_bound;
  rep.multiplicity_bound = net_multiplicity_bound(net);
  for (int p = 0; p < f.size(); ++p) {
    const int c = static_cast<int>(net.z_of_index(p).size());
    if (c > rep.worst_multiplicity) {
      rep.worst_multiplicity = c;
      rep.worst_sample = f.id(p);
    }
  }
  rep.multiplicity_bound_holds = rep.worst_multiplicity <= rep.multiplicity_bound;
  return rep;
}

/// Z(p) for the sample with id `p`: net indices k with p ∈ U_{δ₂, q_k}.
inline const std::vector<int>& z_of_point(const DeltaNet& net, const SampledImmersion& f, std::int64_t p) {
  return net.z_of_index(f.index_of(p));
}

struct InclusionChainReport {
  int pairs_checked = 0;
  int violations = 0;
};

/// Over net pairs: U_{δ_{ι+1},q_j} ∩ U_{δ_{ι+1},q_k} ≠ ∅ implies U_{δ_{ι+1},q_k} ⊂ U_{δ_ι,q_j}.
inline InclusionChainReport verify_inclusion_chain(const DeltaNet& net, int iota, int samples) {
  const auto& fine = net.sets(iota + 1);
  const auto& coarse = net.sets(iota);
  const auto z = detail::intersection_sets(fine, samples);
  std::vector<int> checked(net.size(), 0), bad(net.size(), 0);
  parallel_for(net.size(), [&](std::size_t j) {
    for (int k : z[j]) {
      ++checked[j];
      if (!std::includes(coarse[j].begin(), coarse[j].end(), fine[k].begin(), fine[k].end())) ++bad[j];
    }
  });
  InclusionChainReport rep;
  for (int j = 0; j < net.size(); ++j) {
    rep.pairs_checked += checked[j];
    rep.violations += bad[j];
  }
  return rep;
}

}  // namespace lipimm
