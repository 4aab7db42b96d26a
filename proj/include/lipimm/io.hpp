#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lipimm/correspond.hpp"
#include "lipimm/immersion.hpp"
#include "lipimm/karcher.hpp"
#include "lipimm/nets.hpp"
#include "lipimm/normals.hpp"
#include "lipimm/shapes.hpp"
#include "lipimm/tubular.hpp"

namespace lipimm {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::invalid_input, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path);
  out << text;
}

inline Json parse_json(const std::string& text, const std::string& what = "input") {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorKind::invalid_input, what + " is not valid JSON: " + e.what());
  }
}

inline Json read_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

inline void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// JSON has no infinities; non-finite values become null.
inline Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

/// Columns of a matrix as an array of rows, so an n×k frame reads as n rows.
inline Json mat_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

inline Mat mat_from_json(const Json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array())
    fail(ErrorKind::invalid_input, what + " must be a non-empty array of rows");
  const auto r = rows.size(), c = rows[0].size();
  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (!rows[i].is_array() || rows[i].size() != c) fail(ErrorKind::invalid_input, what + " has ragged rows");
    for (std::size_t j = 0; j < c; ++j) {
      if (!rows[i][j].is_number()) fail(ErrorKind::invalid_input, what + " has a non-numeric entry");
      m(i, j) = rows[i][j].get<double>();
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Immersion manifests

template <class T>
T json_get(const Json& j, const char* key, const std::string& what) {
  if (!j.contains(key)) fail(ErrorKind::invalid_input, what + " is missing \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorKind::invalid_input, what + " has a malformed \"" + key + "\"");
  }
}

inline shapes::ShapeSpec shape_spec_from_json(const Json& j) {
  shapes::ShapeSpec s;
  s.name = json_get<std::string>(j, "shape", "manifest");
  if (j.contains("params")) {
    if (!j["params"].is_object()) fail(ErrorKind::invalid_input, "manifest params must be an object");
    for (const auto& [k, v] : j["params"].items()) {
      if (!v.is_number()) fail(ErrorKind::invalid_input, "shape parameter " + k + " must be a number");
      s.params[k] = v.get<double>();
    }
  }
  if (j.contains("samples")) {
    const auto& n = j["samples"];
    if (n.is_number_integer()) s.samples = {n.get<int>()};
    else if (n.is_array()) s.samples = n.get<std::vector<int>>();
    else fail(ErrorKind::invalid_input, "samples must be an integer or a pair");
    for (int c : s.samples)
      if (c < 3) fail(ErrorKind::invalid_input, "sample counts must be at least 3");
  }
  return s;
}

inline Json shape_manifest(const shapes::ShapeSpec& s) {
  const auto f = shapes::make_shape(s);
  Json j;
  j["m"] = f.m();
  j["n"] = f.n();
  j["shape"] = s.name;
  j["params"] = Json::object();
  for (const auto& [k, v] : s.params) j["params"][k] = v;
  if (s.samples.size() == 1) j["samples"] = s.samples[0];
  else if (!s.samples.empty()) j["samples"] = s.samples;
  return j;
}

/// Raw-data manifest: positions, ids, and for surfaces the triangles.
inline Json points_manifest(const SampledImmersion& f) {
  Json j;
  j["m"] = f.m();
  j["n"] = f.n();
  j["closed"] = true;
  j["points"] = mat_json(f.positions().transpose());
  j["ids"] = f.ids();
  if (f.m() == 2) j["cells"] = f.cells();
  return j;
}

/// A closed polyline through the columns in order.
inline SampledImmersion closed_polyline(Mat X, std::vector<std::int64_t> ids = {}) {
  std::vector<std::vector<int>> cells;
  const int count = static_cast<int>(X.cols());
  for (int i = 0; i < count; ++i) cells.push_back({i, (i + 1) % count});
  return SampledImmersion(1, std::move(X), std::move(cells), std::move(ids));
}

inline SampledImmersion immersion_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::invalid_input, "manifest must be a JSON object");
  const int m = json_get<int>(j, "m", "manifest");
  const int n = json_get<int>(j, "n", "manifest");
  if (j.contains("shape")) {
    const auto f = shapes::make_shape(shape_spec_from_json(j));
    if (f.m() != m || f.n() != n)
      fail(ErrorKind::dimension_mismatch, "manifest dimensions (" + std::to_string(m) + ", " + std::to_string(n) +
                                              ") do not match the shape");
    return f;
  }
  if (!j.contains("points")) fail(ErrorKind::invalid_input, "manifest needs either \"shape\" or \"points\"");
  if (j.contains("closed") && !j["closed"].get<bool>())
    fail(ErrorKind::invalid_input, "only closed manifolds are supported");
  const Mat X = mat_from_json(j["points"], "points").transpose();
  if (X.rows() != n) fail(ErrorKind::dimension_mismatch, "points do not have n coordinates");
  std::vector<std::int64_t> ids;
  if (j.contains("ids")) ids = json_get<std::vector<std::int64_t>>(j, "ids", "manifest");
  if (m == 1 && !j.contains("cells")) return closed_polyline(X, ids);
  if (!j.contains("cells")) fail(ErrorKind::invalid_input, "surface manifests need \"cells\"");
  auto cells = json_get<std::vector<std::vector<int>>>(j, "cells", "manifest");
  return SampledImmersion(m, X, std::move(cells), std::move(ids));
}

/// CSV with a header line and one sample per row: id, x0, x1, ... (closed curves only).
inline SampledImmersion immersion_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::invalid_input, "empty CSV");
  std::vector<std::int64_t> ids;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        if (first) {
          ids.push_back(std::stoll(cell, &used));
        } else {
          row.push_back(std::stod(cell, &used));
        }
      } catch (const std::exception&) {
        fail(ErrorKind::invalid_input, "CSV entry '" + cell + "' is not a number");
      }
      first = false;
    }
    if (!rows.empty() && row.size() != rows[0].size()) fail(ErrorKind::invalid_input, "CSV rows differ in length");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows[0].empty()) fail(ErrorKind::invalid_input, "CSV has no samples");
  Mat X(rows[0].size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < rows[i].size(); ++d) X(d, i) = rows[i][d];
  return closed_polyline(X, ids);
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string samples_csv(const SampledImmersion& f) {
  std::string out = "id";
  for (int d = 0; d < f.n(); ++d) out += ",x" + std::to_string(d);
  out += "\n";
  for (int i = 0; i < f.size(); ++i) {
    out += std::to_string(f.id(i));
    for (int d = 0; d < f.n(); ++d) out += "," + fmt(f.positions()(d, i));
    out += "\n";
  }
  return out;
}

inline SampledImmersion load_immersion(const std::string& path) {
  const std::string text = read_text_file(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return immersion_from_csv(text);
  return immersion_from_json(parse_json(text, path));
}

/// A family file: {"members": [manifest, ...]} or a bare array of manifests.
inline std::vector<SampledImmersion> family_from_json(const Json& j) {
  const Json& list = j.is_array() ? j : j.contains("members") ? j["members"] : Json();
  if (!list.is_array() || list.empty()) fail(ErrorKind::invalid_input, "family must list its members");
  std::vector<SampledImmersion> out;
  for (const auto& m : list) out.push_back(immersion_from_json(m));
  return out;
}

// ---------------------------------------------------------------------------
// Nets

inline Json net_to_json(const DeltaNet& net) {
  Json j;
  j["level"] = net.level();
  j["r"] = net.r();
  j["lambda"] = net.lambda();
  j["m"] = net.m();
  j["point_ids"] = net.point_ids();
  Json z = Json::object();
  for (int iota : net.z_levels()) {
    Json sets = Json::array();
    for (int k = 0; k < net.size(); ++k) {
      std::vector<std::int64_t> ids;
      for (int i : net.z_set(iota, k)) ids.push_back(net.point_id(i));
      sets.push_back(ids);
    }
    z[std::to_string(iota)] = sets;
  }
  j["z_sets"] = z;
  return j;
}

inline DeltaNet net_from_json(const FramedImmersion& fi, const Json& j) {
  NetOptions opt;
  opt.level = json_get<int>(j, "level", "net");
  if (std::abs(json_get<double>(j, "r", "net") - fi.r()) > 1e-15 ||
      std::abs(json_get<double>(j, "lambda", "net") - fi.lambda()) > 1e-15)
    fail(ErrorKind::invalid_input, "net was built for a different (r, lambda)");
  opt.z_levels.clear();
  if (j.contains("z_sets"))
    for (const auto& [k, v] : j["z_sets"].items()) opt.z_levels.push_back(std::stoi(k));
  return net_from_ids(fi, json_get<std::vector<std::int64_t>>(j, "point_ids", "net"), opt);
}

// ---------------------------------------------------------------------------
// Dirac mixtures on a Grassmannian: {"atoms": [{"frame": [[...], ...], "weight": w}, ...]}
// with each frame given as n rows of k entries.

inline DiracMixture mixture_from_json(const Json& j) {
  const Json& list = j.is_array() ? j : j.contains("atoms") ? j["atoms"] : Json();
  if (!list.is_array() || list.empty()) fail(ErrorKind::invalid_input, "atoms must be a non-empty array");
  std::vector<Atom> atoms;
  for (const auto& a : list) {
    if (!a.is_object()) fail(ErrorKind::invalid_input, "each atom must be an object");
    const double w = a.contains("weight") ? json_get<double>(a, "weight", "atom") : 1.0;
    atoms.push_back({orthonormalize(mat_from_json(json_get<Json>(a, "frame", "atom"), "atom frame")), w});
  }
  return DiracMixture::normalized(std::move(atoms));
}

inline Json mixture_to_json(const DiracMixture& mu) {
  Json list = Json::array();
  for (const auto& a : mu.atoms()) list.push_back({{"frame", mat_json(a.point.frame())}, {"weight", a.weight}});
  return {{"atoms", list}};
}

// ---------------------------------------------------------------------------
// Reports

inline Json to_json(const RLambdaReport& r, const SampledImmersion& f) {
  Json j;
  j["pass"] = r.pass;
  j["worst_lambda"] = number(r.worst_lambda);
  j["worst_sample"] = r.worst_sample >= 0 ? Json(f.id(r.worst_sample)) : Json(nullptr);
  return j;
}

inline Json to_json(const FunctionCheckReport& r, const SampledImmersion& f) {
  Json j;
  j["pass"] = r.pass;
  j["worst_lambda"] = number(r.worst_lambda);
  j["worst_sample"] = r.worst_sample >= 0 ? Json(f.id(r.worst_sample)) : Json(nullptr);
  j["injective"] = r.injective;
  return j;
}

inline Json to_json(const NetBoundsReport& r) {
  return {{"size", r.size},
          {"size_bound", number(r.size_bound)},
          {"size_bound_holds", r.size_bound_holds},
          {"worst_multiplicity", r.worst_multiplicity},
          {"worst_sample", r.worst_sample},
          {"multiplicity_bound", number(r.multiplicity_bound)},
          {"multiplicity_bound_holds", r.multiplicity_bound_holds}};
}

inline Json to_json(const ConstantsBundle& c) {
  return {{"m", c.m},
          {"lambda", c.lambda},
          {"r", c.r},
          {"L_codim1", number(c.L_codim1)},
          {"L_highercodim", number(c.L_highercodim)},
          {"gamma", c.gamma},
          {"tan_gamma", c.tan_gamma},
          {"epsilon", number(c.epsilon)},
          {"sigma", number(c.sigma)},
          {"Lambda", number(c.Lambda)},
          {"sharp_Lambda", c.sharp_Lambda}};
}

inline Json to_json(const AngleBoundReport& r) {
  return {{"status", status_name(r.status)},
          {"precondition_worst", number(r.precondition_worst)},
          {"precondition_bound", r.precondition_bound},
          {"worst_angle", number(r.worst_angle)},
          {"gamma", r.gamma},
          {"charts", r.charts},
          {"worst_chart", r.worst_chart}};
}

inline Json to_json(const LipschitzReport& r) {
  return {{"empirical_L", number(r.empirical_L)},
          {"bound_L", number(r.bound_L)},
          {"holds", r.holds},
          {"worst_chart", r.worst_chart}};
}

inline Json to_json(const TubeParams& p) {
  return {{"epsilon", number(p.epsilon)}, {"sigma", number(p.sigma)}, {"rho", p.rho},
          {"gamma", p.gamma},             {"L", number(p.L)},         {"lambda", p.lambda},
          {"branch", p.branch()}};
}

inline Json to_json(const InjectivityReport& r) {
  return {{"trials", r.trials},
          {"epsilon", number(r.epsilon)},
          {"injective", r.injective},
          {"collisions", r.collisions},
          {"min_separation", number(r.min_separation)},
          {"min_separation_ratio", number(r.min_separation_ratio)},
          {"separation_pairs", r.separation_pairs},
          {"separation_violations", r.separation_violations},
          {"separation_bound", r.separation_bound},
          {"worst_separation_ratio", number(r.worst_separation_ratio)}};
}

inline Json to_json(const InclusionReport& r) {
  return {{"points", r.points},           {"reached", r.reached},   {"radius", number(r.radius)},
          {"in_contract", r.in_contract}, {"max_abs_t", number(r.max_abs_t)}, {"epsilon", number(r.epsilon)},
          {"holds", r.holds}};
}

inline Json to_json(const MeanReport& r) {
  return {{"mean", mat_json(r.mean.frame())},
          {"iterations", r.iterations},
          {"final_gradient_norm", number(r.final_gradient_norm)},
          {"admissible_ball_center", mat_json(r.admissible_ball_center.frame())},
          {"admissible_ball_radius", r.admissible_ball_radius},
          {"kappa", r.kappa},
          {"energy_trace", r.energy_trace}};
}

inline Json to_json(const ClosenessReport& r) {
  Json j = {{"policy", closeness_name(r.policy)},
            {"met", r.met},
            {"reason", r.reason},
            {"normal_distance", number(r.normal_distance)},
            {"normal_threshold", r.normal_threshold},
            {"graph_threshold", number(r.graph_threshold)}};
  if (r.r_lambda_checked) {
    j["source_worst_lambda"] = number(r.source_worst_lambda);
    j["target_worst_lambda"] = number(r.target_worst_lambda);
  }
  if (r.graph_distance_computed) {
    j["graph_distance"] = number(r.graph_distance);
    j["graph_distance_partial"] = r.graph_distance_partial;
  }
  return j;
}

inline Json to_json(const Correspondence& c) {
  return {{"closeness", to_json(c.closeness)},
          {"samples", c.source.size()},
          {"max_displacement", number(c.max_displacement)},
          {"max_line_residual", number(c.max_line_residual)},
          {"max_hit_radius", number(c.max_hit_radius)},
          {"hit_radius_bound", c.hit_radius_bound},
          {"chart_disagreement", number(c.chart_disagreement)},
          {"charts_compared", c.charts_compared},
          {"max_iterations", c.max_iterations},
          {"worst_contraction", number(c.worst_contraction)}};
}

inline Json to_json(const BijectivityReport& r) {
  return {{"injective", r.injective},
          {"surjective", r.surjective},
          {"min_separation", number(r.min_separation)},
          {"nearest_collisions", r.nearest_collisions},
          {"unresolved_collisions", r.unresolved_collisions},
          {"tau", r.tau},
          {"worst_gap", number(r.worst_gap)},
          {"gaps", r.gaps}};
}

inline Json to_json(const ReparamLipschitzReport& r) {
  return {{"chart", r.chart},
          {"empirical", number(r.empirical)},
          {"bound_formula", number(r.bound_formula)},
          {"bound_sharp", r.bound_sharp},
          {"holds", r.holds},
          {"sharp_holds", r.sharp_holds},
          {"sharp_margin", number(r.sharp_margin)}};
}

inline Json to_json(const ConvergenceReport& r) {
  Json j;
  j["conclusive"] = r.conclusive;
  j["note"] = r.note;
  j["anchored"] = r.anchored;
  j["anchor_distance"] = r.anchor_distance;
  j["kept"] = r.kept;
  j["dropped"] = r.dropped;
  j["drop_reasons"] = r.drop_reasons;
  if (!r.conclusive) return j;
  j["graph_net_level"] = r.graph_net_level;
  j["graph_distances"] = mat_json(r.graph_distances);
  Json decay = Json::array();
  for (const auto& d : r.decay)
    decay.push_back({{"member", d.member},
                     {"distance_to_limit", number(d.distance_to_limit)},
                     {"increment", number(d.increment)},
                     {"max_displacement", number(d.max_displacement)}});
  j["decay"] = decay;
  j["decay_monotone"] = r.decay_monotone;
  j["limit_check"] = to_json(r.limit_check, r.limit);
  Json sw = Json::array();
  for (const auto& s : r.sandwich)
    sw.push_back({{"rho", s.rho},
                  {"eps", s.eps},
                  {"bases", s.bases},
                  {"worst_inner_gap", number(s.worst_inner_gap)},
                  {"worst_outer_excess", number(s.worst_outer_excess)},
                  {"holds", s.holds}});
  j["sandwich"] = sw;
  j["limit_pass"] = r.limit_pass;
  return j;
}

// ---------------------------------------------------------------------------
// CSV dumps

inline std::string direction_field_csv(const DirectionField& field, const SampledImmersion& f) {
  std::string out = "id";
  for (int d = 0; d < f.n(); ++d) out += ",S" + std::to_string(d);
  for (int d = 0; d < f.n(); ++d) out += ",T" + std::to_string(d);
  out += "\n";
  for (int p = 0; p < f.size(); ++p) {
    out += std::to_string(f.id(p));
    for (int d = 0; d < f.n(); ++d) out += "," + fmt(field.S(d, p));
    const Vec T = field.T(p);
    for (int d = 0; d < f.n(); ++d) out += "," + fmt(T(d));
    out += "\n";
  }
  return out;
}

/// One row per sample: id followed by the n×k frame of N in row-major order.
inline std::string normal_field_csv(const NormalField& field, const SampledImmersion& f) {
  const int k = f.codim();
  std::string out = "id";
  for (int a = 0; a < f.n(); ++a)
    for (int b = 0; b < k; ++b) out += ",N" + std::to_string(a) + std::to_string(b);
  out += "\n";
  for (int p = 0; p < f.size(); ++p) {
    out += std::to_string(f.id(p));
    const Mat& F = field.N[p].frame();
    for (int a = 0; a < f.n(); ++a)
      for (int b = 0; b < k; ++b) out += "," + fmt(F(a, b));
    out += "\n";
  }
  return out;
}

inline std::string decay_csv(const ConvergenceReport& r) {
  std::string out = "member,distance_to_limit,increment,max_displacement\n";
  for (const auto& d : r.decay)
    out += std::to_string(d.member) + "," + fmt(d.distance_to_limit) + "," + fmt(d.increment) + "," +
           fmt(d.max_displacement) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Static SVG figures (first two coordinates)

class SvgFigure {
 public:
  void closed_curve(const Mat& pts, const std::string& colour, double width = 1) {
    layers_.push_back({Kind::closed, pts, {}, colour, width});
  }
  void dots(const Mat& pts, const std::string& colour, double radius = 2) {
    layers_.push_back({Kind::dots, pts, {}, colour, radius});
  }
  void segments(const Mat& from, const Mat& to, const std::string& colour, double width = 0.5) {
    layers_.push_back({Kind::segments, from, to, colour, width});
  }

  std::string str(int size = 800) const {
    double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
    for (const auto& l : layers_)
      for (const Mat* m : {&l.a, &l.b})
        for (Eigen::Index i = 0; i < m->cols(); ++i)
          for (int d = 0; d < 2; ++d) {
            lo[d] = std::min(lo[d], (*m)(d, i));
            hi[d] = std::max(hi[d], (*m)(d, i));
          }
    const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-12});
    const double scale = 0.9 * size / span, pad = 0.05 * size;
    auto X = [&](double x) { return num(pad + (x - lo[0]) * scale); };
    auto Y = [&](double y) { return num(size - pad - (y - lo[1]) * scale); };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) + "\" height=\"" +
                    std::to_string(size) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& l : layers_) {
      if (l.kind == Kind::closed) {
        s += "<polygon fill=\"none\" stroke=\"" + l.colour + "\" stroke-width=\"" + num(l.size) + "\" points=\"";
        for (Eigen::Index i = 0; i < l.a.cols(); ++i) s += (i ? " " : "") + X(l.a(0, i)) + "," + Y(l.a(1, i));
        s += "\"/>\n";
      } else if (l.kind == Kind::dots) {
        for (Eigen::Index i = 0; i < l.a.cols(); ++i)
          s += "<circle cx=\"" + X(l.a(0, i)) + "\" cy=\"" + Y(l.a(1, i)) + "\" r=\"" + num(l.size) + "\" fill=\"" +
               l.colour + "\"/>\n";
      } else {
        for (Eigen::Index i = 0; i < l.a.cols(); ++i)
          s += "<line x1=\"" + X(l.a(0, i)) + "\" y1=\"" + Y(l.a(1, i)) + "\" x2=\"" + X(l.b(0, i)) + "\" y2=\"" +
               Y(l.b(1, i)) + "\" stroke=\"" + l.colour + "\" stroke-width=\"" + num(l.size) + "\"/>\n";
      }
    }
    return s + "</svg>\n";
  }

 private:
  enum class Kind { closed, dots, segments };
  struct Layer {
    Kind kind;
    Mat a, b;
    std::string colour;
    double size;
  };
  static std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
  }
  std::vector<Layer> layers_;
};

}  // namespace lipimm
