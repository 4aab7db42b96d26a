#include <CLI11.hpp>

#include <algorithm>
#include <functional>
#include <iostream>

#include "lipimm/io.hpp"

using namespace lipimm;

namespace {

struct Global {
  std::string out, csv, svg;
  std::uint64_t seed = 42;
  unsigned threads = 0;
  double tol = 1e-10;
};

struct Outcome {
  Json report;
  bool pass = true;
  bool precondition_unmet = false;
  std::string csv, svg;
};

void emit(const Global& g, const Outcome& o) {
  const std::string text = o.report.dump(2) + "\n";
  if (g.out.empty()) std::cout << text;
  else write_text_file(g.out, text);
  if (!g.csv.empty() && !o.csv.empty()) write_text_file(g.csv, o.csv);
  if (!g.svg.empty() && !o.svg.empty()) write_text_file(g.svg, o.svg);
}

int run(const Global& g, const std::string& command, const std::function<Outcome()>& body) {
  try {
    const Outcome o = body();
    emit(g, o);
    return o.precondition_unmet ? 3 : o.pass ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "lipimm " << command << ": " << e.what() << "\n";
    const auto cat = category_of(e.kind());
    if (cat == ErrorCategory::input) return 2;
    Outcome o;
    o.report = {{"command", command},
                {"status", cat == ErrorCategory::precondition ? "precondition-unmet" : "conclusion-violated"},
                {"error", kind_name(e.kind())},
                {"message", e.what()}};
    if (e.sample()) o.report["sample"] = *e.sample();
    try {
      emit(g, o);
    } catch (const Error&) {
      return 2;
    }
    return cat == ErrorCategory::precondition ? 3 : 1;
  } catch (const std::exception& e) {
    std::cerr << "lipimm " << command << ": " << e.what() << "\n";
    return 2;
  }
}

std::vector<int> parse_samples(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto x = s.find('x', start);
    const std::string part = s.substr(start, x == std::string::npos ? std::string::npos : x - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_input, "samples must look like 4096 or 64x64");
    }
    if (x == std::string::npos) break;
    start = x + 1;
  }
  if (out.size() > 2) fail(ErrorKind::invalid_input, "samples takes at most two counts");
  for (int c : out)
    if (c < 3) fail(ErrorKind::invalid_input, "sample counts must be at least 3");
  return out;
}

PlaneRule parse_plane_rule(const std::string& s) {
  if (s == "tangent") return PlaneRule::tangent();
  if (s == "best-fit") return PlaneRule::best_fit();
  fail(ErrorKind::invalid_input, "plane rule must be tangent or best-fit");
}

void require_r_lambda(const FramedImmersion& fi, const std::string& which = "input") {
  const auto rep = check_r_lambda(fi);
  if (!rep.pass)
    fail(ErrorKind::precondition_unmet,
         which + " is not an (r, lambda)-immersion: worst lambda " + fmt(rep.worst_lambda),
         fi.f().id(rep.worst_sample));
}

NetOptions pipeline_net(int level) {
  NetOptions o;
  o.level = level;
  o.z_levels = {3};
  return o;
}

/// Up to `count` evenly spaced chart indices, or all of them.
std::vector<int> spread(int size, int count) {
  if (count <= 0 || count >= size) return detail::chart_list(size, {});
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(static_cast<int>(static_cast<long>(i) * size / count));
  return out;
}

std::string curve_svg(const SampledImmersion& f, const std::function<void(SvgFigure&)>& extra = {}) {
  SvgFigure fig;
  if (f.m() == 1) fig.closed_curve(f.positions(), "black");
  else fig.dots(f.positions(), "black", 1);
  if (extra) extra(fig);
  return fig.str();
}

Mat columns(const SampledImmersion& f, const std::vector<int>& idx) {
  Mat out(f.n(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = f.position(idx[i]);
  return out;
}

struct Pipeline {
  std::string manifest;
  double r = 0.2, lambda = 0.25;
  int level = 4;

  void add(CLI::App* sub, int default_level) {
    level = default_level;
    sub->add_option("--manifest", manifest, "immersion manifest (.json or .csv)")->required();
    sub->add_option("--r", r, "graph radius")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "slope bound")->check(CLI::NonNegativeNumber);
    sub->add_option("--level", level, "net level")->check(CLI::Range(1, 6));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantitative checks for (r, lambda)-immersions"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--out", g.out, "JSON report path (stdout when omitted)");
  app.add_option("--csv", g.csv, "CSV output path");
  app.add_option("--svg", g.svg, "SVG figure path");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)");
  app.add_option("--tol", g.tol, "numerical tolerance")->check(CLI::PositiveNumber);

  std::function<int()> action;

  // shapes
  auto* shapes_cmd = app.add_subcommand("shapes", "generate a catalog shape manifest");
  shapes::ShapeSpec spec;
  std::string samples;
  shapes_cmd->add_option("name", spec.name, "catalog name")->required();
  shapes_cmd->add_option("--samples", samples, "sample count, or NxM for the torus");
  for (const char* key : {"radius", "a", "b", "width", "height", "corner", "tilt", "p", "q", "R", "r"})
    shapes_cmd->add_option_function<double>(std::string("--") + key,
                                            [&spec, k = std::string(key)](double v) { spec.params[k] = v; });
  shapes_cmd->callback([&] {
    action = [&] {
      return run(g, "shapes", [&] {
        const auto& names = shapes::catalog_names();
        if (std::find(names.begin(), names.end(), spec.name) == names.end())
          fail(ErrorKind::invalid_input, "unknown shape '" + spec.name + "'");
        if (!samples.empty()) spec.samples = parse_samples(samples);
        const auto f = shapes::make_shape(spec);
        Outcome o;
        o.report = shape_manifest(spec);
        o.csv = samples_csv(f);
        o.svg = curve_svg(f);
        return o;
      });
    };
  });

  // check
  auto* check_cmd = app.add_subcommand("check", "verify the (r, lambda) condition");
  Pipeline check_in;
  std::string plane_rule = "tangent";
  check_cmd->add_option("--manifest", check_in.manifest, "immersion manifest")->required();
  check_cmd->add_option("--r", check_in.r)->check(CLI::PositiveNumber);
  check_cmd->add_option("--lambda", check_in.lambda)->check(CLI::NonNegativeNumber);
  check_cmd->add_option("--plane-rule", plane_rule, "tangent or best-fit");
  check_cmd->callback([&] {
    action = [&] {
      return run(g, "check", [&] {
        FramedImmersion fi(load_immersion(check_in.manifest), check_in.r, check_in.lambda,
                           parse_plane_rule(plane_rule));
        const auto rep = check_r_lambda(fi);
        Outcome o;
        o.report = to_json(rep, fi.f());
        o.report["command"] = "check";
        o.report["r"] = check_in.r;
        o.report["lambda"] = check_in.lambda;
        o.report["plane_rule"] = plane_rule;
        o.report["samples"] = fi.f().size();
        o.pass = rep.pass;
        o.csv = "id,lambda\n";
        for (int i = 0; i < fi.f().size(); ++i)
          o.csv += std::to_string(fi.f().id(i)) + "," + fmt(rep.lambda_per_sample[i]) + "\n";
        o.svg = curve_svg(fi.f(), [&](SvgFigure& fig) {
          if (rep.worst_sample >= 0) fig.dots(columns(fi.f(), {rep.worst_sample}), "red", 4);
        });
        return o;
      });
    };
  });

  // net
  auto* net_cmd = app.add_subcommand("net", "build a delta-net and verify its bounds");
  Pipeline net_in;
  net_in.add(net_cmd, 5);
  net_cmd->callback([&] {
    action = [&] {
      return run(g, "net", [&] {
        FramedImmersion fi(load_immersion(net_in.manifest), net_in.r, net_in.lambda);
        require_r_lambda(fi);
        NetOptions opt;
        opt.level = net_in.level;
        opt.z_levels = {};
        for (int iota = 0; iota <= net_in.level; ++iota) opt.z_levels.push_back(iota);
        const auto net = build_net(fi, opt);
        const auto bounds = verify_net_bounds(net, fi.f());
        Outcome o;
        o.report = net_to_json(net);
        o.report["bounds"] = to_json(bounds);
        o.pass = bounds.size_bound_holds && bounds.multiplicity_bound_holds;
        o.csv = "index,id\n";
        for (int j = 0; j < net.size(); ++j) o.csv += std::to_string(j) + "," + std::to_string(net.point_id(j)) + "\n";
        o.svg = curve_svg(fi.f(), [&](SvgFigure& fig) { fig.dots(columns(fi.f(), net.points()), "red", 2); });
        return o;
      });
    };
  });

  // normals
  auto* normals_cmd = app.add_subcommand("normals", "averaged normal field and its bounds");
  Pipeline normals_in;
  normals_in.add(normals_cmd, 4);
  std::string normals_other, normals_net;
  int normals_charts = 64;
  normals_cmd->add_option("--net", normals_net, "reuse a net written by the net command");
  normals_cmd->add_option("--other", normals_other, "second immersion for the angle bound (default: itself)");
  normals_cmd->add_option("--charts", normals_charts, "charts checked for Lipschitz bounds (0 = all)");
  normals_cmd->callback([&] {
    action = [&] {
      return run(g, "normals", [&] {
        FramedImmersion fi(load_immersion(normals_in.manifest), normals_in.r, normals_in.lambda);
        require_r_lambda(fi);
        const auto net = normals_net.empty() ? build_net(fi, pipeline_net(normals_in.level))
                                             : net_from_json(fi, read_json_file(normals_net));
        const auto& f = fi.f();
        const auto charts = spread(net.size(), normals_charts);
        Outcome o;
        o.report["command"] = "normals";
        o.report["constants"] = to_json(constants(f.m(), fi.lambda(), fi.r()));
        o.report["net_size"] = net.size();
        o.report["charts_checked"] = charts.size();
        if (f.codim() == 1) {
          NormalAverager avg(fi, net);
          const auto field = direction_field(avg);
          const FramedImmersion other =
              normals_other.empty() ? fi : FramedImmersion(load_immersion(normals_other), fi.r(), fi.lambda());
          const auto angle = angle_bound_check(avg, field, other);
          const auto lip = field_lipschitz_check(avg, field, charts);
          o.report["direction_field"] = {{"min_norm", field.min_norm},
                                         {"worst_overlap", number(field.worst_overlap)},
                                         {"overlaps_checked", field.overlaps_checked}};
          o.report["angle_bound"] = to_json(angle);
          o.report["lipschitz"] = to_json(lip);
          o.precondition_unmet = angle.status == CheckStatus::precondition_unmet;
          o.pass = angle.status == CheckStatus::pass && lip.holds;
          o.csv = direction_field_csv(field, f);
          o.svg = curve_svg(f, [&](SvgFigure& fig) {
            const Mat base = columns(f, net.points());
            Mat tip = base;
            for (int j = 0; j < net.size(); ++j) tip.col(j) += 0.05 * field.T(net.point(j));
            fig.segments(base, tip, "blue");
          });
        } else {
          NormalSpaces ns(fi, net);
          const auto field = normal_field(ns);
          const auto lip = N_lipschitz_check(ns, field, charts);
          o.report["normal_field"] = {{"min_margin", field.min_margin}};
          o.report["lipschitz"] = to_json(lip);
          o.pass = field.min_margin > 0 && lip.holds;
          o.csv = normal_field_csv(field, f);
          o.svg = curve_svg(f);
        }
        return o;
      });
    };
  });

  // karcher
  auto* karcher_cmd = app.add_subcommand("karcher", "Riemannian center of mass of Grassmannian atoms");
  std::string atoms_path;
  int karcher_iterations = 10000;
  karcher_cmd->add_option("--atoms", atoms_path, "atoms JSON")->required();
  karcher_cmd->add_option("--max-iterations", karcher_iterations)->check(CLI::PositiveNumber);
  karcher_cmd->callback([&] {
    action = [&] {
      return run(g, "karcher", [&] {
        const auto mu = mixture_from_json(read_json_file(atoms_path));
        KarcherOptions opt;
        opt.tol = g.tol;
        opt.max_iterations = karcher_iterations;
        const auto rep = karcher_mean(mu, opt);
        Outcome o;
        o.report = to_json(rep);
        o.report["command"] = "karcher";
        o.report["tol"] = g.tol;
        o.pass = rep.final_gradient_norm <= g.tol;
        o.csv = "iteration,energy\n";
        for (std::size_t i = 0; i < rep.energy_trace.size(); ++i)
          o.csv += std::to_string(i) + "," + fmt(rep.energy_trace[i]) + "\n";
        return o;
      });
    };
  });

  // tube
  auto* tube_cmd = app.add_subcommand("tube", "tubular neighbourhood size and probes on one chart");
  Pipeline tube_in;
  tube_in.add(tube_cmd, 4);
  int tube_chart = 0;
  long tube_trials = 10000, tube_points = 2000;
  tube_cmd->add_option("--chart", tube_chart, "net index of the chart");
  tube_cmd->add_option("--trials", tube_trials, "injectivity probe pairs (0 skips the probes)");
  tube_cmd->add_option("--points", tube_points, "inclusion probe points");
  tube_cmd->callback([&] {
    action = [&] {
      return run(g, "tube", [&] {
        FramedImmersion fi(load_immersion(tube_in.manifest), tube_in.r, tube_in.lambda);
        const auto& f = fi.f();
        const auto params = detail::correspondence_tube(f.m(), f.codim(), fi.lambda(), fi.r());
        Outcome o;
        o.report["command"] = "tube";
        o.report["params"] = to_json(params);
        o.report["chart"] = tube_chart;
        if (tube_trials <= 0 || f.codim() != 1) return o;
        require_r_lambda(fi);
        const auto net = build_net(fi, pipeline_net(tube_in.level));
        if (tube_chart < 0 || tube_chart >= net.size())
          fail(ErrorKind::invalid_input, "chart must lie in [0, " + std::to_string(net.size()) + ")");
        NormalAverager avg(fi, net);
        const int q = net.point(tube_chart);
        const auto patch = extract_graph_patch(f, q, fi.plane(q), fi.delta(3));
        const auto T = pipeline_field(avg, patch, tube_chart);
        ProbeOptions popt;
        popt.trials = tube_trials;
        popt.seed = g.seed;
        const auto inj = injectivity_probe(patch, T, params, popt);
        const auto inc = inclusion_probe(patch, T, params, tube_points, g.seed);
        o.report["chart_sample"] = f.id(q);
        o.report["injectivity"] = to_json(inj);
        o.report["inclusion"] = to_json(inc);
        o.pass = inj.injective && inj.separation_violations == 0 && inc.holds;
        return o;
      });
    };
  });

  // correspond
  auto* corr_cmd = app.add_subcommand("correspond", "projection-built correspondence between two immersions");
  std::string source, target, corr_closeness = "strict";
  double corr_r = 0.2, corr_lambda = 0.25;
  int corr_level = 4, corr_charts = 64;
  bool corr_graph = false;
  corr_cmd->add_option("--source", source, "source manifest")->required();
  corr_cmd->add_option("--target", target, "target manifest")->required();
  corr_cmd->add_option("--r", corr_r)->check(CLI::PositiveNumber);
  corr_cmd->add_option("--lambda", corr_lambda)->check(CLI::NonNegativeNumber);
  corr_cmd->add_option("--level", corr_level)->check(CLI::Range(1, 6));
  corr_cmd->add_option("--closeness", corr_closeness, "strict or empirical");
  corr_cmd->add_option("--charts", corr_charts, "charts checked for the Lipschitz bound (0 = all)");
  corr_cmd->add_flag("--graph-distance", corr_graph, "report the graph-system distance under empirical closeness");
  corr_cmd->callback([&] {
    action = [&] {
      return run(g, "correspond", [&] {
        CorrespondOptions opt;
        opt.closeness = parse_closeness(corr_closeness);
        opt.graph_distance = corr_graph;
        FramedImmersion f1(load_immersion(source), corr_r, corr_lambda);
        FramedImmersion f2(load_immersion(target), corr_r, corr_lambda);
        const auto net = build_net(f1, pipeline_net(corr_level));
        Correspondence c;
        if (f1.f().codim() == 1) {
          NormalAverager avg(f1, net);
          c = build_correspondence(avg, direction_field(avg), f2, opt);
        } else {
          NormalSpaces ns(f1, net);
          c = build_correspondence(ns, normal_field(ns), f2, opt);
        }
        const auto bij = verify_bijectivity(c);
        const auto lip = worst_reparametrized_lipschitz(c, f1, net, spread(net.size(), corr_charts));
        Outcome o;
        o.report = {{"command", "correspond"},
                    {"correspondence", to_json(c)},
                    {"bijectivity", to_json(bij)},
                    {"lipschitz", to_json(lip)}};
        o.pass = bij.injective && bij.surjective && lip.holds;
        const auto& f = f1.f();
        o.csv = "id";
        for (int d = 0; d < f.n(); ++d) o.csv += ",phi" + std::to_string(d);
        o.csv += ",nearest_target_id\n";
        for (int p = 0; p < f.size(); ++p) {
          o.csv += std::to_string(f.id(p));
          for (int d = 0; d < f.n(); ++d) o.csv += "," + fmt(c.phi(d, p));
          o.csv += "," + std::to_string(c.target.id(c.nearest[p])) + "\n";
        }
        o.svg = curve_svg(f, [&](SvgFigure& fig) {
          if (c.target.m() == 1) fig.closed_curve(c.target.positions(), "green");
          const int step = std::max(1, f.size() / 64);
          std::vector<int> idx;
          for (int p = 0; p < f.size(); p += step) idx.push_back(p);
          Mat to(f.n(), idx.size());
          for (std::size_t i = 0; i < idx.size(); ++i) to.col(i) = c.phi.col(idx[i]);
          fig.segments(columns(f, idx), to, "red");
        });
        return o;
      });
    };
  });

  // converge
  auto* conv_cmd = app.add_subcommand("converge", "convergence of a family of immersions");
  std::string family_path, conv_closeness = "empirical";
  ConvergenceOptions conv;
  conv_cmd->add_option("--family", family_path, "family JSON")->required();
  conv_cmd->add_option("--r", conv.r)->check(CLI::PositiveNumber);
  conv_cmd->add_option("--lambda", conv.lambda)->check(CLI::NonNegativeNumber);
  conv_cmd->add_option("--level", conv.level)->check(CLI::Range(1, 6));
  conv_cmd->add_option("--closeness", conv_closeness, "strict or empirical");
  conv_cmd->add_option("--anchor-tolerance", conv.anchor_tolerance)->check(CLI::PositiveNumber);
  conv_cmd->callback([&] {
    action = [&] {
      return run(g, "converge", [&] {
        conv.closeness = parse_closeness(conv_closeness);
        const auto family = family_from_json(read_json_file(family_path));
        const auto rep = convergence_harness(family, conv);
        Outcome o;
        o.report = to_json(rep);
        o.report["command"] = "converge";
        o.report["closeness"] = conv_closeness;
        o.precondition_unmet = !rep.conclusive;
        o.pass = rep.limit_pass;
        if (!rep.conclusive) return o;
        o.csv = decay_csv(rep);
        o.svg = curve_svg(rep.limit, [&](SvgFigure& fig) {
          for (const auto& m : family)
            if (m.m() == 1) fig.closed_curve(m.positions(), "grey", 0.5);
        });
        return o;
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  set_thread_count(g.threads);
  return action ? action() : 2;
}
