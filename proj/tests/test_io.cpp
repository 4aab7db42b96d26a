#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "lipimm/io.hpp"
#include "support.hpp"

using namespace lipimm;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::invalid_input;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("lipimm_io_" + name)).string();
}

}  // namespace

TEST(Manifest, CatalogShape) {
  const auto j = parse_json(R"({"m":1,"n":2,"shape":"circle","params":{"radius":1.0},"samples":4096})");
  const auto f = immersion_from_json(j);
  EXPECT_EQ(f.size(), 4096);
  EXPECT_EQ(f.n(), 2);
  EXPECT_NEAR(f.position(17).norm(), 1.0, 1e-15);
  EXPECT_TRUE(f.has_evaluator());

  shapes::ShapeSpec s{"torus", {{"R", 2.0}, {"r", 0.5}}, {24, 12}};
  const auto back = immersion_from_json(shape_manifest(s));
  EXPECT_EQ(back.m(), 2);
  EXPECT_EQ(back.size(), 24 * 12);
  EXPECT_EQ(shape_manifest(s)["samples"], Json::array({24, 12}));
}

TEST(Manifest, RawPointsRoundTrip) {
  const auto f = shapes::ellipse(1.5, 1.0, 64);
  const auto g = immersion_from_json(parse_json(points_manifest(f).dump()));
  EXPECT_EQ(g.size(), f.size());
  EXPECT_EQ(g.ids(), f.ids());
  EXPECT_EQ((g.positions() - f.positions()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(g.has_evaluator());

  const auto t = shapes::torus(2, 0.5, 12, 8);
  const auto u = immersion_from_json(points_manifest(t));
  EXPECT_EQ(u.cells(), t.cells());
  EXPECT_EQ((u.positions() - t.positions()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Manifest, RawCurveWithoutCellsIsClosedPolyline) {
  const auto f = immersion_from_json(
      parse_json(R"({"m":1,"n":3,"points":[[1,0,0],[0,1,0],[-1,0,0],[0,-1,0]],"closed":true})"));
  EXPECT_EQ(f.size(), 4);
  EXPECT_EQ(f.cells().back(), (std::vector<int>{3, 0}));
  EXPECT_EQ(f.ids(), (std::vector<std::int64_t>{0, 1, 2, 3}));
}

TEST(Manifest, Errors) {
  EXPECT_EQ(kind_of([] { parse_json("{not json"); }), ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"n":2,"shape":"circle"})")); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":1,"n":3,"shape":"circle"})")); }),
            ErrorKind::dimension_mismatch);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":1,"n":2,"shape":"blob"})")); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":1,"n":2,"shape":"circle","samples":2})")); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] {
              immersion_from_json(parse_json(R"({"m":1,"n":2,"points":[[0,0],[1,0],[0,1]],"closed":false})"));
            }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":1,"n":3,"points":[[0,0],[1,0],[0,1]]})")); }),
            ErrorKind::dimension_mismatch);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":1,"n":2,"points":[[0,0],[1],[0,1]]})")); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_json(parse_json(R"({"m":2,"n":3,"points":[[0,0,0],[1,0,0],[0,1,0]]})")); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { load_immersion(temp_path("does_not_exist.json")); }), ErrorKind::invalid_input);
}

TEST(Csv, SamplesRoundTrip) {
  const auto f = shapes::circle3d(1.0, 0.4, 50);
  const std::string text = samples_csv(f);
  EXPECT_EQ(text.substr(0, text.find('\n')), "id,x0,x1,x2");
  const auto g = immersion_from_csv(text);
  EXPECT_EQ(g.ids(), f.ids());
  EXPECT_EQ((g.positions() - f.positions()).cwiseAbs().maxCoeff(), 0.0);

  const auto path = temp_path("samples.csv");
  write_text_file(path, text);
  EXPECT_EQ(load_immersion(path).size(), 50);
  std::remove(path.c_str());

  EXPECT_EQ(kind_of([] { immersion_from_csv("id,x0,x1\n0,1,0\n1,0,abc\n2,-1,0\n"); }), ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_csv("id,x0,x1\n0,1,0\n1,0\n2,-1,0\n"); }), ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { immersion_from_csv(""); }), ErrorKind::invalid_input);
}

TEST(Family, MembersOrBareArray) {
  const auto members = family_from_json(parse_json(
      R"({"members":[{"m":1,"n":2,"shape":"circle","params":{"radius":1.5},"samples":64},
                     {"m":1,"n":2,"shape":"circle","params":{"radius":1.25},"samples":64}]})"));
  ASSERT_EQ(members.size(), 2u);
  EXPECT_NEAR(members[1].position(0).norm(), 1.25, 1e-15);
  EXPECT_EQ(family_from_json(parse_json(R"([{"m":1,"n":2,"shape":"circle","samples":16}])")).size(), 1u);
  EXPECT_EQ(kind_of([] { family_from_json(parse_json(R"({"members":[]})")); }), ErrorKind::invalid_input);
}

TEST(NetJson, RoundTrip) {
  FramedImmersion fi(shapes::circle(1.0, 2048), 0.2, 0.25);
  NetOptions opt;
  opt.level = 3;
  opt.z_levels = {1, 2};
  const auto net = build_net(fi, opt);
  const Json j = net_to_json(net);
  EXPECT_EQ(j["level"], 3);
  EXPECT_EQ(j["point_ids"].size(), static_cast<std::size_t>(net.size()));
  EXPECT_TRUE(j["z_sets"].contains("1"));
  EXPECT_TRUE(j["z_sets"].contains("2"));

  const auto back = net_from_json(fi, parse_json(j.dump()));
  EXPECT_EQ(back.point_ids(), net.point_ids());
  EXPECT_EQ(back.z_levels(), net.z_levels());
  for (int k = 0; k < net.size(); ++k) EXPECT_EQ(back.z_set(2, k), net.z_set(2, k));
  EXPECT_EQ(net_to_json(back).dump(), j.dump());

  FramedImmersion other(shapes::circle(1.0, 2048), 0.1, 0.25);
  EXPECT_EQ(kind_of([&] { net_from_json(other, j); }), ErrorKind::invalid_input);
  Json bad = j;
  bad["point_ids"][0] = 999999;
  EXPECT_EQ(kind_of([&] { net_from_json(fi, bad); }), ErrorKind::invalid_input);
}

TEST(Mixture, RoundTrip) {
  std::mt19937_64 rng(5);
  const auto base = lipimm::testing::random_subspace(rng, 4, 2);
  std::vector<Atom> atoms;
  for (int i = 0; i < 5; ++i) atoms.push_back(Atom{lipimm::testing::random_within(rng, base, 0.3), 1.0 + i});
  const auto mu = DiracMixture::normalized(atoms);
  const auto back = mixture_from_json(parse_json(mixture_to_json(mu).dump()));
  ASSERT_EQ(back.atoms().size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(back.atoms()[i].weight, mu.atoms()[i].weight, 1e-15);
    EXPECT_LT(geodesic_distance(back.atoms()[i].point, mu.atoms()[i].point), 1e-12);
  }
  EXPECT_EQ(kind_of([] { mixture_from_json(parse_json(R"({"atoms":[]})")); }), ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([] { mixture_from_json(parse_json(R"({"atoms":[{"weight":1}]})")); }), ErrorKind::invalid_input);
}

TEST(Reports, NonFiniteBecomesNull) {
  InjectivityReport r;
  r.min_separation = std::numeric_limits<double>::infinity();
  const Json j = to_json(r);
  EXPECT_TRUE(j["min_separation"].is_null());
  EXPECT_TRUE(number(std::nan("")).is_null());
  EXPECT_EQ(number(2.5), Json(2.5));
}

TEST(Reports, RLambdaAndConstants) {
  FramedImmersion fi(shapes::circle(1.0, 1024), 0.25, 0.25);
  const auto rep = check_r_lambda(fi);
  const Json j = to_json(rep, fi.f());
  EXPECT_FALSE(j["pass"].get<bool>());
  EXPECT_NEAR(j["worst_lambda"].get<double>(), 0.258199, 1e-3);
  EXPECT_EQ(j["worst_sample"].get<std::int64_t>(), fi.f().id(rep.worst_sample));

  const Json c = to_json(constants(1, 0.25, 0.2));
  EXPECT_NEAR(c["gamma"].get<double>(), 0.907888, 1e-6);
  EXPECT_NEAR(c["sharp_Lambda"].get<double>(), 3.125, 1e-12);
}

TEST(Reports, Deterministic) {
  const auto a = to_json(pipeline_tube_params(1, 0.25, 0.2)).dump(2);
  const auto b = to_json(pipeline_tube_params(1, 0.25, 0.2)).dump(2);
  EXPECT_EQ(a, b);
  // sorted keys
  EXPECT_LT(a.find("\"branch\""), a.find("\"epsilon\""));
}

TEST(CsvDumps, DecayTable) {
  ConvergenceReport r;
  r.decay = {{0, 0.5, 0.25, 0.5}, {1, 0.25, 0.125, 0.25}};
  EXPECT_EQ(decay_csv(r), "member,distance_to_limit,increment,max_displacement\n0,0.5,0.25,0.5\n1,0.25,0.125,0.25\n");
}

TEST(CsvDumps, DirectionFieldRows) {
  FramedImmersion fi(shapes::circle(1.0, 4096), 0.2, 0.25);
  NetOptions opt;
  opt.level = 4;
  const auto net = build_net(fi, opt);
  NormalAverager avg(fi, net);
  const auto field = direction_field(avg);
  const auto csv = direction_field_csv(field, fi.f());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4097);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,S0,S1,T0,T1");
}

TEST(Svg, WellFormedAndDeterministic) {
  const auto f = shapes::circle(1.0, 32);
  SvgFigure fig;
  fig.closed_curve(f.positions(), "black");
  fig.dots(f.positions().leftCols(4), "red");
  fig.segments(f.positions().leftCols(2), 1.1 * f.positions().leftCols(2), "blue");
  const auto s = fig.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2 + 1 + 4 + 2 + 1);
  EXPECT_EQ(s, fig.str());
}
