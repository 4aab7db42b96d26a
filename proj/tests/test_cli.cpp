#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "lipimm_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("shapes circle --radius 1 --samples 4096 --out " + path("circle.json")), 0);
    ASSERT_EQ(run("shapes circle --radius 1.001 --samples 4096 --out " + path("near.json")), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static int run(const std::string& args) {
    const std::string cmd = std::string(LIPIMM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& name) {
    std::ifstream in(path(name), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static Json json(const std::string& name) { return Json::parse(slurp(name)); }

  static void write(const std::string& name, const Json& j) { std::ofstream(path(name)) << j.dump(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, ShapesManifestAndSamples) {
  ASSERT_EQ(run("shapes circle --radius 1 --samples 4096 --out " + path("c1.json") + " --csv " + path("c1.csv")), 0);
  const auto m = json("c1.json");
  EXPECT_EQ(m["shape"], "circle");
  EXPECT_EQ(m["samples"], 4096);
  EXPECT_EQ(m["m"], 1);
  EXPECT_EQ(m["n"], 2);
  const auto csv = slurp("c1.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4097);

  ASSERT_EQ(run("shapes torus --R 2 --r 0.5 --samples 64x64 --out " + path("t.json") + " --csv " + path("t.csv")), 0);
  EXPECT_EQ(json("t.json")["samples"], Json::array({64, 64}));
  const auto tcsv = slurp("t.csv");
  EXPECT_EQ(std::count(tcsv.begin(), tcsv.end(), '\n'), 4097);

  ASSERT_EQ(run("shapes circle3d --radius 1 --tilt 0.2 --out " + path("c3.json")), 0);
  EXPECT_EQ(json("c3.json")["n"], 3);
}

TEST_F(Cli, ShapesInputErrors) {
  EXPECT_EQ(run("shapes blob --out " + path("blob.json")), 2);
  EXPECT_FALSE(fs::exists(path("blob.json")));
  EXPECT_EQ(run("shapes torus --samples 64y64 --out " + path("bad.json")), 2);
  EXPECT_FALSE(fs::exists(path("bad.json")));
  EXPECT_EQ(run("shapes circle --samples 2"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, CheckExitCodes) {
  EXPECT_EQ(run("check --manifest " + path("circle.json") + " --r 0.2 --lambda 0.25 --out " + path("ok.json")), 0);
  EXPECT_TRUE(json("ok.json")["pass"].get<bool>());

  EXPECT_EQ(run("check --manifest " + path("circle.json") + " --r 0.25 --lambda 0.25 --out " + path("fail.json")), 1);
  const auto rep = json("fail.json");
  EXPECT_FALSE(rep["pass"].get<bool>());
  EXPECT_NEAR(rep["worst_lambda"].get<double>(), 0.258199, 1e-4);
  EXPECT_TRUE(rep["worst_sample"].is_number_integer());

  EXPECT_EQ(run("check --manifest " + path("missing.json") + " --out " + path("missing_report.json")), 2);
  EXPECT_FALSE(fs::exists(path("missing_report.json")));
  EXPECT_EQ(run("check --manifest " + path("circle.json") + " --r -1 --out " + path("neg.json")), 2);
  EXPECT_FALSE(fs::exists(path("neg.json")));
  EXPECT_EQ(run("check --manifest " + path("circle.json") + " --plane-rule sideways"), 2);
}

TEST_F(Cli, CheckAcceptsCsvAndRawManifests) {
  ASSERT_EQ(run("shapes ellipse --a 1.5 --b 1 --samples 2048 --out " + path("e.json") + " --csv " + path("e.csv")), 0);
  EXPECT_EQ(run("check --manifest " + path("e.csv") + " --r 0.1 --lambda 0.25 --out " + path("e_csv.json")), 0);
  EXPECT_EQ(run("check --manifest " + path("e.json") + " --r 0.1 --lambda 0.25 --out " + path("e_json.json")), 0);
  // the catalog manifest keeps the exact parametrization, the CSV only the points
  EXPECT_NEAR(json("e_csv.json")["worst_lambda"].get<double>(), json("e_json.json")["worst_lambda"].get<double>(),
              2e-3);
  write("garbage.json", Json::parse(R"({"m":1})"));
  EXPECT_EQ(run("check --manifest " + path("garbage.json")), 2);
  std::ofstream(path("broken.json")) << "{\"m\": 1,";
  EXPECT_EQ(run("check --manifest " + path("broken.json")), 2);
}

TEST_F(Cli, Deterministic) {
  const std::string args = "check --manifest " + path("circle.json") + " --r 0.25 --lambda 0.25";
  run(args + " --out " + path("d1.json") + " --csv " + path("d1.csv") + " --svg " + path("d1.svg"));
  run(args + " --out " + path("d2.json") + " --csv " + path("d2.csv") + " --svg " + path("d2.svg"));
  EXPECT_EQ(slurp("d1.json"), slurp("d2.json"));
  EXPECT_EQ(slurp("d1.csv"), slurp("d2.csv"));
  EXPECT_EQ(slurp("d1.svg"), slurp("d2.svg"));

  const std::string tube = "tube --manifest " + path("circle.json") + " --chart 3 --trials 2000 --points 500";
  run(tube + " --out " + path("t1.json"));
  run(tube + " --threads 1 --out " + path("t2.json"));
  EXPECT_EQ(slurp("t1.json"), slurp("t2.json"));
}

TEST_F(Cli, NetRoundTripIntoNormals) {
  ASSERT_EQ(run("net --manifest " + path("circle.json") + " --level 4 --out " + path("net.json")), 0);
  const auto net = json("net.json");
  EXPECT_EQ(net["level"], 4);
  EXPECT_TRUE(net["bounds"]["size_bound_holds"].get<bool>());
  EXPECT_TRUE(net["z_sets"].contains("3"));

  ASSERT_EQ(run("normals --manifest " + path("circle.json") + " --out " + path("n1.json") + " --csv " + path("n1.csv")),
            0);
  ASSERT_EQ(run("normals --manifest " + path("circle.json") + " --net " + path("net.json") + " --out " +
                path("n2.json")),
            0);
  EXPECT_EQ(json("n1.json")["lipschitz"], json("n2.json")["lipschitz"]);
  EXPECT_EQ(json("n1.json")["angle_bound"]["status"], "pass");
  const auto csv = slurp("n1.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,S0,S1,T0,T1");

  // a net for another (r, lambda) is an input error
  EXPECT_EQ(run("normals --manifest " + path("circle.json") + " --r 0.1 --net " + path("net.json") + " --out " +
                path("n3.json")),
            2);
  EXPECT_FALSE(fs::exists(path("n3.json")));
}

TEST_F(Cli, NormalsPreconditionUnmet) {
  // the angle between unrelated normal images is far beyond the allowance
  write("rot.json", Json::parse(R"({"m":1,"n":2,"shape":"ellipse","params":{"a":1,"b":3},"samples":4096})"));
  EXPECT_EQ(run("normals --manifest " + path("circle.json") + " --other " + path("rot.json") + " --out " +
                path("np.json")),
            3);
  EXPECT_EQ(json("np.json")["angle_bound"]["status"], "precondition-unmet");
  // not an (r, lambda)-immersion at all
  EXPECT_EQ(run("normals --manifest " + path("circle.json") + " --r 0.25 --out " + path("nr.json")), 3);
  EXPECT_EQ(json("nr.json")["status"], "precondition-unmet");
}

TEST_F(Cli, Karcher) {
  Json atoms = Json::array();
  for (int i = 0; i < 4; ++i) {
    const double t = 0.1 * i - 0.15, s = 0.05 * i;
    atoms.push_back({{"frame", {{std::cos(t), 0}, {std::sin(t), std::cos(s)}, {0, std::sin(s)}, {0, 0}}},
                     {"weight", 1 + i}});
  }
  write("atoms.json", {{"atoms", atoms}});
  ASSERT_EQ(run("karcher --atoms " + path("atoms.json") + " --tol 1e-10 --out " + path("mean.json")), 0);
  const auto rep = json("mean.json");
  EXPECT_LE(rep["final_gradient_norm"].get<double>(), 1e-10);
  EXPECT_EQ(rep["mean"].size(), 4u);
  EXPECT_EQ(rep["mean"][0].size(), 2u);

  // antipodal lines: no admissible ball
  write("spread.json", Json::parse(R"({"atoms":[{"frame":[[1],[0]]},{"frame":[[0],[1]]}]})"));
  EXPECT_EQ(run("karcher --atoms " + path("spread.json") + " --out " + path("spread_report.json")), 3);
  EXPECT_EQ(run("karcher --atoms " + path("nope.json")), 2);
}

TEST_F(Cli, Tube) {
  ASSERT_EQ(run("tube --manifest " + path("circle.json") + " --chart 0 --trials 0 --out " + path("tp.json")), 0);
  const auto rep = json("tp.json");
  EXPECT_EQ(rep["params"]["branch"], "curvature");
  EXPECT_NEAR(rep["params"]["epsilon"].get<double>(), 2.238e-7, 1e-10);
  EXPECT_FALSE(rep.contains("injectivity"));

  ASSERT_EQ(run("tube --manifest " + path("circle.json") + " --chart 5 --trials 5000 --out " + path("tq.json")), 0);
  EXPECT_TRUE(json("tq.json")["injectivity"]["injective"].get<bool>());
  EXPECT_TRUE(json("tq.json")["inclusion"]["holds"].get<bool>());
  EXPECT_EQ(run("tube --manifest " + path("circle.json") + " --chart 99999 --out " + path("tx.json")), 2);
}

TEST_F(Cli, CorrespondClosenessPolicies) {
  const std::string pair = "correspond --source " + path("circle.json") + " --target " + path("near.json");
  EXPECT_EQ(run(pair + " --out " + path("strict.json")), 3);
  EXPECT_EQ(json("strict.json")["status"], "precondition-unmet");

  ASSERT_EQ(run(pair + " --closeness empirical --out " + path("emp.json") + " --csv " + path("emp.csv")), 0);
  const auto rep = json("emp.json");
  EXPECT_TRUE(rep["bijectivity"]["injective"].get<bool>());
  EXPECT_TRUE(rep["bijectivity"]["surjective"].get<bool>());
  EXPECT_NEAR(rep["correspondence"]["max_displacement"].get<double>(), 1e-3, 1e-5);
  EXPECT_LE(rep["lipschitz"]["empirical"].get<double>(), rep["lipschitz"]["bound_sharp"].get<double>());
  const auto csv = slurp("emp.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4097);

  EXPECT_EQ(run(pair + " --closeness lenient"), 2);
}

TEST_F(Cli, Converge) {
  Json members = Json::array();
  for (int i = 2; i <= 5; ++i)
    members.push_back({{"m", 1}, {"n", 2}, {"shape", "circle"}, {"params", {{"radius", 1 + std::ldexp(1.0, -i)}}},
                       {"samples", 4096}});
  write("circles.json", {{"members", members}});
  ASSERT_EQ(run("converge --family " + path("circles.json") + " --r 0.2 --lambda 0.25 --level 4 --out " +
                path("conv.json") + " --csv " + path("decay.csv")),
            0);
  const auto rep = json("conv.json");
  EXPECT_TRUE(rep["conclusive"].get<bool>());
  EXPECT_TRUE(rep["limit_pass"].get<bool>());
  const auto csv = slurp("decay.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "member,distance_to_limit,increment,max_displacement");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  // strict closeness thins the family below two members
  EXPECT_EQ(run("converge --family " + path("circles.json") + " --level 4 --closeness strict --out " +
                path("conv_strict.json")),
            3);
  EXPECT_FALSE(json("conv_strict.json")["conclusive"].get<bool>());

  write("one.json", {{"members", Json::array({members[0]})}});
  EXPECT_EQ(run("converge --family " + path("one.json") + " --out " + path("one_report.json")), 2);
  EXPECT_FALSE(fs::exists(path("one_report.json")));
}
