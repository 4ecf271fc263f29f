#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cli.hpp"

using namespace algsode;
using Json = cli::Json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
  Json json() const { return Json::parse(out); }
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("algsode_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  CliRun run(std::vector<std::string> args) const {
    args.push_back("--output-dir");
    args.push_back(dir_.string());
    std::ostringstream out;
    std::ostringstream err;
    CliRun r;
    r.code = cli::run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  std::string write(const std::string& name, const std::string& text) const {
    const auto path = dir_ / name;
    std::ofstream(path) << text;
    return path.string();
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(dir_ / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::filesystem::path dir_;
};

}  // namespace

TEST_F(CliTest, BvpExample) {
  const CliRun r = run({"bvp", "--instance", "harmonic", "--h", "0.5235988", "--from", "0", "--to", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  EXPECT_EQ(j["status"], "ok");
  // Closed form v = 1/sin(h) at the given (truncated) h.
  EXPECT_NEAR(j["values"]["v"][0].get<double>(), 1.0 / std::sin(0.5235988), 1e-8);
  EXPECT_LE(j["residual"].get<double>(), 1e-11);
  const std::string csv = slurp("bvp.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,q1,y1");
  EXPECT_TRUE(std::filesystem::exists(dir_ / "bvp.json"));

  const CliRun full = run({"bvp", "--instance", "harmonic", "--h", "0.52359877559829887", "--from", "0", "--to", "1"});
  EXPECT_NEAR(full.json()["values"]["v"][0].get<double>(), 2.0, 1e-8);
}

TEST_F(CliTest, H0Example) {
  const CliRun r = run({"h0", "--instance", "harmonic", "--q0", "0", "--R", "1", "--Rdot", "2", "--margin", "0.01"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(r.json()["values"]["h0"].get<double>(), 0.99 * 2 * std::sqrt(2.0), 1e-3);
}

TEST_F(CliTest, ExpExample) {
  const CliRun r = run({"exp", "--instance", "euclidean", "--h", "0", "--q0", "0", "--v", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.json()["values"]["end"][0].get<double>(), 0.0);
}

TEST_F(CliTest, CsvIsRoundTripExact) {
  const CliRun r = run({"flow", "--instance", "sphere_chart", "--q0", "0.1,-0.2", "--y0", "0.3,0.4", "--t", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp("flow.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,q1,q2,y1,y2");
  std::string last;
  while (std::getline(csv, line)) last = line;
  // Final row, parsed back, equals the JSON record bit for bit.
  std::vector<double> row;
  std::stringstream cells(last);
  for (std::string cell; std::getline(cells, cell, ',');) row.push_back(std::stod(cell));
  ASSERT_EQ(row.size(), 5u);
  const Json j = r.json();
  EXPECT_EQ(row[1], j["values"]["q"][0].get<double>());
  EXPECT_EQ(row[4], j["values"]["y"][1].get<double>());
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({"bvp", "--instance", "nope", "--h", "1", "--from", "0", "--to", "1"}).code, 2);
  EXPECT_EQ(run({"bvp", "--instance", "harmonic", "--h", "1", "--from", "0"}).code, 2);
  EXPECT_EQ(run({"bvp", "--instance", "harmonic", "--h", "1", "--from", "0,1", "--to", "1"}).code, 2);
  EXPECT_EQ(run({"bvp", "--frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"exp", "--instance", "harmonic", "--h", "1", "--v", "1", "--mode", "one"}).code, 2);

  // Conjugate point: the computed U(pi) is zero to the integrator tolerance.
  const CliRun conj = run({"bvp", "--instance", "harmonic", "--h", "3.141592653589793", "--from", "0", "--to", "0.5",
                        "--abs-tol", "1e-14", "--rel-tol", "1e-14"});
  EXPECT_EQ(conj.code, 1);
  EXPECT_EQ(conj.json()["status"], "singular-jacobian");

  const CliRun left = run({"flow", "--instance", "euclidean", "--q0", "0", "--v", "20", "--t", "1"});
  EXPECT_EQ(left.code, 1);
  EXPECT_EQ(left.json()["status"], "left-domain");
  EXPECT_TRUE(std::filesystem::exists(dir_ / "flow.csv"));
}

TEST_F(CliTest, ParseErrorsCarryPosition) {
  const std::string cfg = write("bad.json", R"({"model": {"base": {"dim": 1}, "gamma": ["-(q1 + 2"]}, "t": 1})");
  const CliRun r = run({"flow", "--config", cfg, "--y0", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("parse-error"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("model.gamma[0]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("column"), std::string::npos) << r.err;

  const std::string broken = write("broken.json", "{\"instance\": \"harmonic\",\n \"h\": }");
  const CliRun j = run({"bvp", "--config", broken});
  EXPECT_EQ(j.code, 2);
  EXPECT_NE(j.err.find("line 2"), std::string::npos) << j.err;

  const std::string typo = write("typo.json", R"({"instance": "harmonic", "hh": 1})");
  EXPECT_EQ(run({"bvp", "--config", typo}).code, 2);
  const CliRun sym = run({"flow", "--config", write("sym.json", R"({"model": {"base": {"dim": 1}, "gamma": ["-k*q1"]}})"),
                       "--y0", "1", "--t", "1"});
  EXPECT_EQ(sym.code, 2);
  EXPECT_NE(sym.err.find("unknown-symbol"), std::string::npos) << sym.err;
}

TEST_F(CliTest, ConfigMergesWithFlags) {
  const std::string cfg = write("harm.json", R"({
    "command": "bvp",
    "instance": {"name": "harmonic", "params": {"omega": 1.0}},
    "h": 0.5, "from": [1], "to": [1], "abs_tol": 1e-12, "rel_tol": 1e-12
  })");
  const CliRun r = run({"bvp", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(r.json()["values"]["v"][0].get<double>(), std::tan(0.25), 1e-9);
  // Flag overrides the config value of h.
  const CliRun o = run({"bvp", "--config", cfg, "--h", "0.6"});
  EXPECT_NEAR(o.json()["values"]["v"][0].get<double>(), std::tan(0.3), 1e-9);
  EXPECT_EQ(run({"exp", "--config", cfg}).code, 2);  // config names another command
}

TEST_F(CliTest, InlineModelMatchesRegistry) {
  const std::string cfg = write("inline.json", R"({
    "model": {"name": "oscillator", "base": {"lower": [-5], "upper": [5]}, "gamma": ["-(w^2)*q1"], "params": {"w": 2}},
    "h": 0.4, "from": 0, "to": 0.5
  })");
  const CliRun a = run({"bvp", "--config", cfg});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.json()["instance"], "oscillator");
  const CliRun b = run({"bvp", "--instance", "harmonic", "--param", "omega=2", "--h", "0.4", "--from", "0", "--to", "0.5"});
  ASSERT_EQ(b.code, 0) << b.err;
  // Closed form q(t) = v sin(2t)/2.
  EXPECT_NEAR(a.json()["values"]["v"][0].get<double>(), 1.0 / std::sin(0.8), 1e-8);
  EXPECT_NEAR(b.json()["values"]["v"][0].get<double>(), 1.0 / std::sin(0.8), 1e-8);
}

TEST_F(CliTest, InlineSprayFromCoefficients) {
  // Quadratic table with a single nonzero coefficient: y' = -y^2, so q(t) = log(1 + v t).
  const std::string cfg = write("spray.json", R"({
    "model": {"base": {"dim": 1, "half_width": 5}, "quadratic": [[[-1]]]},
    "h": 1, "q0": 0, "v": 1, "mode": "one"
  })");
  const CliRun r = run({"exp", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(r.json()["values"]["end"][0].get<double>(), std::log(2.0), 1e-9);
}

TEST_F(CliTest, SeedPrecedence) {
  ::setenv("ALGSODE_SEED", "7", 1);
  const CliRun env = run({"lift", "--instance", "pair", "--samples", "5"});
  EXPECT_EQ(env.json()["values"]["seed"], 7);
  const CliRun flag = run({"lift", "--instance", "pair", "--samples", "5", "--seed", "3"});
  EXPECT_EQ(flag.json()["values"]["seed"], 3);
  ::unsetenv("ALGSODE_SEED");
  const CliRun none = run({"lift", "--instance", "pair", "--samples", "5"});
  EXPECT_EQ(none.json()["values"]["seed"], 0);
  // Same seed, same sampled defect.
  const CliRun again = run({"lift", "--instance", "pair", "--samples", "5"});
  EXPECT_EQ(none.json()["values"]["psi_defect"], again.json()["values"]["psi_defect"]);
}

TEST_F(CliTest, Sweeps) {
  const CliRun r = run({"bvp", "--instance", "harmonic", "--h", "0.5,1.0,3.141592653589793", "--from", "0", "--to", "0.3",
                     "--abs-tol", "1e-14", "--rel-tol", "1e-14"});
  EXPECT_EQ(r.code, 1);
  const Json sweep = r.json()["values"]["sweep"];
  ASSERT_EQ(sweep.size(), 3u);
  EXPECT_NEAR(sweep[0]["v"][0].get<double>(), 0.3 / std::sin(0.5), 1e-8);
  EXPECT_NEAR(sweep[1]["v"][0].get<double>(), 0.3 / std::sin(1.0), 1e-8);
  EXPECT_EQ(sweep[2]["status"], "singular-jacobian");

  const CliRun e = run({"exp", "--instance", "harmonic", "--h", "0.5,1", "--q0", "0", "--v", "1", "--mode", "mid"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NEAR(e.json()["values"]["sweep"][1]["end"][0].get<double>(), std::sin(0.5), 1e-8);
}

TEST_F(CliTest, GroupoidCommands) {
  const double quarter = std::numbers::pi / 2;
  const CliRun g = run({"gexp", "--instance", "so3_rigid_body", "--param", "inertia=1,1,1", "--h", "1", "--a",
                     "0,0," + Json(quarter).dump()});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_NEAR(g.json()["values"]["g"][2].get<double>(), quarter, 1e-8);

  const CliRun b = run({"gbvp", "--instance", "pair", "--h", "0.5235987755982988", "--g", "0,1"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NEAR(b.json()["values"]["minus"][0].get<double>(), 2.0, 1e-8);
  EXPECT_EQ(slurp("gbvp.csv").substr(0, 8), "t,q1,y1\n");

  const CliRun l = run({"lift", "--instance", "so3_rigid_body", "--g", "0,0,0", "--v", "1,1,1", "--t", "0.5"});
  ASSERT_EQ(l.code, 0) << l.err;
  const Json acc = l.json()["values"]["acceleration"];
  EXPECT_NEAR(acc[0].get<double>(), -1.0, 1e-9);
  EXPECT_NEAR(acc[2].get<double>(), -1.0 / 3, 1e-9);
  EXPECT_LE(l.json()["values"]["psi_defect"].get<double>(), 1e-6);

  EXPECT_EQ(run({"gexp", "--instance", "harmonic", "--h", "1", "--a", "1"}).code, 2);  // no groupoid
}

TEST_F(CliTest, VerifyPassesOnEveryRegistryInstance) {
  for (const auto& name : registry_names()) {
    const CliRun r = run({"verify", "--instance", name});
    EXPECT_EQ(r.code, 0) << name << "\n" << r.out << r.err;
    EXPECT_NE(r.out.find("checks passed"), std::string::npos);
  }
}

TEST_F(CliTest, SampleConfigs) {
  const std::string samples = ALGSODE_SAMPLES_DIR;
  const CliRun loop = run({"bvp", "--config", samples + "/harmonic_bvp.json"});
  ASSERT_EQ(loop.code, 0) << loop.err;
  EXPECT_NEAR(loop.json()["values"]["v"][0].get<double>(), std::tan(0.25), 1e-9);

  // The inline conformal spray is the registry sphere chart written out by hand.
  const CliRun inline_model = run({"exp", "--config", samples + "/inline_spray.json"});
  ASSERT_EQ(inline_model.code, 0) << inline_model.err;
  const CliRun registry = run({"exp", "--instance", "sphere_chart", "--h", "1", "--q0", "0.1,0.2", "--v", "0.5,-0.3"});
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(inline_model.json()["values"]["end"][i].get<double>(), registry.json()["values"]["end"][i].get<double>(),
                1e-9);
  }
}
