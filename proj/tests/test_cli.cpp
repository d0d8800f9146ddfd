#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "slidenet_cli.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "slidenet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = slidenet::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  if (pos == std::string::npos) return std::nan("");
  return std::stod(text.substr(pos + key.size()));
}

const char* kTinyModel = R"({"train": {"batch_size": 8, "val_every": 1, "model": {"impulse_widths": [16],
  "point_widths": [16, 32], "shape_head_widths": [16], "joint_widths": [16, 16, 16, 16, 8],
  "plain_widths": [32, 16]}}})";

class CliRun : public ::testing::Test {
protected:
  void SetUp() override {
    dir = test_support::temp_dir("cli");
    std::ofstream(dir / "tiny.json") << kTinyModel;
  }
  void TearDown() override { fs::remove_all(dir); }

  Result gen(const std::string& out, const std::string& seed = "3") {
    return run({"--out-dir", dir.string(), "--seed", seed, "gen", "--shapes", "box:2,cylinder:2", "--n", "40",
                "--n-points", "32", "--patch-samples", "128", "--out", out});
  }

  fs::path dir;
};

} // namespace

TEST(Cli, SimulateThroughComMatchesStoppingDistance) {
  const auto dir = test_support::temp_dir("cli_sim");
  // box_0 is a 0.3 m cube of 8.1 kg, so 16.2 N s gives v0 = 2 m/s.
  const auto r = run({"--out-dir", dir.string(), "simulate", "--shape", "box_0", "--impulse", "16.2,0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const double expected = 4.0 / (2.0 * slidenet::sim::kDefaultMu * slidenet::sim::kGravity);
  EXPECT_NEAR(field(r.out, "(distance "), expected, 0.01 * expected);
  EXPECT_NEAR(field(r.out, "total_rotation "), 0.0, 1e-9);
  EXPECT_TRUE(fs::exists(dir / "simulate.config.json"));
  fs::remove_all(dir);
}

TEST(Cli, SimulateZeroImpulseStaysPut) {
  const auto dir = test_support::temp_dir("cli_zero");
  const auto r = run({"--out-dir", dir.string(), "simulate", "--impulse", "0,0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("final_pos 0,0 m"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("total_rotation 0 deg"), std::string::npos) << r.out;
  fs::remove_all(dir);
}

TEST(Cli, SimulateOffsetSpinsAndTraces) {
  const auto dir = test_support::temp_dir("cli_trace");
  const auto r = run({"--out-dir", dir.string(), "simulate", "--impulse", "16.2,0", "--at", "0,0.1", "--trace", "t.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(field(r.out, "total_rotation "), 10.0);
  std::ifstream in(dir / "t.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,x,y,heading_deg,vx,vy,omega");
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"gen", "--bogus"}).code, 1);
  EXPECT_EQ(run({"simulate", "--impulse", "1;2"}).code, 1);
  EXPECT_EQ(run({"simulate", "--shape", "sphere_1"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  const auto missing = run({"train", "--dataset", "/nonexistent/slidenet", "--out", "/tmp/never"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("config.json"), std::string::npos);
  EXPECT_EQ(run({"simulate", "--impulse", "1,0", "--dt", "0"}).code, 1);
}

TEST(Cli, ShapeExportWritesObj) {
  const auto dir = test_support::temp_dir("cli_shape");
  const auto r = run({"--out-dir", dir.string(), "shape", "--shape", "cylinder_2", "--out", "c.obj"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto mesh = slidenet::geometry::load_mesh(dir / "c.obj");
  EXPECT_TRUE(slidenet::geometry::is_watertight(mesh));
  fs::remove_all(dir);
}

TEST_F(CliRun, GenIsDeterministicAndSummarises) {
  const auto a = gen("a");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("generated 40 simulations"), std::string::npos);
  EXPECT_NE(a.out.find("outliers removed"), std::string::npos);
  ASSERT_EQ(gen("b").code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "b" / "manifest.jsonl"));
  ASSERT_EQ(gen("c", "4").code, 0);
  EXPECT_NE(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "c" / "manifest.jsonl"));
}

TEST_F(CliRun, GenSummaryTravelBandForDefaults) {
  const auto r = run({"--out-dir", dir.string(), "--seed", "11", "gen", "--shapes", "box:2,cylinder:2", "--n", "200",
                      "--n-points", "16", "--out", "band"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("% within 0.5-5 m");
  ASSERT_NE(pos, std::string::npos) << r.out;
  const auto open = r.out.rfind('(', pos);
  EXPECT_GE(std::stod(r.out.substr(open + 1)), 90.0) << r.out;
}

TEST_F(CliRun, GenReplaysFromSnapshot) {
  ASSERT_EQ(gen("a").code, 0);
  const auto r = run({"--out-dir", dir.string(), "--config", (dir / "a" / "config.json").string(), "gen", "--out", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "r" / "manifest.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "config.json"), slurp(dir / "r" / "config.json"));
}

TEST_F(CliRun, ProtocolTrainEvalRoundTrip) {
  ASSERT_EQ(gen("ds").code, 0);
  const std::vector<std::string> base{"--out-dir", dir.string(), "--seed", "5", "--config", (dir / "tiny.json").string()};
  auto args = base;
  for (const char* a : {"protocol", "--dataset", "ds", "--out", "run", "--epochs", "2", "--protocol", "obj_gen", "--quiet"})
    args.emplace_back(a);
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.json", "history.csv", "best.ckpt", "metrics.json", "curves.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  EXPECT_NE(r.out.find("mean rel position"), std::string::npos);

  // eval twice on the saved checkpoint reproduces the protocol's metrics.
  for (const char* out : {"ev1", "ev2"}) {
    const auto e = run({"--out-dir", dir.string(), "eval", "--checkpoint", "run/best.ckpt", "--dataset", "ds", "--out", out});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(slurp(dir / out / "metrics.json"), slurp(dir / "run" / "metrics.json"));
  }

  // The run snapshot replays the run.
  const auto replay = run({"--out-dir", dir.string(), "--config", (dir / "run" / "config.json").string(), "protocol",
                           "--dataset", "ds", "--out", "replay", "--quiet"});
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(slurp(dir / "run" / "best.ckpt"), slurp(dir / "replay" / "best.ckpt"));
  EXPECT_EQ(slurp(dir / "run" / "metrics.json"), slurp(dir / "replay" / "metrics.json"));

  // A plain_mlp run on the same data records its variant.
  args = base;
  for (const char* a : {"protocol", "--dataset", "ds", "--out", "plain", "--epochs", "1", "--variant", "plain_mlp", "--quiet"})
    args.emplace_back(a);
  ASSERT_EQ(run(args).code, 0);
  const auto metrics = nlohmann::json::parse(slurp(dir / "plain" / "metrics.json"));
  EXPECT_EQ(metrics.at("variant"), "plain_mlp");
}

TEST_F(CliRun, TrainWritesCheckpointWithoutTestMetrics) {
  ASSERT_EQ(gen("ds").code, 0);
  const auto r = run({"--out-dir", dir.string(), "--config", (dir / "tiny.json").string(), "train", "--dataset", "ds",
                      "--out", "t", "--epochs", "1", "--heads", "mass_inertia,velocities", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "t" / "best.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "t" / "metrics.json"));
  const auto model = slidenet::nn::load_checkpoint(dir / "t" / "best.ckpt");
  EXPECT_TRUE(model->config().head_mass_inertia);
  EXPECT_TRUE(model->config().head_velocities);
  EXPECT_EQ(run({"--out-dir", dir.string(), "train", "--dataset", "ds", "--out", "u", "--heads", "colour"}).code, 1);
}
