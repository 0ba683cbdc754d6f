#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pipeline.hpp"

using namespace sorbkit;
using namespace sorbkit::pipeline;

namespace {

fs::path scratch(const std::string& name)
{
  const fs::path p = fs::temp_directory_path() / ("sorbkit_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t line_count(const fs::path& p)
{
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args)
{
  const std::string cmd = std::string(SORBKIT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Digest, KnownSha256)
{
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, JsonFields)
{
  const auto dir = scratch("manifest");
  write_text(dir / "a.txt", "abc");
  RunManifest m;
  m.command = "generate";
  m.seeds = {{"base", 3}};
  m.add_output(dir / "a.txt");
  const auto j = nlohmann::json::parse(m.to_json());
  EXPECT_EQ(j["command"], "generate");
  EXPECT_TRUE(j.contains("version"));
  EXPECT_EQ(j["seeds"]["base"], 3);
  ASSERT_EQ(j["outputs"].size(), 1u);
  EXPECT_EQ(j["outputs"][0]["sha256"], sha256_hex("abc"));
  EXPECT_TRUE(j.contains("wall_time_s"));
}

TEST(Generate, AllCasesWriteTwelveDatasets)
{
  const auto dir = scratch("gen_all");
  GenerateOptions opt;
  opt.out = dir;
  std::ostringstream log;
  ASSERT_EQ(cmd_generate(opt, log), kExitOk);
  int csv = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") ++csv;
  EXPECT_EQ(csv, 12);
  // Header plus 56 samples on the 0.5 min grid up to 27.5 min.
  EXPECT_EQ(line_count(dir / "langmuir_ldf_train.csv"), 57u);
  EXPECT_TRUE(fs::exists(dir / "generate_manifest.json"));
  const auto j = nlohmann::json::parse(slurp(dir / "generate_manifest.json"));
  EXPECT_EQ(j["outputs"].size(), 24u);
}

TEST(Generate, SameSeedSameDigests)
{
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  std::ostringstream log;
  GenerateOptions opt;
  opt.cases = "sips_vermeulen";
  opt.seed = 9;
  opt.out = a;
  cmd_generate(opt, log);
  opt.out = b;
  cmd_generate(opt, log);
  for (const char* f : {"sips_vermeulen_train.csv", "sips_vermeulen_test.csv"})
    EXPECT_EQ(sha256_file(a / f), sha256_file(b / f)) << f;
  opt.seed = 10;
  opt.out = b;
  cmd_generate(opt, log);
  EXPECT_NE(sha256_file(a / "sips_vermeulen_train.csv"), sha256_file(b / "sips_vermeulen_train.csv"));
}

TEST(Generate, UnknownCaseIsValidationError)
{
  GenerateOptions opt;
  opt.out = scratch("gen_bad");
  opt.cases = "langmuir_foo";
  std::ostringstream log;
  EXPECT_THROW(cmd_generate(opt, log), ValidationError);
}

TEST(Config, MalformedScenarioReportsField)
{
  const auto dir = scratch("cfg");
  const auto path = dir / "bad.json";
  write_text(path, "{\n  \"c0\": 0,\n  \"column\": {\"L\": 1, \"Pe\": -3, \"eps\": 0.5, \"v\": 1}\n}\n");
  try {
    load_config(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
  write_text(path, "{ not json");
  EXPECT_THROW(load_config(path), ValidationError);
  EXPECT_THROW(load_config(dir / "missing.json"), ValidationError);
}

TEST(Config, CaseKeyAndOverrides)
{
  const auto dir = scratch("cfg_ok");
  write_text(dir / "c.json", R"({"case": "sips_ildf", "train": {"adam_iters": 7}})");
  const auto cfg = load_config(dir / "c.json");
  const auto cases = resolve_cases("default", cfg);
  ASSERT_EQ(cases.size(), 1u);
  EXPECT_EQ(cases[0].id.name(), "sips_ildf");
  TrainConfig tc;
  apply_train_overrides(cfg.train, tc);
  EXPECT_EQ(tc.adam_iters, 7);
  EXPECT_THROW(apply_train_overrides(nlohmann::json{{"adam_iters", "x"}}, tc), ValidationError);
}

TEST(Seeds, DistinctPerCaseAndSplit)
{
  const auto a = parse_case("langmuir_ldf"), b = parse_case("sips_ldf");
  EXPECT_NE(dataset_seed(1, a, 0), dataset_seed(1, a, 1));
  EXPECT_NE(dataset_seed(1, a, 0), dataset_seed(1, b, 0));
  EXPECT_NE(dataset_seed(1, a, 0), dataset_seed(2, a, 0));
}

TEST(Parallel, RunsEveryIndexAndRethrows)
{
  std::vector<int> hit(17, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] = 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(5, 2, [](std::size_t i) {
                 if (i == 3) throw std::runtime_error("x");
               }),
               std::runtime_error);
}

TEST(Simulate, WritesCurveAndManifest)
{
  const auto dir = scratch("sim");
  SimulateOptions opt;
  opt.out = dir;
  opt.n_elements = 20;
  opt.tol = 1e-6;
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(opt, log), kExitOk);
  EXPECT_TRUE(fs::exists(dir / "langmuir_ldf_train_outlet.csv"));
  EXPECT_TRUE(fs::exists(dir / "langmuir_ldf_train_outlet.svg"));
  EXPECT_TRUE(fs::exists(dir / "simulate_manifest.json"));
  opt.schedule = "validation";
  EXPECT_THROW(cmd_simulate(opt, log), ValidationError);
}

TEST(Svg, PlotFailureDoesNotThrow)
{
  const auto dir = scratch("svg");
  write_text(dir / "file", "x");
  std::ostringstream log;
  EXPECT_NO_THROW(write_svg(dir / "file" / "plot.svg", "<svg/>", log));
  EXPECT_FALSE(log.str().empty());
  const auto svg = svg_chart("t", "x", "y", {{"a", {0, 1, 2}, {1, 0, 1}}, {"b", {0, 2}, {0, 0}, true}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("circle"), std::string::npos);
}

TEST(Taylor, VermeulenCoefficientsPrinted)
{
  std::ostringstream log;
  ASSERT_EQ(cmd_taylor(TaylorOptions{}, log), kExitOk);
  EXPECT_NE(log.str().find("d/dq*        0.229"), std::string::npos) << log.str();
  TaylorOptions bad;
  bad.kinetic = "fickian";
  EXPECT_THROW(cmd_taylor(bad, log), ValidationError);
  bad = TaylorOptions{};
  bad.order = 3;
  EXPECT_THROW(cmd_taylor(bad, log), ValidationError);
}

TEST(Cli, ExitCodes)
{
  EXPECT_EQ(run_cli("taylor --kinetic ildf --qstar 49.23 --q 49.22 --order 1"), 0);
  EXPECT_EQ(run_cli("taylor --kinetic nonsense"), 2);
  EXPECT_EQ(run_cli("generate --case nope --out " + scratch("cli").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("discover --theta /nonexistent/theta.bin --out " + scratch("cli2").string()), 1);
}
