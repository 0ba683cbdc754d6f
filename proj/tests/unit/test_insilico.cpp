#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "sorbkit/insilico.hpp"

using namespace sorbkit;

namespace {

const Simulation& langmuir_ldf_run()
{
  static const Simulation sim = simulate_mechanistic(training_scenario(parse_case("langmuir_ldf")));
  return sim;
}

}  // namespace

TEST(Simulate, OutletStartsAtInitialConcentration)
{
  const auto& sim = langmuir_ldf_run();
  ASSERT_TRUE(sim.success());
  EXPECT_NEAR(sim.outlet_at(0.0), 0.0, 1e-8);
}

TEST(Simulate, BreakthroughIsMonotone)
{
  const auto& sim = langmuir_ldf_run();
  std::vector<double> t(1101);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * static_cast<double>(i);
  const auto c = sim.outlet(t);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GE(c[i], c[i - 1] - 1e-6) << "t = " << t[i];
  EXPECT_GT(c.back(), 1.0);
}

TEST(Simulate, LongRunReachesEquilibrium)
{
  auto sc = training_scenario(parse_case("sips_ldf"));
  sc.feed.t_obs = 550.0;
  const auto sim = simulate_mechanistic(sc);
  ASSERT_TRUE(sim.success());
  const double c_in = 5.5;
  EXPECT_NEAR(sim.outlet_at(550.0), c_in, 1e-3 * c_in);
  const Vec y = sim.state_at(550.0);
  const double qs = isotherm_eval(sc.isotherm, c_in);
  const auto& mesh = sim.model->mesh();
  for (double x : {0.1, 0.5, 0.9}) EXPECT_NEAR(interpolate(y, mesh, x).q, qs, 1e-3 * qs);
}

TEST(Simulate, DesorptionFollowsFeedDrop)
{
  const auto sc = test_scenario(parse_case("langmuir_ldf"));
  const auto sim = simulate_mechanistic(sc);
  ASSERT_TRUE(sim.success());
  EXPECT_GT(sim.outlet_at(109.0), sim.outlet_at(185.0));
  EXPECT_LT(sim.outlet_at(185.0), 5.5);
  EXPECT_GT(sim.outlet_at(270.0), 5.5);
}

TEST(Simulate, UptakeLawIsInjected)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  SimulationOptions opt;
  opt.n_elements = 20;
  // No uptake: the bed behaves as an inert dispersive column.
  const auto sim = simulate(sc, [](double, double) { return UptakeRate{}; }, opt);
  ASSERT_TRUE(sim.success());
  EXPECT_NEAR(sim.outlet_at(40.0), 5.5, 1e-3);
}

TEST(Dataset, SampleCountAndColumns)
{
  const auto ds = make_dataset(training_scenario(parse_case("langmuir_ldf")), 0.05, 7);
  EXPECT_EQ(ds.size(), 56u);
  EXPECT_DOUBLE_EQ(ds.sigma, 0.275);
  EXPECT_EQ(ds.times.size(), ds.observed.size());
  EXPECT_EQ(ds.clean.size(), ds.observed.size());
  for (double c : ds.clean) EXPECT_GE(c, 0.0);
}

TEST(Dataset, ZeroNoiseIsClean)
{
  const auto ds = make_dataset(training_scenario(parse_case("sips_vermeulen")), 0.0, 3);
  EXPECT_EQ(ds.observed, ds.clean);
}

TEST(Dataset, DeterministicPerSeed)
{
  const auto sc = training_scenario(parse_case("langmuir_ildf"));
  const auto a = make_dataset(sc, 0.05, 11);
  const auto b = make_dataset(sc, 0.05, 11);
  const auto c = make_dataset(sc, 0.05, 12);
  EXPECT_EQ(dataset_csv(a), dataset_csv(b));
  EXPECT_NE(a.observed, c.observed);
}

TEST(Dataset, NegativeNoiseRejected)
{
  EXPECT_THROW(make_dataset(training_scenario(parse_case("langmuir_ldf")), -0.1, 1), std::invalid_argument);
}

TEST(Noise, MonteCarloStandardDeviation)
{
  const std::vector<double> clean(10000, 2.0);
  const double sigma = 0.05 * 5.5;
  const auto noisy = add_noise(clean, sigma, 99);
  double mean = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) mean += noisy[i] - clean[i];
  mean /= static_cast<double>(noisy.size());
  double var = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) var += std::pow(noisy[i] - clean[i] - mean, 2);
  const double sd = std::sqrt(var / static_cast<double>(noisy.size() - 1));
  EXPECT_NEAR(sd, sigma, 0.05 * sigma);
  EXPECT_NEAR(mean, 0.0, 4.0 * sigma / 100.0);
}

TEST(Dataset, CsvRoundTrip)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  const auto ds = make_dataset(sc, 0.05, 5);
  const auto path = std::filesystem::temp_directory_path() / "sorbkit_dataset_roundtrip.csv";
  write_dataset_csv(path.string(), ds);
  const auto back = read_dataset_csv(path.string(), sc);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.times[i], ds.times[i]);
    EXPECT_EQ(back.observed[i], ds.observed[i]);
    EXPECT_EQ(back.clean[i], ds.clean[i]);
  }
  EXPECT_EQ(dataset_csv(ds).substr(0, 38), "t_min,c_obs_mgL,c_clean_mgL,c_feed_mgL");
}

TEST(Dataset, MalformedCsvRejected)
{
  const auto path = std::filesystem::temp_directory_path() / "sorbkit_dataset_bad.csv";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    std::fputs("t_min,c_obs_mgL,c_clean_mgL,c_feed_mgL\n0,abc,0,5.5\n", f);
    std::fclose(f);
  }
  EXPECT_ANY_THROW(read_dataset_csv(path.string(), training_scenario(parse_case("langmuir_ldf"))));
  std::filesystem::remove(path);
}

TEST(Dataset, ManifestCarriesProvenance)
{
  const auto ds = make_dataset(training_scenario(parse_case("langmuir_ldf")), 0.05, 42);
  const auto j = dataset_manifest_json(ds);
  EXPECT_NE(j.find("\"seed\": 42"), std::string::npos);
  EXPECT_NE(j.find("sigma_mgL"), std::string::npos);
  EXPECT_NE(j.find("langmuir"), std::string::npos);
}
