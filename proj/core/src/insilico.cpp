#include "sorbkit/insilico.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sorbkit/version.hpp"

namespace sorbkit {

Vec Simulation::state_at(double t_min) const
{
  const double ts = model->to_dimensionless(t_min);
  const auto phase = model->feed().phase_index(t_min);
  return trajectory.eval(ts, std::min(phase, trajectory.segments().size() - 1));
}

double Simulation::outlet_at(double t_min) const
{
  return state_at(t_min)[model->mesh().outlet_index()];
}

std::vector<double> Simulation::outlet(const std::vector<double>& t_min) const
{
  std::vector<double> out;
  out.reserve(t_min.size());
  for (double t : t_min) out.push_back(outlet_at(t));
  return out;
}

Simulation simulate(const Scenario& sc, const UptakeFn& uptake, const SimulationOptions& opt)
{
  sc.validate();
  Simulation sim;
  sim.model = make_column_model(Mesh(opt.n_elements), sc.column, uptake, sc.isotherm, sc.feed);
  const Vec y0 = sim.model->initial_state(sc.c0);
  sim.trajectory = integrate(sim.model->dae(), y0, 0.0, sim.model->to_dimensionless(sc.feed.t_obs), opt.integrator);
  return sim;
}

Simulation simulate_mechanistic(const Scenario& sc, const SimulationOptions& opt)
{
  return simulate(sc, kinetic_uptake(sc.kinetics), opt);
}

std::vector<double> add_noise(const std::vector<double>& clean, double sigma, std::uint64_t seed)
{
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be nonnegative");
  std::vector<double> out(clean);
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& v : out) v += dist(rng);
  return out;
}

Dataset make_dataset(const Scenario& sc, double noise_frac, std::uint64_t seed, const SimulationOptions& opt)
{
  if (!(noise_frac >= 0.0)) throw std::invalid_argument("make_dataset: noise fraction must be nonnegative");
  const Simulation sim = simulate_mechanistic(sc, opt);
  if (!sim.success()) throw std::runtime_error("make_dataset: mechanistic solve failed: " + sim.trajectory.message);

  Dataset ds;
  ds.scenario = sc;
  ds.noise_frac = noise_frac;
  ds.sigma = noise_frac * sc.feed.max_concentration();
  ds.seed = seed;
  ds.times = sc.feed.sample_times();
  for (double t : ds.times) {
    // Collocation undershoot ahead of the front is below the solver tolerance.
    ds.clean.push_back(std::max(sim.outlet_at(t), 0.0));
    ds.feed.push_back(feed_at(sc.feed, t));
  }
  ds.observed = add_noise(ds.clean, ds.sigma, seed);
  return ds;
}

namespace {

std::string fmt(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string dataset_csv(const Dataset& ds)
{
  std::string out = "t_min,c_obs_mgL,c_clean_mgL,c_feed_mgL\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    out += fmt(ds.times[i]) + "," + fmt(ds.observed[i]) + "," + fmt(ds.clean[i]) + "," + fmt(ds.feed[i]) + "\n";
  return out;
}

void write_dataset_csv(const std::string& path, const Dataset& ds)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  out << dataset_csv(ds);
}

Dataset read_dataset_csv(const std::string& path, const Scenario& sc)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  Dataset ds;
  ds.scenario = sc;
  std::string line;
  std::getline(in, line);
  if (line.rfind("t_min,c_obs_mgL", 0) != 0) throw std::runtime_error("dataset: unexpected header in " + path);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("dataset: bad number on line " + std::to_string(lineno) + " of " + path);
      }
    }
    if (row.size() < 2) throw std::runtime_error("dataset: too few columns on line " + std::to_string(lineno));
    ds.times.push_back(row[0]);
    ds.observed.push_back(row[1]);
    ds.clean.push_back(row.size() > 2 ? row[2] : row[1]);
    ds.feed.push_back(row.size() > 3 ? row[3] : feed_at(sc.feed, row[0]));
  }
  return ds;
}

std::string dataset_manifest_json(const Dataset& ds)
{
  nlohmann::ordered_json j;
  j["scenario"] = nlohmann::ordered_json::parse(scenario_to_json(ds.scenario));
  j["seed"] = ds.seed;
  j["noise_frac"] = ds.noise_frac;
  j["sigma_mgL"] = ds.sigma;
  j["samples"] = ds.size();
  j["version"] = kVersion;
  return j.dump(2) + "\n";
}

}  // namespace sorbkit
