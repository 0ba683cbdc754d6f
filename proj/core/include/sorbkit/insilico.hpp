#pragma once

// Mechanistic reference simulations and the noisy outlet datasets sampled
// from them.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sorbkit/integrator.hpp"
#include "sorbkit/model.hpp"
#include "sorbkit/ocfem.hpp"

namespace sorbkit {

struct SimulationOptions
{
  int n_elements = 60;
  IntegratorConfig integrator{.rel_tol = 1e-8, .abs_tol = 1e-8};
};

/// A solved column: the discretized model plus its trajectory in t*.
struct Simulation
{
  std::shared_ptr<const ColumnModel> model;
  Trajectory trajectory;

  bool success() const { return trajectory.success; }

  /// State at t minutes, taken on the feed phase active at t.
  Vec state_at(double t_min) const;
  double outlet_at(double t_min) const;
  std::vector<double> outlet(const std::vector<double>& t_min) const;
};

Simulation simulate(const Scenario& sc, const UptakeFn& uptake, const SimulationOptions& opt);

/// The reference uptake law of the scenario on 60 elements at 1e-8 tolerances.
Simulation simulate_mechanistic(const Scenario& sc, const SimulationOptions& opt = {});

struct Dataset
{
  std::vector<double> times;     // min
  std::vector<double> observed;  // mg/L, noisy
  std::vector<double> clean;     // mg/L
  std::vector<double> feed;      // mg/L
  Scenario scenario;
  double noise_frac = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return times.size(); }
};

/// i.i.d. N(0, sigma^2) samples added to clean; deterministic per seed.
std::vector<double> add_noise(const std::vector<double>& clean, double sigma, std::uint64_t seed);

/// sigma = noise_frac * max feed concentration. Throws std::runtime_error if
/// the mechanistic solve fails.
Dataset make_dataset(const Scenario& sc, double noise_frac, std::uint64_t seed, const SimulationOptions& opt = {});

/// Header t_min,c_obs_mgL,c_clean_mgL,c_feed_mgL; values printed round-trip exact.
std::string dataset_csv(const Dataset& ds);
void write_dataset_csv(const std::string& path, const Dataset& ds);

/// Reads the columns back; scenario, sigma and seed are taken from the caller.
Dataset read_dataset_csv(const std::string& path, const Scenario& sc);

/// JSON sidecar: scenario, seed, noise fraction, sigma, sample count, version.
std::string dataset_manifest_json(const Dataset& ds);

}  // namespace sorbkit
