#pragma once

// Two-phase fit of the network parameters: ADAM with stepwise exponential
// learning-rate decay, then BFGS with a strong-Wolfe line search.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sorbkit/network.hpp"
#include "sorbkit/sensitivity.hpp"

namespace sorbkit {

struct TrainConfig
{
  double adam_lr = 0.05;
  int decay_every = 20;
  double decay_factor = 0.985;
  int adam_iters = 180;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int qn_max_iters = 500;
  double grad_tol = 1e-6;  // on the infinity norm
  std::uint64_t seed = 0;
  int checkpoint_every = 25;
  std::string checkpoint_path;  // empty disables checkpoints
  double max_failure_frac = 0.25;
  bool fd_fallback = true;

  void validate() const;
};

struct AdamState
{
  Vec m;
  Vec v;
};

/// lr0 * decay_factor^floor(iter / decay_every).
double adam_lr(const TrainConfig& cfg, int iter);

/// Bias-corrected ADAM update for 1-based iter. Returns false and leaves
/// theta and moments untouched when grad is not finite.
bool adam_step(Vec& theta, const Vec& grad, AdamState& st, int iter, const TrainConfig& cfg, double lr_scale = 1.0);

// ---------------------------------------------------------------------------

/// Returns false when the objective cannot be evaluated at x.
using Objective = std::function<bool(const Vec& x, double& f, Vec& g)>;

struct BfgsConfig
{
  int max_iters = 500;
  double grad_tol = 1e-6;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 25;
};

struct BfgsResult
{
  Vec x;
  double f = 0.0;
  Vec g;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Called after every accepted iterate with (iteration, x, f, g, step length).
using BfgsObserver = std::function<void(int, const Vec&, double, const Vec&, double)>;

BfgsResult bfgs_minimize(const Objective& fn, const Vec& x0, const BfgsConfig& cfg, const BfgsObserver& observe = {});

// ---------------------------------------------------------------------------

struct TrainRecord
{
  int iteration = 0;  // global, ADAM iterations first
  std::string phase;  // "adam" or "bfgs"
  double loss = 0.0;
  double grad_norm = 0.0;  // infinity norm
  double lr = 0.0;         // ADAM learning rate, BFGS step length
  double wall_time = 0.0;  // seconds since start
  int failures = 0;        // cumulative solver failures
  double best_loss = 0.0;
};

struct TrainHistory
{
  std::vector<TrainRecord> records;

  std::string csv() const;
};

struct TrainResult
{
  NetParams best;
  double best_loss = 0.0;
  TrainHistory history;
  bool aborted = false;
  bool converged = false;
  std::string message;
  int failures = 0;
  int fd_fallbacks = 0;
};

/// Loss and gradient at theta; the adjoint path with an optional full
/// finite-difference fallback.
bool hybrid_objective(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt,
                      bool fd_fallback, double& loss, Vec& grad, bool* used_fd = nullptr);

/// Runs the schedule from theta0, or from a checkpoint when resume is given.
/// Returns the lowest-loss parameters seen.
TrainResult train(const NetParams& theta0, const Dataset& ds, const Scenario& sc, const TrainConfig& cfg,
                  const HybridOptions& opt, const Checkpoint* resume = nullptr);

}  // namespace sorbkit
