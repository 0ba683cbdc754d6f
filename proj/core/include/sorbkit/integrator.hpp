#pragma once

// Variable-order (1-5), variable-step BDF integration of linearly implicit
// index-1 DAEs. Steps are taken on a quasi-constant grid: the backward
// difference array is rescaled whenever the step changes, which keeps the
// leading coefficient of the corrector fixed for a given order.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sorbkit/dae.hpp"

namespace sorbkit {

struct IntegratorConfig
{
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  int max_order = 5;
  double initial_step = 0.0;  // 0 selects automatically
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 200000;
  bool dense_output = true;
  bool quadrature_error_control = true;

  void validate() const;
};

struct IntegratorStats
{
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
  std::size_t jacobian_evals = 0;
  std::size_t factorizations = 0;
  std::size_t newton_iters = 0;
  std::size_t newton_failures = 0;
  double quadrature_error = 0.0;  // accumulated local error estimates of the quadratures
};

/// Dense solution of one integration. Integration is split into segments at
/// the DAE events; at an event time `eval` returns the right-hand (restarted)
/// state, `eval(t, segment)` disambiguates.
class Trajectory
{
public:
  struct Step
  {
    double t = 0.0;   // step end time
    double h = 0.0;   // signed step size of the interpolant grid
    int order = 1;
    Mat diffs;        // n x (order + 1) backward differences at t
  };

  struct Segment
  {
    double t_begin = 0.0;
    double t_end = 0.0;
    Vec y_begin;
    std::vector<Step> steps;
  };

  bool success = false;
  std::string message;
  double last_good_time = 0.0;
  IntegratorStats stats;

  const std::vector<Segment>& segments() const { return segments_; }
  double t_begin() const;
  double t_end() const;
  Eigen::Index size() const { return n_; }

  Vec eval(double t) const;
  Vec eval(double t, std::size_t segment) const;

  /// Index of the segment holding t (the later one at an event time).
  std::size_t segment_of(double t) const;

  /// Accepted step end times across all segments, in integration order.
  std::vector<double> step_times() const;
  /// State stored at the given accepted step (index into step_times()).
  Vec snapshot(std::size_t step_index) const;

  const Vec& final_state() const { return final_state_; }
  const Vec& final_quadrature() const { return final_quadrature_; }

private:
  friend class BdfSolver;
  friend Trajectory integrate(const DaeSystem&, const Vec&, double, double, const IntegratorConfig&, const Vec&);
  Eigen::Index n_ = 0;
  int direction_ = 1;
  std::vector<Segment> segments_;
  Vec final_state_;
  Vec final_quadrature_;
};

/// Integrates M y' = f over span, restarting at every event inside the span.
/// Consistent initialization of the algebraic variables is applied at the
/// start and after every event. A span with t_end < t_begin integrates
/// backwards. Failures are reported in the returned trajectory
/// (success == false, last_good_time).
Trajectory integrate(const DaeSystem& dae, const Vec& y0, double t_begin, double t_end,
                     const IntegratorConfig& cfg, const Vec& w0 = Vec());

/// Newton solve of the algebraic rows for the algebraic variables at time t.
/// Returns false if it did not converge.
bool make_consistent(const DaeSystem& dae, double t, Vec& y, int segment, double tol);

}  // namespace sorbkit
