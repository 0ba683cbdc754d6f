#pragma once

// Loss of the hybrid column model against an outlet dataset and its gradient
// with respect to the network parameters.
//
// The gradient path eliminates the two linear boundary constraints, leaving
// the implicit ODE  M_r z' = f_r(z, theta). Its adjoint
//
//   M_r^T mu' = -J_r^T mu,   mu(t_i-) = mu(t_i+) + M_r^-T dg/du_i e_out
//
// is integrated backwards from the last observation, and
// dG/dtheta = int_0^T mu^T df_r/dtheta dt is carried as quadrature states of
// the backward solve.

#include <functional>
#include <string>
#include <vector>

#include "sorbkit/insilico.hpp"
#include "sorbkit/integrator.hpp"
#include "sorbkit/network.hpp"

namespace sorbkit {

struct HybridOptions
{
  int n_elements = 42;
  IntegratorConfig integrator{.rel_tol = 1e-6, .abs_tol = 1e-6};

  SimulationOptions simulation() const { return {n_elements, integrator}; }
};

/// Solves the hybrid model with the network as uptake law.
Simulation simulate_hybrid(const NetParams& net, const Scenario& sc, const HybridOptions& opt);

struct LossReport
{
  bool success = false;
  double loss = 0.0;                // sum r_i^2 / N, +inf when the forward solve failed
  std::vector<double> residuals;    // model - observed at each sample time
  std::vector<double> predictions;  // model outlet concentration
  Simulation forward;
  std::string message;
};

LossReport hybrid_loss(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt);

struct GradientReport
{
  bool success = false;
  Vec grad;
  double loss = 0.0;
  IntegratorStats backward;
  double quadrature_error = 0.0;
  std::string message;
};

/// Vector-Jacobian product sum_i dg_du[i] d u(t_i)/d theta for the outlet
/// concentrations u of a solved hybrid model. Observations at t = 0 carry no
/// sensitivity.
GradientReport adjoint_vjp(const NetParams& net, const Simulation& forward, const std::vector<double>& times_min,
                           const std::vector<double>& dg_du, const HybridOptions& opt);

/// Gradient of hybrid_loss, dg/du_i = 2 r_i / N. Reports failure if either
/// solve fails.
GradientReport adjoint_gradient(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt);

/// Central differences of f on the listed coordinates; other entries are 0.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, const std::vector<Eigen::Index>& coords,
                double step = 1e-5);

/// Central differences of hybrid_loss.
Vec fd_gradient(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt,
                const std::vector<Eigen::Index>& coords, double step = 1e-5);

}  // namespace sorbkit
