#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace sorbkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Linearly implicit DAE  M y' = f(t, y)  with constant mass matrix M.
///
/// Time is split into segments by `events`; segment k spans
/// [events[k-1], events[k]] and callbacks receive the segment index so that
/// piecewise inputs are evaluated on the correct side of a discontinuity.
/// Rows listed in `algebraic_rows` have zero mass rows; each one is paired with
/// the entry of `algebraic_vars` that consistent initialization solves for.
struct DaeSystem
{
  using RhsFn = std::function<void(double t, const Vec& y, Vec& f, int segment)>;
  using JacFn = std::function<void(double t, const Vec& y, Mat& jac, int segment)>;
  using EventFn = std::function<void(double t, Vec& y, int next_segment)>;

  Eigen::Index size = 0;
  Mat mass;  // empty means identity
  std::vector<Eigen::Index> algebraic_rows;
  std::vector<Eigen::Index> algebraic_vars;
  RhsFn rhs;
  JacFn jacobian;  // optional; finite differences when empty
  std::vector<double> events;
  EventFn at_event;  // optional state map applied when an event is crossed

  // Quadrature states w' = quadrature(t, y). They do not feed back into f.
  Eigen::Index n_quadrature = 0;
  RhsFn quadrature;

  bool has_mass() const { return mass.size() != 0; }

  /// F(t, y, y') = f(t, y) - M y'.
  Vec residual(double t, const Vec& y, const Vec& yp, int segment = 0) const;

  /// Diagonal 0/1 description of M: 0 on algebraic rows, 1 elsewhere.
  std::vector<int> mass_pattern() const;

  /// Jacobian from `jacobian` or forward differences of `rhs`.
  void eval_jacobian(double t, const Vec& y, Mat& jac, int segment) const;
};

}  // namespace sorbkit
