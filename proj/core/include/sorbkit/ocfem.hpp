#pragma once

// Orthogonal collocation on finite elements with cubic Hermite bases for the
// fixed-bed advection-dispersion-sorption equations in dimensionless form
//
//   dc/dt* = -(1-eps)/eps * tau_s * g(q, q*) - dc/dx* + 1/Pe d2c/dx*2
//   dq/dt* =  tau_s * g(q, q*)
//   dc/dx*(0) = Pe (c(0) - c_in),   dc/dx*(1) = 0
//
// State layout (size 4 n_elements + 2):
//   [2i]           c at node i
//   [2i + 1]       dc/dx* at node i
//   [2(n+1) + 2k + p]  q at collocation point p of element k
//
// Equation rows: row 0 is the inlet condition, rows 1 + 2k + p collocate the
// liquid balance, row 2n + 1 is the outlet condition, and the q rows follow
// in the same order as the q unknowns.

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sorbkit/dae.hpp"
#include "sorbkit/model.hpp"

namespace sorbkit {

class Mesh
{
public:
  explicit Mesh(int n_elements);

  int n_elements() const { return n_; }
  int n_nodes() const { return n_ + 1; }
  double h() const { return h_; }
  double node(int i) const { return i * h_; }

  /// Local collocation coordinates: zeros of the shifted degree-2 Legendre polynomial.
  static constexpr std::array<double, 2> kCollocation{0.21132486540518711775, 0.78867513459481288225};

  double collocation_point(int element, int p) const { return (element + kCollocation[static_cast<std::size_t>(p)]) * h_; }
  int n_collocation() const { return 2 * n_; }

  Eigen::Index c_dofs() const { return 2 * (n_ + 1); }
  Eigen::Index state_size() const { return c_dofs() + n_collocation(); }

  Eigen::Index value_index(int node) const { return 2 * node; }
  Eigen::Index slope_index(int node) const { return 2 * node + 1; }
  Eigen::Index q_index(int element, int p) const { return c_dofs() + 2 * element + p; }
  Eigen::Index outlet_index() const { return value_index(n_); }

  /// Element index and local coordinate of x* (the last element owns x* = 1).
  std::pair<int, double> locate(double x) const;

private:
  int n_;
  double h_;
};

struct HermiteBasis
{
  std::array<double, 4> value{};
  std::array<double, 4> d1{};  // d/dx*
  std::array<double, 4> d2{};  // d2/dx*2
};

/// H1 = (1+2u)(1-u)^2, H2 = u(1-u)^2 h, H3 = u^2(3-2u), H4 = u^2(u-1) h with
/// derivatives taken with respect to the global coordinate x* = x_k + u h.
HermiteBasis hermite_basis(double u, double h);

struct ProfilePoint
{
  double c = 0.0;
  double dc_dx = 0.0;
  double q = 0.0;
};

/// Liquid concentration and slope from the Hermite expansion, q by
/// piecewise-linear interpolation of the collocation values (linear
/// extrapolation towards the column ends).
ProfilePoint interpolate(const Vec& state, const Mesh& mesh, double x);

/// Uptake law (q, q*) -> g in min^-1 with partial derivatives.
using UptakeFn = std::function<UptakeRate(double q, double qstar)>;

/// Optional manufactured forcing s(x*, t*) added to the liquid balance.
using SourceFn = std::function<double(double x, double t)>;

UptakeFn kinetic_uptake(const KineticSpec& kin);

/// Uptake inputs at one collocation point.
struct CollocationSample
{
  double x = 0.0;
  double c = 0.0;
  double q = 0.0;
  double qstar = 0.0;
  double dqstar_dc = 0.0;
};

/// Spatially discretized column. Immutable; evaluation is reentrant when the
/// uptake function is pure.
class ColumnModel
{
public:
  ColumnModel(Mesh mesh, ColumnParams params, IsothermSpec iso, FeedSchedule feed, UptakeFn uptake,
              SourceFn source = {});

  const Mesh& mesh() const { return mesh_; }
  const ColumnParams& params() const { return params_; }
  const IsothermSpec& isotherm() const { return iso_; }
  const FeedSchedule& feed() const { return feed_; }
  Eigen::Index size() const { return mesh_.state_size(); }

  /// Feed switch times in dimensionless time.
  std::vector<double> events() const;
  double inlet_concentration(int segment) const;
  double to_dimensionless(double t_min) const { return t_min / params_.residence_time(); }

  void rhs(double t, const Vec& y, Vec& f, int segment) const;
  void jacobian(double t, const Vec& y, Mat& jac, int segment) const;

  /// Row index of the liquid-balance collocation equation at (element, p).
  Eigen::Index c_row(int element, int p) const { return 1 + 2 * element + p; }
  Eigen::Index q_row(int element, int p) const { return mesh_.q_index(element, p); }
  Eigen::Index inlet_row() const { return 0; }
  Eigen::Index outlet_row() const { return 2 * mesh_.n_elements() + 1; }

  const Mat& mass() const { return mass_; }

  /// Uniform c = c0, q = q*(c0) with consistent boundary slopes for segment 0.
  Vec initial_state(double c0) const;

  /// Inputs of the uptake term at every collocation point (element-major).
  std::vector<CollocationSample> collocation_samples(const Vec& y) const;

  /// Coefficient multiplying g in the liquid rows: (1-eps)/eps * tau_s.
  double liquid_coupling() const;
  /// Coefficient multiplying g in the q rows: tau_s.
  double solid_coupling() const { return params_.residence_time(); }

  DaeSystem dae() const;

private:
  Mesh mesh_;
  ColumnParams params_;
  IsothermSpec iso_;
  FeedSchedule feed_;
  UptakeFn uptake_;
  SourceFn source_;
  std::vector<HermiteBasis> basis_;  // per collocation point p (element-independent)
  Mat linear_;                       // constant part of the Jacobian
  Mat mass_;
};

/// Assembles the DAE for the given uptake law. Throws std::invalid_argument
/// when the mesh or parameters are invalid.
DaeSystem build_dae(const Mesh& mesh, const ColumnParams& params, const UptakeFn& uptake, const IsothermSpec& iso,
                    const FeedSchedule& sched, const SourceFn& source = {});

std::shared_ptr<const ColumnModel> make_column_model(const Mesh& mesh, const ColumnParams& params,
                                                     const UptakeFn& uptake, const IsothermSpec& iso,
                                                     const FeedSchedule& sched, const SourceFn& source = {});

}  // namespace sorbkit
