#include "sorbkit/ocfem.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sorbkit {

Mesh::Mesh(int n_elements) : n_(n_elements), h_(n_elements > 0 ? 1.0 / n_elements : 0.0)
{
  if (n_elements < 1) throw std::invalid_argument("Mesh: need at least one element");
}

std::pair<int, double> Mesh::locate(double x) const
{
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("Mesh::locate: position outside [0, 1]");
  int k = std::min(static_cast<int>(std::floor(x / h_)), n_ - 1);
  double u = (x - k * h_) / h_;
  return {k, std::clamp(u, 0.0, 1.0)};
}

HermiteBasis hermite_basis(double u, double h)
{
  HermiteBasis b;
  const double u2 = u * u;
  const double u3 = u2 * u;
  b.value = {1.0 - 3.0 * u2 + 2.0 * u3, h * (u - 2.0 * u2 + u3), 3.0 * u2 - 2.0 * u3, h * (u3 - u2)};
  // d/du, then chain rule du/dx = 1/h.
  b.d1 = {(-6.0 * u + 6.0 * u2) / h, (1.0 - 4.0 * u + 3.0 * u2), (6.0 * u - 6.0 * u2) / h, (3.0 * u2 - 2.0 * u)};
  b.d2 = {(-6.0 + 12.0 * u) / (h * h), (-4.0 + 6.0 * u) / h, (6.0 - 12.0 * u) / (h * h), (6.0 * u - 2.0) / h};
  return b;
}

ProfilePoint interpolate(const Vec& state, const Mesh& mesh, double x)
{
  if (state.size() != mesh.state_size()) throw std::invalid_argument("interpolate: state size does not match mesh");
  const auto [k, u] = mesh.locate(x);
  const auto b = hermite_basis(u, mesh.h());
  ProfilePoint out;
  for (int i = 0; i < 4; ++i) {
    const double a = state[2 * k + i];
    out.c += a * b.value[static_cast<std::size_t>(i)];
    out.dc_dx += a * b.d1[static_cast<std::size_t>(i)];
  }

  // Piecewise-linear q through the collocation points, ordered by position.
  const int m = mesh.n_collocation();
  auto pos = [&](int j) { return mesh.collocation_point(j / 2, j % 2); };
  auto val = [&](int j) { return state[mesh.q_index(j / 2, j % 2)]; };
  int j = 0;
  if (x <= pos(0))
    j = 0;
  else if (x >= pos(m - 1))
    j = m - 2;
  else
    while (j + 1 < m - 1 && pos(j + 1) < x) ++j;
  const double w = (x - pos(j)) / (pos(j + 1) - pos(j));
  out.q = (1.0 - w) * val(j) + w * val(j + 1);
  return out;
}

UptakeFn kinetic_uptake(const KineticSpec& kin)
{
  return [kin](double q, double qstar) { return kinetic_eval_grad(kin, q, qstar); };
}

ColumnModel::ColumnModel(Mesh mesh, ColumnParams params, IsothermSpec iso, FeedSchedule feed, UptakeFn uptake,
                         SourceFn source)
    : mesh_(mesh),
      params_(params),
      iso_(iso),
      feed_(std::move(feed)),
      uptake_(std::move(uptake)),
      source_(std::move(source))
{
  params_.validate();
  iso_.validate();
  feed_.validate();
  if (!uptake_) throw std::invalid_argument("ColumnModel: uptake function required");

  const double h = mesh_.h();
  for (double u : Mesh::kCollocation) basis_.push_back(hermite_basis(u, h));

  const auto n = size();
  const int ne = mesh_.n_elements();
  const double pe = params_.peclet;
  linear_ = Mat::Zero(n, n);
  mass_ = Mat::Zero(n, n);

  linear_(inlet_row(), mesh_.value_index(0)) = -pe;
  linear_(inlet_row(), mesh_.slope_index(0)) = 1.0;
  linear_(outlet_row(), mesh_.slope_index(ne)) = 1.0;
  for (int k = 0; k < ne; ++k) {
    for (int p = 0; p < 2; ++p) {
      const auto& b = basis_[static_cast<std::size_t>(p)];
      const auto row = c_row(k, p);
      for (int i = 0; i < 4; ++i) {
        const auto col = 2 * k + i;
        const auto ii = static_cast<std::size_t>(i);
        linear_(row, col) = -b.d1[ii] + b.d2[ii] / pe;
        mass_(row, col) = b.value[ii];
      }
      mass_(q_row(k, p), mesh_.q_index(k, p)) = 1.0;
    }
  }
}

std::vector<double> ColumnModel::events() const
{
  std::vector<double> out;
  for (double t : feed_.switch_times()) out.push_back(to_dimensionless(t));
  return out;
}

double ColumnModel::inlet_concentration(int segment) const
{
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(segment, 0)), 0, feed_.phases.size() - 1);
  return feed_.phases[k].concentration;
}

double ColumnModel::liquid_coupling() const
{
  return (1.0 - params_.porosity) / params_.porosity * params_.residence_time();
}

void ColumnModel::rhs(double t, const Vec& y, Vec& f, int segment) const
{
  const int ne = mesh_.n_elements();
  const double pe = params_.peclet;
  const double kc = liquid_coupling();
  const double ks = solid_coupling();
  f.resize(size());

  f[inlet_row()] = y[mesh_.slope_index(0)] - pe * (y[mesh_.value_index(0)] - inlet_concentration(segment));
  f[outlet_row()] = y[mesh_.slope_index(ne)];
  for (int k = 0; k < ne; ++k) {
    for (int p = 0; p < 2; ++p) {
      const auto& b = basis_[static_cast<std::size_t>(p)];
      double c = 0.0, cx = 0.0, cxx = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double a = y[2 * k + i];
        const auto ii = static_cast<std::size_t>(i);
        c += a * b.value[ii];
        cx += a * b.d1[ii];
        cxx += a * b.d2[ii];
      }
      // Undershoot ahead of a sharp front can make c slightly negative.
      const double qstar = isotherm_eval(iso_, std::max(c, 0.0));
      const double g = uptake_(y[mesh_.q_index(k, p)], qstar).value;
      double row = -kc * g - cx + cxx / pe;
      if (source_) row += source_(mesh_.collocation_point(k, p), t);
      f[c_row(k, p)] = row;
      f[q_row(k, p)] = ks * g;
    }
  }
}

void ColumnModel::jacobian(double /*t*/, const Vec& y, Mat& jac, int /*segment*/) const
{
  jac = linear_;
  const int ne = mesh_.n_elements();
  const double kc = liquid_coupling();
  const double ks = solid_coupling();
  for (int k = 0; k < ne; ++k) {
    for (int p = 0; p < 2; ++p) {
      const auto& b = basis_[static_cast<std::size_t>(p)];
      double c = 0.0;
      for (int i = 0; i < 4; ++i) c += y[2 * k + i] * b.value[static_cast<std::size_t>(i)];
      const double cc = std::max(c, 0.0);
      const double qstar = isotherm_eval(iso_, cc);
      const double dqs = c >= 0.0 ? isotherm_derivative(iso_, cc) : 0.0;
      const auto qi = mesh_.q_index(k, p);
      const UptakeRate g = uptake_(y[qi], qstar);
      const double dg_dc = std::isfinite(dqs) ? g.d_qstar * dqs : 0.0;
      const auto cr = c_row(k, p);
      const auto qr = q_row(k, p);
      for (int i = 0; i < 4; ++i) {
        const double dg = dg_dc * b.value[static_cast<std::size_t>(i)];
        jac(cr, 2 * k + i) -= kc * dg;
        jac(qr, 2 * k + i) += ks * dg;
      }
      jac(cr, qi) -= kc * g.d_q;
      jac(qr, qi) += ks * g.d_q;
    }
  }
}

Vec ColumnModel::initial_state(double c0) const
{
  Vec y = Vec::Zero(size());
  const int ne = mesh_.n_elements();
  for (int i = 0; i <= ne; ++i) y[mesh_.value_index(i)] = c0;
  const double q0 = isotherm_eval(iso_, c0);
  for (int k = 0; k < ne; ++k)
    for (int p = 0; p < 2; ++p) y[mesh_.q_index(k, p)] = q0;
  y[mesh_.slope_index(0)] = params_.peclet * (c0 - inlet_concentration(0));
  return y;
}

std::vector<CollocationSample> ColumnModel::collocation_samples(const Vec& y) const
{
  std::vector<CollocationSample> out;
  out.reserve(static_cast<std::size_t>(mesh_.n_collocation()));
  for (int k = 0; k < mesh_.n_elements(); ++k) {
    for (int p = 0; p < 2; ++p) {
      const auto& b = basis_[static_cast<std::size_t>(p)];
      CollocationSample s;
      s.x = mesh_.collocation_point(k, p);
      for (int i = 0; i < 4; ++i) s.c += y[2 * k + i] * b.value[static_cast<std::size_t>(i)];
      const double cc = std::max(s.c, 0.0);
      s.qstar = isotherm_eval(iso_, cc);
      s.dqstar_dc = s.c >= 0.0 ? isotherm_derivative(iso_, cc) : 0.0;
      if (!std::isfinite(s.dqstar_dc)) s.dqstar_dc = 0.0;
      s.q = y[mesh_.q_index(k, p)];
      out.push_back(s);
    }
  }
  return out;
}

DaeSystem ColumnModel::dae() const
{
  // Callers must keep the model alive; build_dae captures a shared pointer instead.
  DaeSystem d;
  d.size = size();
  d.mass = mass_;
  d.algebraic_rows = {inlet_row(), outlet_row()};
  d.algebraic_vars = {mesh_.slope_index(0), mesh_.slope_index(mesh_.n_elements())};
  d.events = events();
  d.rhs = [this](double t, const Vec& y, Vec& f, int seg) { rhs(t, y, f, seg); };
  d.jacobian = [this](double t, const Vec& y, Mat& j, int seg) { jacobian(t, y, j, seg); };
  return d;
}

std::shared_ptr<const ColumnModel> make_column_model(const Mesh& mesh, const ColumnParams& params,
                                                     const UptakeFn& uptake, const IsothermSpec& iso,
                                                     const FeedSchedule& sched, const SourceFn& source)
{
  return std::make_shared<const ColumnModel>(mesh, params, iso, sched, uptake, source);
}

DaeSystem build_dae(const Mesh& mesh, const ColumnParams& params, const UptakeFn& uptake, const IsothermSpec& iso,
                    const FeedSchedule& sched, const SourceFn& source)
{
  auto model = make_column_model(mesh, params, uptake, iso, sched, source);
  DaeSystem d = model->dae();
  d.rhs = [model](double t, const Vec& y, Vec& f, int seg) { model->rhs(t, y, f, seg); };
  d.jacobian = [model](double t, const Vec& y, Mat& j, int seg) { model->jacobian(t, y, j, seg); };
  return d;
}

}  // namespace sorbkit
