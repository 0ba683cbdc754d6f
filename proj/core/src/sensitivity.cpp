#include "sorbkit/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sorbkit {

Simulation simulate_hybrid(const NetParams& net, const Scenario& sc, const HybridOptions& opt)
{
  return simulate(sc, NetUptake(net), opt.simulation());
}

LossReport hybrid_loss(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt)
{
  LossReport rep;
  if (ds.size() == 0) throw std::invalid_argument("hybrid_loss: empty dataset");
  rep.forward = simulate_hybrid(net, sc, opt);
  if (!rep.forward.success()) {
    rep.loss = std::numeric_limits<double>::infinity();
    rep.message = rep.forward.trajectory.message;
    return rep;
  }
  const double t_end = sc.feed.t_obs;
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.times[i] < 0.0 || ds.times[i] > t_end * (1.0 + 1e-12))
      throw std::invalid_argument("hybrid_loss: sample time outside the scenario horizon");
    const double u = rep.forward.outlet_at(std::min(ds.times[i], t_end));
    rep.predictions.push_back(u);
    rep.residuals.push_back(u - ds.observed[i]);
    sum += rep.residuals.back() * rep.residuals.back();
  }
  rep.loss = sum / static_cast<double>(ds.size());
  rep.success = std::isfinite(rep.loss);
  if (!rep.success) rep.message = "non-finite loss";
  return rep;
}

namespace {

// Reduced coordinates: every state except the two boundary slopes, every row
// except the two boundary rows.
struct Reduction
{
  Eigen::Index n = 0;
  Eigen::Index inlet_value = 0;  // full index of c at x* = 0
  Eigen::Index inlet_slope = 0;
  Eigen::Index outlet_slope = 0;
  double peclet = 0.0;
  std::vector<Eigen::Index> vars;  // reduced -> full variable
  std::vector<Eigen::Index> rows;  // reduced -> full row
  std::vector<Eigen::Index> var_to_reduced;
  std::vector<Eigen::Index> row_to_reduced;

  explicit Reduction(const ColumnModel& m)
  {
    const auto& mesh = m.mesh();
    n = m.size();
    inlet_value = mesh.value_index(0);
    inlet_slope = mesh.slope_index(0);
    outlet_slope = mesh.slope_index(mesh.n_elements());
    peclet = m.params().peclet;
    var_to_reduced.assign(static_cast<std::size_t>(n), -1);
    row_to_reduced.assign(static_cast<std::size_t>(n), -1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != inlet_slope && i != outlet_slope) {
        var_to_reduced[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(vars.size());
        vars.push_back(i);
      }
      if (i != m.inlet_row() && i != m.outlet_row()) {
        row_to_reduced[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(rows.size());
        rows.push_back(i);
      }
    }
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(vars.size()); }

  // A[rows, :] P with P the reduced-to-full map of the constraint solution.
  Mat reduce(const Mat& a) const
  {
    const Eigen::Index m = size();
    const Eigen::Index iv = var_to_reduced[static_cast<std::size_t>(inlet_value)];
    Mat out(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const Eigen::Index fr = rows[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < m; ++c) out(r, c) = a(fr, vars[static_cast<std::size_t>(c)]);
      out(r, iv) += peclet * a(fr, inlet_slope);
    }
    return out;
  }
};

}  // namespace

GradientReport adjoint_vjp(const NetParams& net, const Simulation& forward, const std::vector<double>& times_min,
                           const std::vector<double>& dg_du, const HybridOptions& opt)
{
  GradientReport rep;
  rep.grad = Vec::Zero(net.theta.size());
  if (times_min.size() != dg_du.size()) throw std::invalid_argument("adjoint_vjp: times and weights differ in length");
  if (!forward.success()) {
    rep.message = "forward solve failed";
    return rep;
  }
  const ColumnModel& model = *forward.model;
  const FeedSchedule& feed = model.feed();
  const Reduction red(model);
  const Eigen::Index m = red.size();

  const Mat mr = red.reduce(model.mass());
  const Eigen::PartialPivLU<Mat> mrt_lu(mr.transpose());
  Vec e_out = Vec::Zero(m);
  e_out[red.var_to_reduced[static_cast<std::size_t>(model.mesh().outlet_index())]] = 1.0;
  const Vec jump = mrt_lu.solve(e_out);

  // The backward problem is linear in the weights; solving it for weights
  // normalized by a power of two makes the result exactly homogeneous.
  double wmax = 0.0;
  for (double w : dg_du) wmax = std::max(wmax, std::abs(w));
  if (!std::isfinite(wmax)) throw std::invalid_argument("adjoint_vjp: non-finite weight");
  if (wmax == 0.0) {
    rep.success = true;
    return rep;
  }
  const double scale = std::exp2(std::ceil(std::log2(wmax)));

  // Breakpoints in t*: observations and feed switches, strictly inside (0, T).
  const double t_end = model.to_dimensionless(feed.t_obs);
  const double eps = 1e-12 * std::max(1.0, t_end);
  std::vector<std::pair<double, double>> obs;  // (t*, weight)
  for (std::size_t i = 0; i < times_min.size(); ++i)
    if (dg_du[i] != 0.0) obs.emplace_back(model.to_dimensionless(times_min[i]), dg_du[i] / scale);
  Vec mu0 = Vec::Zero(m);
  std::vector<double> cuts;
  for (const auto& [t, w] : obs) {
    if (t > t_end + eps) throw std::invalid_argument("adjoint_vjp: observation after the end of the trajectory");
    if (std::abs(t - t_end) <= eps)
      mu0 += w * jump;
    else if (t > eps)
      cuts.push_back(t);
  }
  for (double t : model.events())
    if (t > eps && t < t_end - eps) cuts.push_back(t);
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [&](double a, double b) { return std::abs(a - b) <= eps; }),
             cuts.end());

  // Backward segment k spans bounds[k] -> bounds[k + 1].
  std::vector<double> bounds{t_end};
  bounds.insert(bounds.end(), cuts.begin(), cuts.end());
  bounds.push_back(0.0);
  std::vector<std::size_t> phase;
  std::vector<double> jump_weight(bounds.size(), 0.0);
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    const double mid = 0.5 * (bounds[k] + bounds[k + 1]) * model.params().residence_time();
    phase.push_back(feed.phase_index(mid));
  }
  for (const auto& [t, w] : obs)
    for (std::size_t k = 1; k + 1 < bounds.size(); ++k)
      if (std::abs(bounds[k] - t) <= eps) jump_weight[k] += w;

  const auto samples_per_element = 2;
  const int ne = model.mesh().n_elements();
  const double kc = model.liquid_coupling();
  const double ks = model.solid_coupling();
  const Trajectory& traj = forward.trajectory;

  struct Cache
  {
    double t = std::numeric_limits<double>::quiet_NaN();
    int seg = -1;
    Vec y;
    Mat jr;
  };
  auto cache = std::make_shared<Cache>();
  Mat jfull;
  auto state = [&, cache](double t, int seg) -> const Cache& {
    if (cache->t != t || cache->seg != seg) {
      const double tc = std::clamp(t, 0.0, t_end);
      cache->y = traj.eval(tc, phase[static_cast<std::size_t>(seg)]);
      model.jacobian(tc, cache->y, jfull, static_cast<int>(phase[static_cast<std::size_t>(seg)]));
      cache->jr = red.reduce(jfull);
      cache->t = t;
      cache->seg = seg;
    }
    return *cache;
  };

  DaeSystem back;
  back.size = m;
  back.mass = mr.transpose();
  back.events.assign(cuts.begin(), cuts.end());
  back.rhs = [&](double t, const Vec& mu, Vec& f, int seg) { f.noalias() = -state(t, seg).jr.transpose() * mu; };
  back.jacobian = [&](double t, const Vec&, Mat& jac, int seg) { jac = -state(t, seg).jr.transpose(); };
  back.at_event = [&](double, Vec& mu, int next_seg) {
    const double w = jump_weight[static_cast<std::size_t>(next_seg)];
    if (w != 0.0) mu += w * jump;
  };
  back.n_quadrature = net.theta.size();
  back.quadrature = [&](double t, const Vec& mu, Vec& wq, int seg) {
    const Cache& s = state(t, seg);
    wq.setZero(net.theta.size());
    const auto samples = model.collocation_samples(s.y);
    for (int k = 0; k < ne; ++k) {
      for (int p = 0; p < samples_per_element; ++p) {
        const auto& smp = samples[static_cast<std::size_t>(2 * k + p)];
        const double mc = mu[red.row_to_reduced[static_cast<std::size_t>(model.c_row(k, p))]];
        const double mq = mu[red.row_to_reduced[static_cast<std::size_t>(model.q_row(k, p))]];
        const double weight = kc * mc - ks * mq;  // -( -kc mc + ks mq )
        if (weight != 0.0) net_accumulate_param_grad(net, smp.q, smp.qstar, weight, wq);
      }
    }
  };

  IntegratorConfig bcfg = opt.integrator;
  bcfg.quadrature_error_control = false;
  const Trajectory bt = integrate(back, mu0, t_end, 0.0, bcfg);
  rep.backward = bt.stats;
  rep.quadrature_error = bt.stats.quadrature_error;
  if (!bt.success) {
    rep.message = "adjoint solve failed: " + bt.message;
    return rep;
  }
  rep.grad = scale * bt.final_quadrature();
  rep.success = rep.grad.allFinite();
  if (!rep.success) rep.message = "non-finite gradient";
  return rep;
}

GradientReport adjoint_gradient(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt)
{
  const LossReport loss = hybrid_loss(net, ds, sc, opt);
  GradientReport rep;
  if (!loss.success) {
    rep.grad = Vec::Zero(net.theta.size());
    rep.loss = loss.loss;
    rep.message = "forward solve failed: " + loss.message;
    return rep;
  }
  std::vector<double> dg(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) dg[i] = 2.0 * loss.residuals[i] / static_cast<double>(ds.size());
  rep = adjoint_vjp(net, loss.forward, ds.times, dg, opt);
  rep.loss = loss.loss;
  return rep;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, const std::vector<Eigen::Index>& coords,
                double step)
{
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient: step must be positive");
  Vec g = Vec::Zero(theta.size());
  Vec x = theta;
  for (auto i : coords) {
    if (i < 0 || i >= theta.size()) throw std::out_of_range("fd_gradient: coordinate out of range");
    x[i] = theta[i] + step;
    const double fp = f(x);
    x[i] = theta[i] - step;
    const double fm = f(x);
    x[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

Vec fd_gradient(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt,
                const std::vector<Eigen::Index>& coords, double step)
{
  return fd_gradient(
      [&](const Vec& theta) {
        NetParams p{net.arch, theta};
        return hybrid_loss(p, ds, sc, opt).loss;
      },
      net.theta, coords, step);
}

}  // namespace sorbkit
