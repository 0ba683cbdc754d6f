#include "sorbkit/integrator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace sorbkit {

void IntegratorConfig::validate() const
{
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw std::invalid_argument("rel_tol must lie in (0, 1)");
  if (!(abs_tol > 0.0 && abs_tol < 1.0)) throw std::invalid_argument("abs_tol must lie in (0, 1)");
  if (max_order < 1 || max_order > 5) throw std::invalid_argument("max_order must lie in [1, 5]");
  if (initial_step < 0.0) throw std::invalid_argument("initial_step must be nonnegative");
  if (max_steps == 0) throw std::invalid_argument("max_steps must be positive");
}

// ---------------------------------------------------------------------------
// Trajectory

double Trajectory::t_begin() const
{
  return segments_.empty() ? 0.0 : segments_.front().t_begin;
}

double Trajectory::t_end() const
{
  return segments_.empty() ? 0.0 : segments_.back().t_end;
}

std::size_t Trajectory::segment_of(double t) const
{
  if (segments_.empty()) throw std::domain_error("Trajectory: empty");
  const double lo = std::min(t_begin(), t_end());
  const double hi = std::max(t_begin(), t_end());
  const double slack = 1e-12 * std::max(1.0, std::abs(hi));
  if (t < lo - slack || t > hi + slack) throw std::domain_error("Trajectory::eval: time outside span");
  for (std::size_t k = segments_.size(); k-- > 0;) {
    const auto& s = segments_[k];
    if (direction_ * (t - s.t_begin) >= 0.0) return k;
  }
  return 0;
}

Vec Trajectory::eval(double t) const
{
  return eval(t, segment_of(t));
}

Vec Trajectory::eval(double t, std::size_t segment) const
{
  const auto& seg = segments_.at(segment);
  const double slack = 1e-12 * std::max(1.0, std::abs(seg.t_end));
  if (direction_ * (t - seg.t_begin) < -slack || direction_ * (t - seg.t_end) > slack)
    throw std::domain_error("Trajectory::eval: time outside segment");
  if (t == seg.t_begin || seg.steps.empty()) return seg.y_begin;

  // First step whose end lies at or beyond t.
  auto it = std::lower_bound(seg.steps.begin(), seg.steps.end(), t, [this](const Step& s, double tq) {
    return direction_ * (s.t - tq) < 0.0;
  });
  if (it == seg.steps.end()) it = std::prev(seg.steps.end());
  const Step& s = *it;
  if (t == s.t) return s.diffs.col(0);

  Vec y = s.diffs.col(0);
  double p = 1.0;
  for (int j = 0; j < s.order; ++j) {
    p *= (t - (s.t - s.h * j)) / (s.h * (j + 1));
    y.noalias() += p * s.diffs.col(j + 1);
  }
  return y;
}

std::vector<double> Trajectory::step_times() const
{
  std::vector<double> out;
  for (const auto& seg : segments_)
    for (const auto& s : seg.steps) out.push_back(s.t);
  return out;
}

Vec Trajectory::snapshot(std::size_t step_index) const
{
  for (const auto& seg : segments_) {
    if (step_index < seg.steps.size()) return seg.steps[step_index].diffs.col(0);
    step_index -= seg.steps.size();
  }
  throw std::out_of_range("Trajectory::snapshot: index out of range");
}

// ---------------------------------------------------------------------------
// Consistent initialization

bool make_consistent(const DaeSystem& dae, double t, Vec& y, int segment, double tol)
{
  const auto m = static_cast<Eigen::Index>(dae.algebraic_rows.size());
  if (m == 0) return true;
  if (dae.algebraic_vars.size() != dae.algebraic_rows.size())
    throw std::invalid_argument("DaeSystem: algebraic_rows and algebraic_vars differ in size");

  Vec f(dae.size);
  Mat jac;
  Vec r(m);
  for (int iter = 0; iter < 20; ++iter) {
    dae.rhs(t, y, f, segment);
    for (Eigen::Index i = 0; i < m; ++i) r[i] = f[dae.algebraic_rows[static_cast<std::size_t>(i)]];
    if (!r.allFinite()) return false;
    if (r.lpNorm<Eigen::Infinity>() <= tol) return true;
    dae.eval_jacobian(t, y, jac, segment);
    Mat sub(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        sub(i, j) = jac(dae.algebraic_rows[static_cast<std::size_t>(i)], dae.algebraic_vars[static_cast<std::size_t>(j)]);
    const Vec delta = sub.partialPivLu().solve(r);
    for (Eigen::Index j = 0; j < m; ++j) y[dae.algebraic_vars[static_cast<std::size_t>(j)]] -= delta[j];
  }
  return false;
}

// ---------------------------------------------------------------------------
// BDF solver

namespace {

constexpr int kMaxOrder = 5;
constexpr int kNewtonMaxIter = 4;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

struct Coefficients
{
  std::array<double, kMaxOrder + 1> gamma{};
  std::array<double, kMaxOrder + 2> error_const{};

  Coefficients()
  {
    for (int k = 1; k <= kMaxOrder; ++k) gamma[k] = gamma[k - 1] + 1.0 / k;
    for (int k = 0; k <= kMaxOrder + 1; ++k) error_const[k] = 1.0 / (k + 1);
  }
};

const Coefficients& coeffs()
{
  static const Coefficients c;
  return c;
}

double rms(const Vec& v)
{
  if (v.size() == 0) return 0.0;
  return v.norm() / std::sqrt(static_cast<double>(v.size()));
}

// Transformation that re-expresses backward differences on a grid scaled by `factor`.
Mat compute_r(int order, double factor)
{
  Mat m = Mat::Zero(order + 1, order + 1);
  m.row(0).setOnes();
  for (int i = 1; i <= order; ++i)
    for (int j = 1; j <= order; ++j) m(i, j) = (i - 1 - factor * j) / static_cast<double>(i);
  for (int i = 1; i <= order; ++i) m.row(i) = m.row(i).cwiseProduct(m.row(i - 1));
  return m;
}

void change_diffs(Mat& d, int order, double factor)
{
  const Mat ru = compute_r(order, factor) * compute_r(order, 1.0);
  d.leftCols(order + 1) = (d.leftCols(order + 1) * ru).eval();
}

}  // namespace

class BdfSolver
{
public:
  BdfSolver(const DaeSystem& dae, const IntegratorConfig& cfg, Trajectory& traj)
      : dae_(dae), cfg_(cfg), traj_(traj), n_(dae.size), nq_(dae.n_quadrature)
  {
    newton_tol_ = std::max(10.0 * std::numeric_limits<double>::epsilon() / cfg.rel_tol, std::min(0.03, std::sqrt(cfg.rel_tol)));
  }

  // Integrates one segment. Returns false on failure (message set on traj_).
  bool run(double t0, double t1, Vec& y, Vec& w, int segment);

private:
  void rhs(double t, const Vec& y, Vec& f, int seg)
  {
    ++traj_.stats.rhs_evals;
    dae_.rhs(t, y, f, seg);
  }

  void jac(double t, const Vec& y, int seg)
  {
    ++traj_.stats.jacobian_evals;
    dae_.eval_jacobian(t, y, jac_, seg);
  }

  void factor(double c)
  {
    ++traj_.stats.factorizations;
    Mat a = dae_.has_mass() ? Mat(dae_.mass - c * jac_) : Mat(Mat::Identity(n_, n_) - c * jac_);
    lu_.compute(a);
    lu_valid_ = true;
  }

  Vec initial_derivative(double t, const Vec& y, int seg);
  Vec mass_times(const Vec& v) const { return dae_.has_mass() ? Vec(dae_.mass * v) : v; }

  const DaeSystem& dae_;
  const IntegratorConfig& cfg_;
  Trajectory& traj_;
  Eigen::Index n_;
  Eigen::Index nq_;
  double newton_tol_;
  Mat jac_;
  Eigen::PartialPivLU<Mat> lu_;
  bool lu_valid_ = false;
};

Vec BdfSolver::initial_derivative(double t, const Vec& y, int seg)
{
  Vec f(n_);
  rhs(t, y, f, seg);
  if (!dae_.has_mass()) return f;
  // Differential rows from M y' = f, algebraic rows from the differentiated
  // constraint J_a y' = 0 (inputs are constant within a segment).
  Mat k = dae_.mass;
  for (auto r : dae_.algebraic_rows) {
    k.row(r) = jac_.row(r);
    f[r] = 0.0;
  }
  Vec yp = k.partialPivLu().solve(f);
  if (!yp.allFinite()) yp.setZero();
  return yp;
}

bool BdfSolver::run(double t0, double t1, Vec& y, Vec& w, int segment)
{
  const auto& co = coeffs();
  const int direction = t1 >= t0 ? 1 : -1;
  const double span = std::abs(t1 - t0);
  const Eigen::Index ntot = n_ + nq_;
  const Eigen::Index nerr = cfg_.quadrature_error_control ? ntot : n_;
  const double atol = cfg_.abs_tol;
  const double rtol = cfg_.rel_tol;
  const int max_order = std::min(cfg_.max_order, kMaxOrder);

  Trajectory::Segment seg;
  seg.t_begin = t0;
  seg.t_end = t1;
  seg.y_begin = y;

  auto finish_segment = [&]() { traj_.segments_.push_back(std::move(seg)); };

  if (span == 0.0) {
    finish_segment();
    return true;
  }

  jac(t0, y, segment);
  lu_valid_ = false;
  bool current_jac = true;

  Vec yp0 = initial_derivative(t0, y, segment);
  Vec qd(nq_);
  if (nq_ > 0) dae_.quadrature(t0, y, qd, segment);

  // Initial step.
  double h_abs;
  {
    const Vec scale = (atol + rtol * y.array().abs()).matrix();
    const double d0 = rms(y.cwiseQuotient(scale));
    const double d1 = rms(yp0.cwiseQuotient(scale));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    const Vec y1 = y + direction * h0 * yp0;
    const Vec yp1 = initial_derivative(t0 + direction * h0, y1, segment);
    const double d2 = rms((yp1 - yp0).cwiseQuotient(scale)) / h0;
    double h1;
    if (d1 <= 1e-15 && d2 <= 1e-15)
      h1 = std::max(1e-6, h0 * 1e-3);
    else
      h1 = std::sqrt(0.01 / std::max(d1, d2));
    h_abs = std::min({100.0 * h0, h1, span});
    if (!std::isfinite(h_abs) || h_abs <= 0.0) h_abs = std::min(1e-6, span);
  }
  if (cfg_.initial_step > 0.0) h_abs = std::min(cfg_.initial_step, span);

  Mat d = Mat::Zero(ntot, kMaxOrder + 3);
  d.col(0).head(n_) = y;
  d.col(1).head(n_) = yp0 * (h_abs * direction);
  if (nq_ > 0) {
    d.col(0).tail(nq_) = w;
    d.col(1).tail(nq_) = qd * (h_abs * direction);
  }
  int order = 1;
  int n_equal_steps = 0;
  double t = t0;

  Vec f(n_), y_new(n_), dd(n_), dy(n_), scale(n_), psi(n_), y_pred(n_);

  while (direction * (t - t1) < 0.0) {
    if (traj_.stats.steps >= cfg_.max_steps) {
      traj_.message = "maximum number of steps exceeded";
      finish_segment();
      return false;
    }
    const double min_step = 10.0 * std::abs(std::nextafter(t, direction * INFINITY) - t);
    if (h_abs > cfg_.max_step) {
      change_diffs(d, order, cfg_.max_step / h_abs);
      h_abs = cfg_.max_step;
      n_equal_steps = 0;
      lu_valid_ = false;
    } else if (h_abs < min_step) {
      change_diffs(d, order, min_step / h_abs);
      h_abs = min_step;
      n_equal_steps = 0;
      lu_valid_ = false;
    }

    bool accepted = false;
    double error_norm = 0.0;
    double safety = 0.9;
    double t_new = t;
    Vec d_full(ntot);
    while (!accepted) {
      if (h_abs < min_step) {
        traj_.message = "step size fell below the floor at t = " + std::to_string(t);
        finish_segment();
        return false;
      }
      double h = h_abs * direction;
      t_new = t + h;
      if (direction * (t_new - t1) > 0.0) {
        t_new = t1;
        change_diffs(d, order, std::abs(t_new - t) / h_abs);
        n_equal_steps = 0;
        lu_valid_ = false;
      }
      h = t_new - t;
      h_abs = std::abs(h);

      const Vec pred_full = d.leftCols(order + 1).rowwise().sum();
      y_pred = pred_full.head(n_);
      scale = (atol + rtol * y_pred.array().abs()).matrix();
      const Vec psi_full = d.middleCols(1, order) * Eigen::Map<const Vec>(co.gamma.data() + 1, order) / co.gamma[order];
      psi = psi_full.head(n_);

      const double c = h / co.gamma[order];
      bool converged = false;
      int n_iter = 0;
      while (!converged) {
        if (!lu_valid_) factor(c);
        // Newton iteration on M (psi + d) = c f(y_pred + d).
        dd.setZero();
        y_new = y_pred;
        double dy_norm_old = -1.0;
        for (int k = 0; k < kNewtonMaxIter; ++k) {
          n_iter = k + 1;
          ++traj_.stats.newton_iters;
          rhs(t_new, y_new, f, segment);
          if (!f.allFinite()) break;
          dy = lu_.solve(c * f - mass_times(psi + dd));
          if (!dy.allFinite()) break;
          const double dy_norm = rms(dy.cwiseQuotient(scale));
          double rate = -1.0;
          if (dy_norm_old > 0.0) {
            rate = dy_norm / dy_norm_old;
            if (rate >= 1.0 || std::pow(rate, kNewtonMaxIter - k) / (1.0 - rate) * dy_norm > newton_tol_) break;
          }
          y_new += dy;
          dd += dy;
          if (dy_norm == 0.0 || (rate > 0.0 && rate / (1.0 - rate) * dy_norm < newton_tol_)) {
            converged = true;
            break;
          }
          dy_norm_old = dy_norm;
        }
        if (!converged) {
          if (current_jac) break;
          jac(t_new, y_pred, segment);
          current_jac = true;
          lu_valid_ = false;
        }
      }

      if (!converged) {
        ++traj_.stats.newton_failures;
        h_abs *= 0.5;
        change_diffs(d, order, 0.5);
        n_equal_steps = 0;
        lu_valid_ = false;
        continue;
      }

      safety = 0.9 * (2 * kNewtonMaxIter + 1) / (2 * kNewtonMaxIter + n_iter);
      d_full.head(n_) = dd;
      if (nq_ > 0) {
        dae_.quadrature(t_new, y_new, qd, segment);
        d_full.tail(nq_) = c * qd - psi_full.tail(nq_);
      }
      Vec scale_full(ntot);
      scale_full.head(n_) = (atol + rtol * y_new.array().abs()).matrix();
      if (nq_ > 0) scale_full.tail(nq_) = (atol + rtol * (pred_full.tail(nq_) + d_full.tail(nq_)).array().abs()).matrix();

      error_norm = rms((co.error_const[order] * d_full.head(nerr)).cwiseQuotient(scale_full.head(nerr)));
      if (error_norm > 1.0) {
        const double fac = std::max(kMinFactor, safety * std::pow(error_norm, -1.0 / (order + 1)));
        h_abs *= fac;
        change_diffs(d, order, fac);
        n_equal_steps = 0;
        ++traj_.stats.rejected;
        lu_valid_ = false;
      } else {
        accepted = true;
        if (nq_ > 0)
          traj_.stats.quadrature_error += (co.error_const[order] * d_full.tail(nq_)).lpNorm<Eigen::Infinity>();
        scale = scale_full.head(n_);
      }
    }

    ++traj_.stats.steps;
    ++n_equal_steps;
    t = t_new;
    current_jac = false;

    d.col(order + 2) = d_full - d.col(order + 1);
    d.col(order + 1) = d_full;
    for (int i = order; i >= 0; --i) d.col(i) += d.col(i + 1);

    traj_.last_good_time = t;
    if (cfg_.dense_output) {
      Trajectory::Step st;
      st.t = t;
      st.h = h_abs * direction;
      st.order = order;
      st.diffs = d.topLeftCorner(n_, order + 1);
      seg.steps.push_back(std::move(st));
    }

    if (n_equal_steps < order + 1) continue;

    Vec scale_full(ntot);
    scale_full.head(n_) = scale;
    if (nq_ > 0) scale_full.tail(nq_) = (atol + rtol * d.col(0).tail(nq_).array().abs()).matrix();
    const Vec sc = scale_full.head(nerr);

    double error_m_norm = INFINITY;
    double error_p_norm = INFINITY;
    if (order > 1) error_m_norm = rms((co.error_const[order - 1] * d.col(order).head(nerr)).cwiseQuotient(sc));
    if (order < max_order) error_p_norm = rms((co.error_const[order + 1] * d.col(order + 2).head(nerr)).cwiseQuotient(sc));

    const std::array<double, 3> norms{error_m_norm, error_norm, error_p_norm};
    std::array<double, 3> factors{};
    for (int i = 0; i < 3; ++i)
      factors[i] = norms[i] == 0.0 ? INFINITY : std::pow(norms[i], -1.0 / (order + i));
    const int best = static_cast<int>(std::max_element(factors.begin(), factors.end()) - factors.begin());
    order += best - 1;
    const double fac = std::min(kMaxFactor, safety * factors[best]);
    h_abs *= fac;
    change_diffs(d, order, fac);
    n_equal_steps = 0;
    lu_valid_ = false;
  }

  if (!cfg_.dense_output) {
    // Keep a single degenerate step so that eval(t_end) is available.
    Trajectory::Step st;
    st.t = t;
    st.h = t1 - t0;
    st.order = 0;
    st.diffs = d.topLeftCorner(n_, 1);
    seg.steps.push_back(std::move(st));
  }
  y = d.col(0).head(n_);
  if (nq_ > 0) w = d.col(0).tail(nq_);
  finish_segment();
  return true;
}

Trajectory integrate(const DaeSystem& dae, const Vec& y0, double t_begin, double t_end, const IntegratorConfig& cfg,
                     const Vec& w0)
{
  cfg.validate();
  if (y0.size() != dae.size) throw std::invalid_argument("integrate: initial state has wrong size");
  if (dae.n_quadrature > 0 && w0.size() != 0 && w0.size() != dae.n_quadrature)
    throw std::invalid_argument("integrate: quadrature initial value has wrong size");

  Trajectory traj;
  traj.n_ = dae.size;
  traj.direction_ = t_end >= t_begin ? 1 : -1;
  traj.last_good_time = t_begin;

  std::vector<double> cuts;
  const double eps = 1e-12 * std::max({1.0, std::abs(t_begin), std::abs(t_end)});
  for (double e : dae.events) {
    if (traj.direction_ * (e - t_begin) > eps && traj.direction_ * (t_end - e) > eps) cuts.push_back(e);
  }
  std::sort(cuts.begin(), cuts.end(), [&](double a, double b) { return traj.direction_ * (a - b) < 0.0; });
  cuts.insert(cuts.begin(), t_begin);
  cuts.push_back(t_end);

  Vec y = y0;
  Vec w = dae.n_quadrature > 0 ? (w0.size() ? w0 : Vec(Vec::Zero(dae.n_quadrature))) : Vec();
  BdfSolver solver(dae, cfg, traj);
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const int seg = static_cast<int>(k);
    if (k > 0 && dae.at_event) dae.at_event(cuts[k], y, seg);
    if (!make_consistent(dae, cuts[k], y, seg, cfg.abs_tol * 1e-2)) {
      traj.message = "consistent initialization failed at t = " + std::to_string(cuts[k]);
      traj.success = false;
      return traj;
    }
    if (!solver.run(cuts[k], cuts[k + 1], y, w, seg)) {
      traj.success = false;
      return traj;
    }
  }
  traj.success = true;
  traj.final_state_ = y;
  traj.final_quadrature_ = w;
  return traj;
}

}  // namespace sorbkit
