#include "sorbkit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sorbkit {

void TrainConfig::validate() const
{
  if (!(adam_lr > 0.0)) throw std::invalid_argument("TrainConfig: adam_lr must be positive");
  if (decay_every < 1) throw std::invalid_argument("TrainConfig: decay_every must be positive");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw std::invalid_argument("TrainConfig: decay_factor must lie in (0, 1)");
  if (adam_iters < 0 || qn_max_iters < 0) throw std::invalid_argument("TrainConfig: iteration counts must be nonnegative");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("TrainConfig: betas must lie in (0, 1)");
  if (!(adam_eps > 0.0) || !(grad_tol > 0.0)) throw std::invalid_argument("TrainConfig: tolerances must be positive");
  if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be positive");
  if (!(max_failure_frac > 0.0)) throw std::invalid_argument("TrainConfig: max_failure_frac must be positive");
}

double adam_lr(const TrainConfig& cfg, int iter)
{
  return cfg.adam_lr * std::pow(cfg.decay_factor, std::floor(static_cast<double>(iter) / cfg.decay_every));
}

bool adam_step(Vec& theta, const Vec& grad, AdamState& st, int iter, const TrainConfig& cfg, double lr_scale)
{
  if (grad.size() != theta.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (iter < 1) throw std::invalid_argument("adam_step: iterations are 1-based");
  if (!grad.allFinite()) return false;
  if (st.m.size() != theta.size()) st.m = Vec::Zero(theta.size());
  if (st.v.size() != theta.size()) st.v = Vec::Zero(theta.size());
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(cfg.beta1, iter);
  const double bc2 = 1.0 - std::pow(cfg.beta2, iter);
  const double lr = adam_lr(cfg, iter) * lr_scale;
  theta.array() -= lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + cfg.adam_eps);
  return true;
}

// ---------------------------------------------------------------------------
// BFGS

namespace {

struct Point
{
  double a = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  Vec x;
  Vec g;
  bool ok = false;
};

// Minimizer of the cubic through (a, fa, da), (b, fb, db), kept inside the
// bracket with a safeguard.
double cubic_min(const Point& lo, const Point& hi)
{
  const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
  const double disc = d1 * d1 - lo.d * hi.d;
  double a = 0.5 * (lo.a + hi.a);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
    const double den = hi.d - lo.d + 2.0 * d2;
    if (den != 0.0) a = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / den;
  }
  const double left = std::min(lo.a, hi.a);
  const double right = std::max(lo.a, hi.a);
  const double margin = 0.1 * (right - left);
  if (!std::isfinite(a) || a < left + margin || a > right - margin) a = 0.5 * (lo.a + hi.a);
  return a;
}

class LineSearch
{
public:
  LineSearch(const Objective& fn, const Vec& x, const Vec& p, double f0, double d0, const BfgsConfig& cfg)
      : fn_(fn), x_(x), p_(p), f0_(f0), d0_(d0), cfg_(cfg)
  {
  }

  Point eval(double a)
  {
    Point pt;
    pt.a = a;
    pt.x = x_ + a * p_;
    ++evaluations;
    pt.ok = fn_(pt.x, pt.f, pt.g) && std::isfinite(pt.f) && pt.g.allFinite();
    if (!pt.ok) pt.f = std::numeric_limits<double>::infinity();
    pt.d = pt.ok ? pt.g.dot(p_) : std::numeric_limits<double>::quiet_NaN();
    return pt;
  }

  bool armijo(const Point& pt) const { return pt.ok && pt.f <= f0_ + cfg_.c1 * pt.a * d0_; }
  bool curvature(const Point& pt) const { return std::abs(pt.d) <= -cfg_.c2 * d0_; }

  // Strong-Wolfe search starting from step a1.
  bool run(double a1, Point& out)
  {
    Point prev;
    prev.a = 0.0;
    prev.f = f0_;
    prev.d = d0_;
    prev.ok = true;
    double a = a1;
    for (int i = 0; i < cfg_.max_line_search; ++i) {
      Point cur = eval(a);
      if (!cur.ok) {
        // Unevaluable trial: shrink towards the last good point.
        a = prev.a + 0.25 * (a - prev.a);
        continue;
      }
      if (!armijo(cur) || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur, out);
      if (curvature(cur)) {
        out = cur;
        return true;
      }
      if (cur.d >= 0.0) return zoom(cur, prev, out);
      prev = cur;
      a *= 2.0;
    }
    return false;
  }

  int evaluations = 0;

private:
  bool zoom(Point lo, Point hi, Point& out)
  {
    for (int i = 0; i < cfg_.max_line_search; ++i) {
      const double a = hi.ok ? cubic_min(lo, hi) : lo.a + 0.5 * (hi.a - lo.a);
      if (std::abs(a - lo.a) < 1e-14 * std::max(1.0, std::abs(lo.a))) break;
      Point cur = eval(a);
      if (!armijo(cur) || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (curvature(cur)) {
          out = cur;
          return true;
        }
        if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    // Accept the best sufficient-decrease point found, if any.
    if (lo.a > 0.0 && armijo(lo)) {
      out = lo;
      return true;
    }
    return false;
  }

  const Objective& fn_;
  const Vec& x_;
  const Vec& p_;
  double f0_;
  double d0_;
  const BfgsConfig& cfg_;
};

}  // namespace

BfgsResult bfgs_minimize(const Objective& fn, const Vec& x0, const BfgsConfig& cfg, const BfgsObserver& observe)
{
  BfgsResult res;
  res.x = x0;
  const auto n = x0.size();
  ++res.evaluations;
  if (!fn(res.x, res.f, res.g) || !std::isfinite(res.f) || !res.g.allFinite()) {
    res.message = "objective not evaluable at the starting point";
    return res;
  }
  Mat h = Mat::Identity(n, n);
  bool scaled = false;
  int resets = 0;
  while (res.iterations < cfg.max_iters) {
    if (res.g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Vec p = -h * res.g;
    double d0 = p.dot(res.g);
    if (!(d0 < 0.0)) {
      h.setIdentity();
      scaled = false;
      p = -res.g;
      d0 = p.dot(res.g);
    }
    // First step of an unscaled inverse Hessian: unit length in x.
    const double a1 = scaled ? 1.0 : std::min(1.0, 1.0 / std::max(p.norm(), 1e-300));
    LineSearch ls(fn, res.x, p, res.f, d0, cfg);
    Point next;
    const bool found = ls.run(a1, next);
    res.evaluations += ls.evaluations;
    if (!found) {
      if (resets++ < 2 && scaled) {
        h.setIdentity();
        scaled = false;
        continue;
      }
      res.message = "line search failed";
      return res;
    }
    const Vec s = next.x - res.x;
    const Vec y = next.g - res.g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h = Mat::Identity(n, n) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vec hy = h * y;
      // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }
    res.x = next.x;
    res.f = next.f;
    res.g = next.g;
    ++res.iterations;
    resets = 0;
    if (observe) observe(res.iterations, res.x, res.f, res.g, next.a);
  }
  res.converged = res.g.lpNorm<Eigen::Infinity>() < cfg.grad_tol;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

// ---------------------------------------------------------------------------

std::string TrainHistory::csv() const
{
  std::string out = "iteration,phase,loss,grad_inf,lr,wall_s,failures,best_loss\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.10g,%.6g,%.6g,%.3f,%d,%.10g\n", r.iteration, r.phase.c_str(), r.loss,
                  r.grad_norm, r.lr, r.wall_time, r.failures, r.best_loss);
    out += buf;
  }
  return out;
}

bool hybrid_objective(const NetParams& net, const Dataset& ds, const Scenario& sc, const HybridOptions& opt,
                      bool fd_fallback, double& loss, Vec& grad, bool* used_fd)
{
  if (used_fd) *used_fd = false;
  GradientReport g = adjoint_gradient(net, ds, sc, opt);
  loss = g.loss;
  if (!std::isfinite(loss)) return false;
  if (!g.success) {
    if (!fd_fallback) return false;
    std::vector<Eigen::Index> all(static_cast<std::size_t>(net.theta.size()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    g.grad = fd_gradient(net, ds, sc, opt, all);
    if (used_fd) *used_fd = true;
    if (!g.grad.allFinite()) return false;
  }
  grad = std::move(g.grad);
  return true;
}

TrainResult train(const NetParams& theta0, const Dataset& ds, const Scenario& sc, const TrainConfig& cfg,
                  const HybridOptions& opt, const Checkpoint* resume)
{
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  TrainResult res;
  NetParams net = resume ? resume->net : theta0;
  if (static_cast<std::size_t>(net.theta.size()) != net.arch.parameter_count())
    throw std::invalid_argument("train: parameter vector does not match architecture");
  res.best = net;
  res.best_loss = std::numeric_limits<double>::infinity();

  auto save = [&](int iteration, const std::string& phase) {
    if (cfg.checkpoint_path.empty()) return;
    write_checkpoint(cfg.checkpoint_path, Checkpoint{net, iteration, phase});
  };
  auto note_best = [&](const Vec& theta, double loss) {
    if (loss < res.best_loss) {
      res.best_loss = loss;
      res.best.theta = theta;
    }
  };

  int first_adam = 1;
  bool skip_adam = false;
  if (resume) {
    if (resume->phase == "adam")
      first_adam = resume->iteration + 1;
    else
      skip_adam = true;
  }

  // ADAM phase.
  const int max_consecutive = std::max(1, static_cast<int>(std::ceil(cfg.max_failure_frac * std::max(cfg.adam_iters, 1))));
  AdamState moments;
  double lr_scale = 1.0;
  int consecutive = 0;
  bool converged = false;
  Vec last_good = net.theta;
  for (int it = first_adam; !skip_adam && it <= cfg.adam_iters; ++it) {
    double loss = 0.0;
    Vec grad;
    bool used_fd = false;
    const bool ok = hybrid_objective(net, ds, sc, opt, cfg.fd_fallback, loss, grad, &used_fd);
    if (used_fd) ++res.fd_fallbacks;
    TrainRecord rec;
    rec.iteration = it;
    rec.phase = "adam";
    rec.lr = adam_lr(cfg, it) * lr_scale;
    if (!ok || !adam_step(net.theta, grad, moments, it, cfg, lr_scale)) {
      ++res.failures;
      ++consecutive;
      net.theta = last_good;
      lr_scale *= 0.5;
      rec.loss = std::numeric_limits<double>::infinity();
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
      rec.failures = res.failures;
      rec.best_loss = res.best_loss;
      rec.wall_time = elapsed();
      res.history.records.push_back(rec);
      if (consecutive > max_consecutive) {
        res.aborted = true;
        res.message = "aborted after " + std::to_string(consecutive) + " consecutive solver failures";
        return res;
      }
      continue;
    }
    consecutive = 0;
    // The loss belongs to the parameters before the update.
    Vec before = last_good;
    note_best(before, loss);
    last_good = net.theta;
    rec.loss = loss;
    rec.grad_norm = grad.lpNorm<Eigen::Infinity>();
    rec.failures = res.failures;
    rec.best_loss = res.best_loss;
    rec.wall_time = elapsed();
    res.history.records.push_back(rec);
    if (rec.grad_norm < cfg.grad_tol) {
      // Stationary already: undo the (vanishing) step and stop.
      net.theta = before;
      converged = true;
      break;
    }
    if (it % cfg.checkpoint_every == 0) save(it, "adam");
  }

  // BFGS phase.
  if (!converged && cfg.qn_max_iters > 0) {
    const int base = skip_adam ? resume->iteration : cfg.adam_iters;
    int failures_here = 0;
    Objective fn = [&](const Vec& x, double& f, Vec& g) {
      NetParams p{net.arch, x};
      bool used_fd = false;
      const bool ok = hybrid_objective(p, ds, sc, opt, cfg.fd_fallback, f, g, &used_fd);
      if (used_fd) ++res.fd_fallbacks;
      if (!ok) {
        ++failures_here;
        ++res.failures;
        f = std::numeric_limits<double>::infinity();
        return false;
      }
      note_best(x, f);
      return true;
    };
    BfgsConfig bc;
    bc.max_iters = cfg.qn_max_iters;
    bc.grad_tol = cfg.grad_tol;
    auto observe = [&](int k, const Vec& x, double f, const Vec& g, double step) {
      net.theta = x;
      TrainRecord rec;
      rec.iteration = base + k;
      rec.phase = "bfgs";
      rec.loss = f;
      rec.grad_norm = g.lpNorm<Eigen::Infinity>();
      rec.lr = step;
      rec.failures = res.failures;
      rec.best_loss = res.best_loss;
      rec.wall_time = elapsed();
      res.history.records.push_back(rec);
      if (rec.iteration % cfg.checkpoint_every == 0) save(rec.iteration, "bfgs");
    };
    const BfgsResult br = bfgs_minimize(fn, net.theta, bc, observe);
    converged = br.converged;
    res.message = "bfgs: " + br.message;
  } else if (converged) {
    res.message = "gradient tolerance reached during adam";
  } else {
    res.message = "adam schedule complete";
  }
  res.converged = converged;
  if (!std::isfinite(res.best_loss)) {
    res.aborted = true;
    res.message = "no successful loss evaluation";
  }
  return res;
}

}  // namespace sorbkit
