#include "sorbkit/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "sorbkit/trainer.hpp"

namespace sorbkit {

std::vector<UptakeSample> sample_uptake(const NetParams& net, const Simulation& sim, const std::vector<double>& positions,
                                        const std::vector<double>& times_min, bool snap)
{
  const Mesh& mesh = sim.model->mesh();
  std::vector<double> xs;
  for (double x : positions) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("sample_uptake: position outside [0, 1]");
    if (snap) {
      double best = mesh.collocation_point(0, 0);
      for (int k = 0; k < mesh.n_elements(); ++k)
        for (int p = 0; p < 2; ++p) {
          const double c = mesh.collocation_point(k, p);
          if (std::abs(c - x) < std::abs(best - x)) best = c;
        }
      x = best;
    }
    xs.push_back(x);
  }
  std::vector<UptakeSample> out;
  out.reserve(xs.size() * times_min.size());
  std::vector<Vec> states;
  states.reserve(times_min.size());
  for (double t : times_min) states.push_back(sim.state_at(t));
  const IsothermSpec& iso = sim.model->isotherm();
  for (double x : xs) {
    for (std::size_t i = 0; i < times_min.size(); ++i) {
      const ProfilePoint pp = interpolate(states[i], mesh, x);
      UptakeSample s;
      s.x = x;
      s.t = times_min[i];
      s.q = pp.q;
      s.qstar = isotherm_eval(iso, std::max(pp.c, 0.0));
      s.value = net_forward(net, s.q, s.qstar);
      out.push_back(s);
    }
  }
  return out;
}

std::string samples_csv(const std::vector<UptakeSample>& samples)
{
  std::string out = "x,t_min,q_mgg,qstar_mgg,uptake_per_min\n";
  char buf[160];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.12g,%.12g,%.12g\n", s.x, s.t, s.q, s.qstar, s.value);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

BasisLibrary::BasisLibrary(int max_degree) : degree_(max_degree)
{
  if (max_degree < 0) throw std::invalid_argument("BasisLibrary: degree must be nonnegative");
  for (int i = 0; i <= max_degree; ++i)
    for (int j = 0; j <= max_degree; ++j) terms_.emplace_back(i, j);
}

int BasisLibrary::index_of(int i, int j) const
{
  if (i < 0 || j < 0 || i > degree_ || j > degree_) return -1;
  return i * (degree_ + 1) + j;
}

Mat BasisLibrary::evaluate(const std::vector<UptakeSample>& samples) const
{
  Mat out(static_cast<Eigen::Index>(samples.size()), size());
  for (std::size_t r = 0; r < samples.size(); ++r)
    for (int c = 0; c < size(); ++c) {
      const auto [i, j] = terms_[static_cast<std::size_t>(c)];
      out(static_cast<Eigen::Index>(r), c) = std::pow(samples[r].qstar, i) * std::pow(samples[r].q, j);
    }
  return out;
}

std::string BasisLibrary::term_name(std::pair<int, int> term)
{
  auto part = [](const char* v, int p) -> std::string {
    if (p == 0) return "";
    return p == 1 ? v : std::string(v) + "^" + std::to_string(p);
  };
  const std::string a = part("q*", term.first);
  const std::string b = part("q", term.second);
  if (a.empty() && b.empty()) return "1";
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + " " + b;
}

// ---------------------------------------------------------------------------

Standardization Standardization::fit(const Mat& a)
{
  Standardization s;
  const auto n = static_cast<double>(a.rows());
  s.mean = Vec::Zero(a.cols());
  s.scale = Vec::Ones(a.cols());
  s.constant.assign(static_cast<std::size_t>(a.cols()), false);
  Vec sd(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double m = a.col(j).mean();
    const double var = (a.col(j).array() - m).square().sum() / n;
    sd[j] = std::sqrt(var);
    s.mean[j] = m;
    const bool constant = !(sd[j] > 1e-12 * std::max(1.0, std::abs(m)));
    s.constant[static_cast<std::size_t>(j)] = constant;
    if (constant && s.intercept_column < 0 && m != 0.0) {
      s.intercept_column = static_cast<int>(j);
      s.intercept_value = m;
    }
  }
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (s.constant[static_cast<std::size_t>(j)]) {
      s.mean[j] = 0.0;
    } else {
      s.scale[j] = sd[j];
      if (s.intercept_column < 0) s.mean[j] = 0.0;
    }
  }
  return s;
}

Mat Standardization::apply(const Mat& a) const
{
  Mat out(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) out.col(j) = (a.col(j).array() - mean[j]) / scale[j];
  return out;
}

Vec Standardization::to_original(const Vec& s) const
{
  Vec c = s.cwiseQuotient(scale);
  if (intercept_column >= 0) {
    double shift = 0.0;
    for (Eigen::Index j = 0; j < s.size(); ++j) shift += c[j] * mean[j];
    c[intercept_column] -= shift / intercept_value;
  }
  return c;
}

Vec Standardization::to_standardized(const Vec& c) const
{
  Vec s = c.cwiseProduct(scale);
  if (intercept_column >= 0) {
    double shift = 0.0;
    for (Eigen::Index j = 0; j < c.size(); ++j) shift += c[j] * mean[j];
    s[intercept_column] += shift / intercept_value;
  }
  return s;
}

namespace {

double soft(double v, double k) { return v > k ? v - k : (v < -k ? v + k : 0.0); }

double lasso_objective(const Mat& a, const Vec& b, const Vec& x, double phi, bool mean_loss)
{
  const double w = mean_loss ? 0.5 / static_cast<double>(a.rows()) : 0.5;
  return w * (b - a * x).squaredNorm() + phi * x.lpNorm<1>();
}

}  // namespace

LassoResult lasso_admm_raw(const Mat& a, const Vec& b, double phi, const LassoOptions& opt)
{
  if (!(phi >= 0.0)) throw std::invalid_argument("lasso_admm: penalty must be nonnegative");
  if (a.rows() != b.size()) throw std::invalid_argument("lasso_admm: shape mismatch");
  const auto p = a.cols();
  // Scale the penalty so that the solver always works on 1/2 ||b - A x||^2.
  const double lambda = opt.mean_loss ? phi * static_cast<double>(a.rows()) : phi;
  const Mat ata = a.transpose() * a;
  const Vec atb = a.transpose() * b;
  double rho = opt.rho;
  Eigen::LLT<Mat> llt(ata + rho * Mat::Identity(p, p));
  Vec x = Vec::Zero(p), z = Vec::Zero(p), u = Vec::Zero(p);
  const double alpha = 1.6;  // over-relaxation
  LassoResult res;
  const double sqrt_p = std::sqrt(static_cast<double>(p));
  for (int it = 1; it <= opt.max_iters; ++it) {
    x = llt.solve(atb + rho * (z - u));
    const Vec xh = alpha * x + (1.0 - alpha) * z;
    const Vec z_old = z;
    for (Eigen::Index i = 0; i < p; ++i) z[i] = soft(xh[i] + u[i], lambda / rho);
    u += xh - z;
    const double r = (x - z).norm();
    const double s = rho * (z - z_old).norm();
    const double eps_pri = sqrt_p * opt.abs_tol + opt.rel_tol * std::max(x.norm(), z.norm());
    const double eps_dual = sqrt_p * opt.abs_tol + opt.rel_tol * rho * u.norm();
    res.iterations = it;
    if (r <= eps_pri && s <= eps_dual) {
      res.converged = true;
      break;
    }
    if (it % 10 == 0 && it <= 20000) {
      double factor = 1.0;
      if (r > 10.0 * s)
        factor = 2.0;
      else if (s > 10.0 * r)
        factor = 0.5;
      if (factor != 1.0) {
        rho *= factor;
        u /= factor;
        llt.compute(ata + rho * Mat::Identity(p, p));
      }
    }
  }
  res.std_coef = z;
  res.coef = z;
  res.objective = lasso_objective(a, b, z, phi, opt.mean_loss);
  return res;
}

LassoResult lasso_admm(const Mat& theta, const Vec& y, double phi, const LassoOptions& opt)
{
  const Standardization st = Standardization::fit(theta);
  const Mat z = st.apply(theta);
  LassoResult res = lasso_admm_raw(z, y, phi, opt);
  for (Eigen::Index i = 0; i < res.std_coef.size(); ++i)
    if (std::abs(res.std_coef[i]) < opt.truncate) res.std_coef[i] = 0.0;
  res.objective = lasso_objective(z, y, res.std_coef, phi, opt.mean_loss);
  res.coef = st.to_original(res.std_coef);
  for (Eigen::Index i = 0; i < res.coef.size(); ++i)
    if (res.std_coef[i] == 0.0 && !(st.intercept_column == static_cast<int>(i))) res.coef[i] = 0.0;
  return res;
}

double bic(double rss, std::size_t n, std::size_t k)
{
  if (rss < 0.0 || n == 0 || k >= n) throw std::invalid_argument("bic: need rss >= 0 and n > k");
  if (rss == 0.0) return -std::numeric_limits<double>::infinity();
  const double nn = static_cast<double>(n);
  return nn * std::log(rss / nn) + static_cast<double>(k) * std::log(nn);
}

double SparseModel::coefficient(int i, int j) const
{
  for (std::size_t a = 0; a < terms.size(); ++a)
    if (terms[a] == std::make_pair(i, j)) return coefficients[a];
  return 0.0;
}

double SparseModel::predict(double q, double qstar) const
{
  double v = 0.0;
  for (std::size_t a = 0; a < terms.size(); ++a)
    v += coefficients[a] * std::pow(qstar, terms[a].first) * std::pow(q, terms[a].second);
  return v;
}

std::string SparseModel::to_string(int precision) const
{
  std::string out;
  char buf[64];
  for (std::size_t a = 0; a < terms.size(); ++a) {
    const double c = coefficients[a];
    std::snprintf(buf, sizeof buf, "%.*g", precision, std::abs(c));
    if (out.empty())
      out += c < 0.0 ? "-" : "";
    else
      out += c < 0.0 ? " - " : " + ";
    out += buf;
    if (terms[a] != std::make_pair(0, 0)) out += " " + BasisLibrary::term_name(terms[a]);
  }
  return out.empty() ? "0" : out;
}

UptakeFn polynomial_uptake(const SparseModel& model)
{
  return [model](double q, double qstar) {
    UptakeRate r;
    for (std::size_t a = 0; a < model.terms.size(); ++a) {
      const auto [i, j] = model.terms[a];
      const double c = model.coefficients[a];
      const double ps = std::pow(qstar, i), pq = std::pow(q, j);
      r.value += c * ps * pq;
      if (i > 0) r.d_qstar += c * i * std::pow(qstar, i - 1) * pq;
      if (j > 0) r.d_q += c * j * ps * std::pow(q, j - 1);
    }
    return r;
  };
}

std::vector<double> GridOptions::default_phis()
{
  std::vector<double> out;
  for (int i = 0; i <= 60; ++i) out.push_back(std::pow(10.0, -3.0 + 0.05 * i));
  return out;
}

namespace {

// Unpenalized least squares on the given raw columns by BFGS in standardized
// coordinates, started from c0.
Vec refit(const Mat& a, const Vec& y, const Vec& c0, int max_iters)
{
  const Standardization st = Standardization::fit(a);
  const Mat z = st.apply(a);
  const double gscale = 1.0 + (z.transpose() * y).lpNorm<Eigen::Infinity>();
  Objective fn = [&](const Vec& s, double& f, Vec& g) {
    const Vec r = z * s - y;
    f = 0.5 * r.squaredNorm();
    g = z.transpose() * r;
    return true;
  };
  BfgsConfig bc;
  bc.max_iters = max_iters;
  bc.grad_tol = 1e-11 * gscale;
  const BfgsResult br = bfgs_minimize(fn, st.to_standardized(c0), bc);
  return st.to_original(br.x);
}

}  // namespace

GridResult phi_grid_search(const std::vector<UptakeSample>& samples, const BasisLibrary& library, const GridOptions& opt)
{
  if (samples.size() < 2) throw std::invalid_argument("phi_grid_search: need at least two samples");
  const Mat theta = library.evaluate(samples);
  Vec y(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) y[static_cast<Eigen::Index>(i)] = samples[i].value;
  const auto n = samples.size();
  const std::vector<double> phis = opt.phis.empty() ? GridOptions::default_phis() : opt.phis;
  const int const_col = library.index_of(0, 0);

  GridResult out;
  for (double phi : phis) {
    const LassoResult lr = lasso_admm(theta, y, phi, opt.lasso);
    std::vector<int> active;
    for (Eigen::Index i = 0; i < lr.coef.size(); ++i) {
      if (lr.coef[i] == 0.0) continue;
      if (i != const_col) {
        if (opt.threshold == GridOptions::Threshold::raw && std::abs(lr.coef[i]) < phi) continue;
        if (opt.threshold == GridOptions::Threshold::standardized && std::abs(lr.std_coef[i]) < phi) continue;
      }
      active.push_back(static_cast<int>(i));
    }

    SparseModel m;
    m.phi = phi;
    if (active.empty()) {
      // Constant-only fallback keeps at least one term.
      if (const_col < 0) throw std::runtime_error("phi_grid_search: library has no constant term");
      m.terms = {library.terms()[static_cast<std::size_t>(const_col)]};
      m.coefficients = {y.mean()};
      m.lasso_rss = y.squaredNorm();
      m.rss = (y.array() - y.mean()).square().sum();
    } else {
      Mat sub(theta.rows(), static_cast<Eigen::Index>(active.size()));
      Vec c0(static_cast<Eigen::Index>(active.size()));
      for (std::size_t a = 0; a < active.size(); ++a) {
        sub.col(static_cast<Eigen::Index>(a)) = theta.col(active[a]);
        c0[static_cast<Eigen::Index>(a)] = lr.coef[active[a]];
      }
      m.lasso_rss = (y - sub * c0).squaredNorm();
      Vec c = refit(sub, y, c0, opt.refit_iters);
      double rss = (y - sub * c).squaredNorm();
      if (!(rss <= m.lasso_rss)) {
        c = c0;
        rss = m.lasso_rss;
      }
      m.refined = true;
      m.rss = rss;
      for (std::size_t a = 0; a < active.size(); ++a) {
        m.terms.push_back(library.terms()[static_cast<std::size_t>(active[a])]);
        m.coefficients.push_back(c[static_cast<Eigen::Index>(a)]);
      }
    }
    m.mse = m.rss / static_cast<double>(n);
    m.bic = m.active() < n ? bic(m.rss, n, m.active()) : std::numeric_limits<double>::infinity();
    out.models.push_back(std::move(m));
  }
  for (std::size_t i = 1; i < out.models.size(); ++i)
    if (out.models[i].bic < out.models[out.best].bic) out.best = i;
  return out;
}

// ---------------------------------------------------------------------------
// Expression trees

int ExprTree::arity(ExprNode::Op op)
{
  switch (op) {
    case ExprNode::Op::Add:
    case ExprNode::Op::Sub:
    case ExprNode::Op::Mul:
      return 2;
    case ExprNode::Op::Pow:
      return 1;
    default:
      return 0;
  }
}

std::size_t ExprTree::subtree_end(std::size_t i) const
{
  int need = 1;
  while (need > 0) {
    if (i >= nodes_.size()) throw std::logic_error("ExprTree: malformed prefix");
    need += arity(nodes_[i].op) - 1;
    ++i;
  }
  return i;
}

bool ExprTree::well_formed() const
{
  if (nodes_.empty()) return false;
  int need = 1;
  for (const auto& n : nodes_) {
    if (need <= 0) return false;
    if (n.op == ExprNode::Op::Pow && (n.power < 2 || n.power > 3)) return false;
    need += arity(n.op) - 1;
  }
  return need == 0;
}

namespace {

double eval_at(const std::vector<ExprNode>& nodes, std::size_t& i, double q, double qs)
{
  const ExprNode& n = nodes[i++];
  switch (n.op) {
    case ExprNode::Op::Const: return n.value;
    case ExprNode::Op::VarQ: return q;
    case ExprNode::Op::VarQstar: return qs;
    case ExprNode::Op::Pow: {
      const double a = eval_at(nodes, i, q, qs);
      return n.power == 2 ? a * a : a * a * a;
    }
    default: {
      const double a = eval_at(nodes, i, q, qs);
      const double b = eval_at(nodes, i, q, qs);
      return n.op == ExprNode::Op::Add ? a + b : (n.op == ExprNode::Op::Sub ? a - b : a * b);
    }
  }
}

Eigen::ArrayXd eval_array(const std::vector<ExprNode>& nodes, std::size_t& i, const Eigen::ArrayXd& q,
                          const Eigen::ArrayXd& qs)
{
  const ExprNode& n = nodes[i++];
  switch (n.op) {
    case ExprNode::Op::Const: return Eigen::ArrayXd::Constant(q.size(), n.value);
    case ExprNode::Op::VarQ: return q;
    case ExprNode::Op::VarQstar: return qs;
    case ExprNode::Op::Pow: {
      const Eigen::ArrayXd a = eval_array(nodes, i, q, qs);
      return n.power == 2 ? Eigen::ArrayXd(a * a) : Eigen::ArrayXd(a * a * a);
    }
    default: {
      const Eigen::ArrayXd a = eval_array(nodes, i, q, qs);
      const Eigen::ArrayXd b = eval_array(nodes, i, q, qs);
      if (n.op == ExprNode::Op::Add) return a + b;
      if (n.op == ExprNode::Op::Sub) return a - b;
      return a * b;
    }
  }
}

std::string print(const std::vector<ExprNode>& nodes, std::size_t& i, int precision)
{
  const ExprNode& n = nodes[i++];
  char buf[64];
  switch (n.op) {
    case ExprNode::Op::Const:
      std::snprintf(buf, sizeof buf, "%.*g", precision, n.value);
      return buf;
    case ExprNode::Op::VarQ: return "q";
    case ExprNode::Op::VarQstar: return "q*";
    case ExprNode::Op::Pow: return "(" + print(nodes, i, precision) + ")^" + std::to_string(n.power);
    default: {
      const std::string a = print(nodes, i, precision);
      const std::string b = print(nodes, i, precision);
      const char* op = n.op == ExprNode::Op::Add ? " + " : (n.op == ExprNode::Op::Sub ? " - " : " * ");
      return "(" + a + op + b + ")";
    }
  }
}

}  // namespace

double ExprTree::eval(double q, double qstar) const
{
  std::size_t i = 0;
  return eval_at(nodes_, i, q, qstar);
}

Eigen::ArrayXd ExprTree::eval(const Eigen::ArrayXd& q, const Eigen::ArrayXd& qstar) const
{
  std::size_t i = 0;
  return eval_array(nodes_, i, q, qstar);
}

std::vector<std::size_t> ExprTree::constant_positions() const
{
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == ExprNode::Op::Const) out.push_back(i);
  return out;
}

UptakeFn expression_uptake(const ExprTree& tree)
{
  return [tree](double q, double qstar) {
    UptakeRate r;
    r.value = tree.eval(q, qstar);
    const double hq = 1e-6 * std::max(1.0, std::abs(q));
    const double hs = 1e-6 * std::max(1.0, std::abs(qstar));
    r.d_q = (tree.eval(q + hq, qstar) - tree.eval(q - hq, qstar)) / (2.0 * hq);
    r.d_qstar = (tree.eval(q, qstar + hs) - tree.eval(q, qstar - hs)) / (2.0 * hs);
    return r;
  };
}

std::string ExprTree::to_string(int precision) const
{
  std::size_t i = 0;
  return print(nodes_, i, precision);
}

// ---------------------------------------------------------------------------
// Evolution

namespace {

using Rng = std::mt19937_64;

class Evolver
{
public:
  Evolver(const std::vector<UptakeSample>& samples, const GpOptions& opt) : opt_(opt), rng_(opt.seed)
  {
    const auto n = static_cast<Eigen::Index>(samples.size());
    q_.resize(n);
    qs_.resize(n);
    y_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      q_[i] = samples[static_cast<std::size_t>(i)].q;
      qs_[i] = samples[static_cast<std::size_t>(i)].qstar;
      y_[i] = samples[static_cast<std::size_t>(i)].value;
    }
  }

  GpResult run()
  {
    std::vector<GpCandidate> pop;
    for (int i = 0; i < opt_.population; ++i) pop.push_back(evaluate(random_tree(i % 2 == 0 ? 2 : 3)));
    std::vector<int> age(pop.size(), 0);
    int clock = 0;
    for (int it = 0; it < opt_.iterations; ++it) {
      for (int cyc = 0; cyc < opt_.cycles_per_iteration; ++cyc) {
        ExprTree child;
        if (uniform() < opt_.crossover_prob)
          child = crossover(pop[tournament(pop)].tree, pop[tournament(pop)].tree);
        else
          child = mutate(pop[tournament(pop)].tree);
        if (!child.well_formed() || child.complexity() > opt_.max_complexity) continue;
        // Replace the oldest member, as in age-regularized evolution.
        const auto oldest =
            static_cast<std::size_t>(std::min_element(age.begin(), age.end()) - age.begin());
        pop[oldest] = evaluate(std::move(child));
        age[oldest] = ++clock;
      }
    }
    GpResult res;
    res.evaluations = evaluations_;
    double last = std::numeric_limits<double>::infinity();
    for (const auto& [complexity, cand] : hall_) {
      (void)complexity;
      if (cand.mse < last) {
        res.pareto.push_back(cand);
        last = cand.mse;
      }
    }
    res.best = res.pareto.back();
    return res;
  }

private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  ExprNode random_terminal()
  {
    ExprNode n;
    const int k = uniform_int(0, 2);
    if (k == 0) {
      n.op = ExprNode::Op::Const;
      n.value = std::uniform_real_distribution<double>(-1.0, 1.0)(rng_);
    } else {
      n.op = k == 1 ? ExprNode::Op::VarQ : ExprNode::Op::VarQstar;
    }
    return n;
  }

  void grow(std::vector<ExprNode>& out, int depth)
  {
    if (depth <= 0 || (out.size() > 0 && uniform() < 0.3)) {
      out.push_back(random_terminal());
      return;
    }
    ExprNode n;
    const int k = uniform_int(0, 3);
    n.op = k == 0 ? ExprNode::Op::Add : k == 1 ? ExprNode::Op::Sub : k == 2 ? ExprNode::Op::Mul : ExprNode::Op::Pow;
    n.power = uniform_int(2, 3);
    out.push_back(n);
    for (int a = 0; a < ExprTree::arity(n.op); ++a) grow(out, depth - 1);
  }

  ExprTree random_tree(int depth)
  {
    std::vector<ExprNode> nodes;
    grow(nodes, depth);
    return ExprTree(std::move(nodes));
  }

  std::size_t tournament(const std::vector<GpCandidate>& pop)
  {
    std::size_t best = static_cast<std::size_t>(uniform_int(0, static_cast<int>(pop.size()) - 1));
    for (int i = 1; i < opt_.tournament; ++i) {
      const auto c = static_cast<std::size_t>(uniform_int(0, static_cast<int>(pop.size()) - 1));
      if (score(pop[c]) < score(pop[best])) best = c;
    }
    return best;
  }

  // Fitness with a mild parsimony pressure.
  static double score(const GpCandidate& c) { return c.mse * (1.0 + 0.01 * c.tree.complexity()); }

  ExprTree crossover(const ExprTree& a, const ExprTree& b)
  {
    const auto& na = a.nodes();
    const auto& nb = b.nodes();
    const auto ia = static_cast<std::size_t>(uniform_int(0, static_cast<int>(na.size()) - 1));
    const auto ib = static_cast<std::size_t>(uniform_int(0, static_cast<int>(nb.size()) - 1));
    std::vector<ExprNode> out(na.begin(), na.begin() + static_cast<std::ptrdiff_t>(ia));
    out.insert(out.end(), nb.begin() + static_cast<std::ptrdiff_t>(ib),
               nb.begin() + static_cast<std::ptrdiff_t>(b.subtree_end(ib)));
    out.insert(out.end(), na.begin() + static_cast<std::ptrdiff_t>(a.subtree_end(ia)), na.end());
    return ExprTree(std::move(out));
  }

  ExprTree mutate(const ExprTree& t)
  {
    std::vector<ExprNode> nodes = t.nodes();
    const auto i = static_cast<std::size_t>(uniform_int(0, static_cast<int>(nodes.size()) - 1));
    const ExprTree tree(nodes);
    const double r = uniform();
    if (r < 0.25) {
      // Point mutation within the same arity class.
      ExprNode& n = nodes[i];
      const int ar = ExprTree::arity(n.op);
      if (ar == 2) {
        const ExprNode::Op ops[] = {ExprNode::Op::Add, ExprNode::Op::Sub, ExprNode::Op::Mul};
        n.op = ops[uniform_int(0, 2)];
      } else if (ar == 1) {
        n.power = n.power == 2 ? 3 : 2;
      } else {
        n = random_terminal();
      }
    } else if (r < 0.6) {
      // Replace a subtree.
      std::vector<ExprNode> sub;
      grow(sub, uniform_int(1, 3));
      std::vector<ExprNode> out(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(i));
      out.insert(out.end(), sub.begin(), sub.end());
      out.insert(out.end(), nodes.begin() + static_cast<std::ptrdiff_t>(tree.subtree_end(i)), nodes.end());
      nodes = std::move(out);
    } else if (r < 0.8) {
      // Wrap a subtree: s -> s op terminal.
      const std::size_t end = tree.subtree_end(i);
      ExprNode op;
      const int k = uniform_int(0, 2);
      op.op = k == 0 ? ExprNode::Op::Add : k == 1 ? ExprNode::Op::Sub : ExprNode::Op::Mul;
      std::vector<ExprNode> out(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(i));
      out.push_back(op);
      out.insert(out.end(), nodes.begin() + static_cast<std::ptrdiff_t>(i), nodes.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(random_terminal());
      out.insert(out.end(), nodes.begin() + static_cast<std::ptrdiff_t>(end), nodes.end());
      nodes = std::move(out);
    } else {
      // Hoist: replace the tree by one of its subtrees.
      nodes.assign(nodes.begin() + static_cast<std::ptrdiff_t>(i),
                   nodes.begin() + static_cast<std::ptrdiff_t>(tree.subtree_end(i)));
    }
    return ExprTree(std::move(nodes));
  }

  double mse(const ExprTree& t) const
  {
    const double v = (t.eval(q_, qs_) - y_).square().mean();
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }

  // Levenberg-Marquardt on the constants with a forward-difference Jacobian.
  void optimize_constants(ExprTree& t)
  {
    const auto pos = t.constant_positions();
    if (pos.empty()) return;
    const auto m = static_cast<Eigen::Index>(pos.size());
    auto& nodes = t.nodes();
    Eigen::ArrayXd r = t.eval(q_, qs_) - y_;
    double cost = r.square().sum();
    if (!std::isfinite(cost)) return;
    double mu = 1e-3;
    for (int it = 0; it < opt_.constant_opt_iters; ++it) {
      Mat jac(y_.size(), m);
      for (Eigen::Index k = 0; k < m; ++k) {
        double& c = nodes[pos[static_cast<std::size_t>(k)]].value;
        const double c0 = c;
        const double h = 1e-7 * std::max(1.0, std::abs(c0));
        c = c0 + h;
        jac.col(k) = ((t.eval(q_, qs_) - y_) - r).matrix() / h;
        c = c0;
      }
      const Mat jtj = jac.transpose() * jac;
      const Vec jtr = jac.transpose() * r.matrix();
      bool improved = false;
      for (int tries = 0; tries < 6 && !improved; ++tries) {
        Mat a = jtj;
        a.diagonal() += mu * (jtj.diagonal().array() + 1e-12).matrix();
        const Vec step = a.ldlt().solve(-jtr);
        if (!step.allFinite()) break;
        std::vector<double> saved;
        for (Eigen::Index k = 0; k < m; ++k) {
          saved.push_back(nodes[pos[static_cast<std::size_t>(k)]].value);
          nodes[pos[static_cast<std::size_t>(k)]].value += step[k];
        }
        const Eigen::ArrayXd rn = t.eval(q_, qs_) - y_;
        const double cn = rn.square().sum();
        if (std::isfinite(cn) && cn < cost) {
          r = rn;
          cost = cn;
          mu = std::max(mu * 0.3, 1e-12);
          improved = true;
        } else {
          for (Eigen::Index k = 0; k < m; ++k) nodes[pos[static_cast<std::size_t>(k)]].value = saved[static_cast<std::size_t>(k)];
          mu *= 10.0;
        }
      }
      if (!improved) break;
    }
  }

  GpCandidate evaluate(ExprTree t)
  {
    ++evaluations_;
    optimize_constants(t);
    GpCandidate c{std::move(t), 0.0};
    c.mse = mse(c.tree);
    auto it = hall_.find(c.tree.complexity());
    if (it == hall_.end() || c.mse < it->second.mse) hall_[c.tree.complexity()] = c;
    return c;
  }

  GpOptions opt_;
  Rng rng_;
  Eigen::ArrayXd q_, qs_, y_;
  std::map<int, GpCandidate> hall_;  // best per complexity
  std::size_t evaluations_ = 0;
};

}  // namespace

GpResult gp_symbolic(const std::vector<UptakeSample>& samples, const GpOptions& opt)
{
  if (samples.size() < 10) throw std::invalid_argument("gp_symbolic: need at least 10 samples");
  if (opt.population < 2 || opt.iterations < 0 || opt.cycles_per_iteration < 0 || opt.max_complexity < 1 ||
      opt.tournament < 1)
    throw std::invalid_argument("gp_symbolic: invalid options");
  return Evolver(samples, opt).run();
}

// ---------------------------------------------------------------------------

std::vector<double> TaylorExpansion::monomials() const
{
  const double a = qstar0, b = q0;
  const double s2 = order >= 2 ? half_d2_qstar : 0.0;
  const double m = order >= 2 ? d2_mixed : 0.0;
  const double q2 = order >= 2 ? half_d2_q : 0.0;
  // f = v + gs (x - a) + gq (y - b) + s2 (x - a)^2 + m (x - a)(y - b) + q2 (y - b)^2
  return {
      value - d_qstar * a - d_q * b + s2 * a * a + m * a * b + q2 * b * b,
      d_qstar - 2.0 * s2 * a - m * b,
      d_q - m * a - 2.0 * q2 * b,
      s2,
      m,
      q2,
  };
}

double TaylorExpansion::eval(double q, double qstar) const
{
  const double dx = qstar - qstar0, dy = q - q0;
  double v = value + d_qstar * dx + d_q * dy;
  if (order >= 2) v += half_d2_qstar * dx * dx + d2_mixed * dx * dy + half_d2_q * dy * dy;
  return v;
}

TaylorExpansion taylor_expand(const KineticSpec& kin, double qstar0, double q0, int order)
{
  kin.validate();
  if (order != 1 && order != 2) throw std::invalid_argument("taylor_expand: order must be 1 or 2");
  if (!std::isfinite(qstar0) || !std::isfinite(q0) || qstar0 < 0.0 || q0 < 0.0)
    throw std::domain_error("taylor_expand: center outside the domain");
  TaylorExpansion t;
  t.order = order;
  t.qstar0 = qstar0;
  t.q0 = q0;
  const double k = kin.rate_constant;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  switch (kin.kind) {
    case KineticKind::LDF:
      t.value = k * (qstar0 - q0);
      t.d_qstar = k;
      t.d_q = -k;
      break;
    case KineticKind::Vermeulen: {
      if (q0 <= kin.q_floor) throw std::domain_error("taylor_expand: Vermeulen center at or below the q floor");
      const double q = q0, s = qstar0;
      t.value = k * (s * s - q * q) / (2.0 * q);
      t.d_qstar = k * s / q;
      t.d_q = -0.5 * k * (1.0 + s * s / (q * q));
      sxx = k / q;
      sxy = -k * s / (q * q);
      syy = k * s * s / (q * q * q);
      break;
    }
    case KineticKind::ImprovedLDF: {
      constexpr double a = 0.2789;
      if (qstar0 <= 0.0) throw std::domain_error("taylor_expand: improved LDF needs q* > 0");
      const double s = qstar0;
      const double r = q0 / (2.0 * s);
      const double e = std::exp(-r);
      t.value = k * (s + a * s * e - q0);
      t.d_qstar = k * (1.0 + a * e * (1.0 + r));
      t.d_q = k * (-0.5 * a * e - 1.0);
      sxx = k * a * e * r * r / s;
      sxy = -k * a * e * r / (2.0 * s);
      syy = k * a * e / (4.0 * s);
      break;
    }
  }
  if (order == 2) {
    t.half_d2_qstar = 0.5 * sxx;
    t.d2_mixed = sxy;
    t.half_d2_q = 0.5 * syy;
  }
  return t;
}

}  // namespace sorbkit
