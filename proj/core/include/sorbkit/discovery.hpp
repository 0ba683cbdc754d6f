#pragma once

// Interpretable uptake laws from a trained network: sparse regression over a
// polynomial library, genetic-programming symbolic regression and Taylor
// expansions of the reference laws.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sorbkit/insilico.hpp"
#include "sorbkit/network.hpp"
#include "sorbkit/ocfem.hpp"

namespace sorbkit {

struct UptakeSample
{
  double x = 0.0;  // position x*
  double t = 0.0;  // min
  double q = 0.0;
  double qstar = 0.0;
  double value = 0.0;  // network output, min^-1
};

/// Network uptake along a solved trajectory. Positions are snapped to the
/// nearest collocation point when snap is set. Throws std::domain_error for
/// positions outside [0, 1].
std::vector<UptakeSample> sample_uptake(const NetParams& net, const Simulation& sim, const std::vector<double>& positions,
                                        const std::vector<double>& times_min, bool snap = true);

std::string samples_csv(const std::vector<UptakeSample>& samples);

// ---------------------------------------------------------------------------
// Polynomial library q*^i q^j, 0 <= i, j <= max_degree; column 7 i + j for the
// default degree, column 0 is the constant.

class BasisLibrary
{
public:
  explicit BasisLibrary(int max_degree = 6);

  int size() const { return static_cast<int>(terms_.size()); }
  const std::vector<std::pair<int, int>>& terms() const { return terms_; }
  int index_of(int i, int j) const;

  Mat evaluate(const std::vector<UptakeSample>& samples) const;
  static std::string term_name(std::pair<int, int> term);

private:
  int degree_;
  std::vector<std::pair<int, int>> terms_;  // (power of q*, power of q)
};

// ---------------------------------------------------------------------------

struct LassoOptions
{
  bool mean_loss = false;  // 1/(2n) instead of 1/2 on the squared residual
  double rho = 1.0;
  double abs_tol = 1e-12;
  double rel_tol = 1e-10;
  int max_iters = 200000;
  double truncate = 1e-8;  // on standardized coefficients
};

struct LassoResult
{
  Vec coef;      // original scale
  Vec std_coef;  // standardized scale
  double objective = 0.0;  // in standardized coordinates
  int iterations = 0;
  bool converged = false;
};

/// Column standardization: non-constant columns are scaled to unit
/// population variance and, when a constant column exists, centered.
struct Standardization
{
  Vec mean;
  Vec scale;
  std::vector<bool> constant;
  int intercept_column = -1;
  double intercept_value = 1.0;  // raw value of the intercept column

  static Standardization fit(const Mat& a);
  Mat apply(const Mat& a) const;
  /// Coefficients on standardized columns to coefficients on raw columns.
  Vec to_original(const Vec& std_coef) const;
  Vec to_standardized(const Vec& coef) const;
};

/// min w ||b - A x||^2 + phi ||x||_1 with w = 1/2 (or 1/(2n)), by ADMM with
/// residual-balanced penalty updates. No standardization.
LassoResult lasso_admm_raw(const Mat& a, const Vec& b, double phi, const LassoOptions& opt = {});

/// Lasso on standardized columns; coefficients mapped back to the raw scale.
LassoResult lasso_admm(const Mat& theta, const Vec& y, double phi, const LassoOptions& opt = {});

/// n ln(rss / n) + k ln(n); -inf for rss == 0.
double bic(double rss, std::size_t n, std::size_t k);

struct SparseModel
{
  std::vector<std::pair<int, int>> terms;
  std::vector<double> coefficients;
  double phi = 0.0;
  double rss = 0.0;
  double lasso_rss = 0.0;
  double bic = 0.0;
  double mse = 0.0;
  bool refined = false;

  std::size_t active() const { return terms.size(); }
  double coefficient(int i, int j) const;  // 0 when inactive
  double predict(double q, double qstar) const;
  std::string to_string(int precision = 4) const;
};

/// The model as an uptake law with analytic partial derivatives.
UptakeFn polynomial_uptake(const SparseModel& model);

struct GridOptions
{
  std::vector<double> phis;  // empty: 10^(-3 + 0.05 i), i = 0..60
  LassoOptions lasso;
  int refit_iters = 1000;
  enum class Threshold { none, raw, standardized };
  Threshold threshold = Threshold::raw;  // drop non-intercept terms with |coef| < phi on this scale

  static std::vector<double> default_phis();
};

struct GridResult
{
  std::vector<SparseModel> models;  // one per phi
  std::size_t best = 0;             // argmin BIC

  const SparseModel& best_model() const { return models.at(best); }
};

GridResult phi_grid_search(const std::vector<UptakeSample>& samples, const BasisLibrary& library,
                           const GridOptions& opt = {});

// ---------------------------------------------------------------------------
// Genetic programming

struct ExprNode
{
  enum class Op { Add, Sub, Mul, Pow, Const, VarQ, VarQstar };
  Op op = Op::Const;
  double value = 0.0;  // constant value
  int power = 2;       // exponent for Pow
};

class ExprTree
{
public:
  ExprTree() = default;
  explicit ExprTree(std::vector<ExprNode> prefix) : nodes_(std::move(prefix)) {}

  const std::vector<ExprNode>& nodes() const { return nodes_; }
  std::vector<ExprNode>& nodes() { return nodes_; }
  int complexity() const { return static_cast<int>(nodes_.size()); }
  bool well_formed() const;

  double eval(double q, double qstar) const;
  Eigen::ArrayXd eval(const Eigen::ArrayXd& q, const Eigen::ArrayXd& qstar) const;

  /// End (exclusive) of the subtree rooted at prefix position i.
  std::size_t subtree_end(std::size_t i) const;
  std::vector<std::size_t> constant_positions() const;
  std::string to_string(int precision = 4) const;

  static int arity(ExprNode::Op op);

private:
  std::vector<ExprNode> nodes_;
};

struct GpOptions
{
  int population = 30;
  int iterations = 30;
  int cycles_per_iteration = 40;
  int max_complexity = 25;
  int tournament = 5;
  double crossover_prob = 0.5;
  int constant_opt_iters = 8;
  std::uint64_t seed = 0;
};

struct GpCandidate
{
  ExprTree tree;
  double mse = 0.0;
};

struct GpResult
{
  std::vector<GpCandidate> pareto;  // ascending complexity, strictly decreasing MSE
  GpCandidate best;                 // lowest MSE
  std::size_t evaluations = 0;
};

/// The expression as an uptake law; partial derivatives by central differences.
UptakeFn expression_uptake(const ExprTree& tree);

/// Deterministic per seed. Requires at least 10 samples.
GpResult gp_symbolic(const std::vector<UptakeSample>& samples, const GpOptions& opt = {});

// ---------------------------------------------------------------------------

struct TaylorExpansion
{
  int order = 1;
  double qstar0 = 0.0;
  double q0 = 0.0;
  double value = 0.0;
  double d_qstar = 0.0;
  double d_q = 0.0;
  double half_d2_qstar = 0.0;  // 1/2 d2/dq*2
  double d2_mixed = 0.0;       // d2/dq* dq
  double half_d2_q = 0.0;      // 1/2 d2/dq2

  /// Expansion multiplied out in raw variables: c, q*, q, q*^2, q* q, q^2.
  std::vector<double> monomials() const;
  double eval(double q, double qstar) const;
};

/// Analytic partial derivatives of a reference law at (q*0, q0).
/// Throws std::domain_error for a Vermeulen center with q0 at or below the floor.
TaylorExpansion taylor_expand(const KineticSpec& kin, double qstar0, double q0, int order);

}  // namespace sorbkit
