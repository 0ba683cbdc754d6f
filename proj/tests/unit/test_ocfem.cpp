#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sorbkit/ocfem.hpp"

using namespace sorbkit;

namespace {

UptakeFn zero_uptake()
{
  return [](double, double) { return UptakeRate{}; };
}

FeedSchedule step_feed(double c_in) { return FeedSchedule{{{0.0, c_in}}, 110.0, 0.5}; }

// Value and slope dofs of a global function on the mesh nodes.
template <class F, class D>
Vec liquid_dofs(const Mesh& mesh, F f, D df)
{
  Vec y = Vec::Zero(mesh.state_size());
  for (int i = 0; i < mesh.n_nodes(); ++i) {
    y[mesh.value_index(i)] = f(mesh.node(i));
    y[mesh.slope_index(i)] = df(mesh.node(i));
  }
  return y;
}

}  // namespace

TEST(Hermite, NodalValues)
{
  const double h = 0.25;
  const auto b0 = hermite_basis(0.0, h);
  EXPECT_DOUBLE_EQ(b0.value[0], 1.0);
  EXPECT_DOUBLE_EQ(b0.value[1], 0.0);
  EXPECT_DOUBLE_EQ(b0.value[2], 0.0);
  EXPECT_DOUBLE_EQ(b0.value[3], 0.0);
  const auto b1 = hermite_basis(1.0, h);
  EXPECT_DOUBLE_EQ(b1.value[0], 0.0);
  EXPECT_DOUBLE_EQ(b1.value[1], 0.0);
  EXPECT_DOUBLE_EQ(b1.value[2], 1.0);
  EXPECT_DOUBLE_EQ(b1.value[3], 0.0);
  // Slope bases carry unit derivative at their own node.
  EXPECT_NEAR(b0.d1[1], 1.0, 1e-14);
  EXPECT_NEAR(b1.d1[3], 1.0, 1e-14);
}

TEST(Hermite, PartitionOfUnity)
{
  for (double u = 0.0; u <= 1.0; u += 0.0625) {
    const auto b = hermite_basis(u, 0.1);
    EXPECT_NEAR(b.value[0] + b.value[2], 1.0, 1e-15);
    EXPECT_NEAR(b.d1[0] + b.d1[2], 0.0, 1e-12);
  }
}

TEST(Mesh, LayoutAndLocate)
{
  const Mesh m(4);
  EXPECT_EQ(m.state_size(), 18);
  EXPECT_EQ(m.outlet_index(), 8);
  EXPECT_EQ(m.q_index(0, 0), 10);
  EXPECT_EQ(m.q_index(3, 1), 17);
  EXPECT_EQ(m.locate(1.0).first, 3);
  EXPECT_NEAR(m.locate(1.0).second, 1.0, 1e-14);
  EXPECT_EQ(m.locate(0.5).first, 2);
  EXPECT_THROW(Mesh(0), std::invalid_argument);
}

TEST(Interpolate, CubicReproducedExactly)
{
  const Mesh m(5);
  auto f = [](double x) { return 1.0 - 2.0 * x + 0.5 * x * x + 3.0 * x * x * x; };
  auto df = [](double x) { return -2.0 + x + 9.0 * x * x; };
  const Vec y = liquid_dofs(m, f, df);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    const auto p = interpolate(y, m, x);
    EXPECT_NEAR(p.c, f(x), 1e-13);
    EXPECT_NEAR(p.dc_dx, df(x), 1e-12);
  }
}

TEST(Interpolate, NodeValueAndLinearSlope)
{
  const Mesh m(6);
  const Vec y = liquid_dofs(m, [](double x) { return x; }, [](double) { return 1.0; });
  for (int i = 0; i < m.n_nodes(); ++i) EXPECT_DOUBLE_EQ(interpolate(y, m, m.node(i)).c, y[m.value_index(i)]);
  for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) EXPECT_NEAR(interpolate(y, m, x).dc_dx, 1.0, 1e-13);
}

TEST(Interpolate, SizeMismatchThrows)
{
  EXPECT_THROW(interpolate(Vec::Zero(3), Mesh(2), 0.5), std::invalid_argument);
}

TEST(Residual, UniformInletWithoutUptake)
{
  const Mesh m(8);
  const auto model = make_column_model(m, ColumnParams{}, zero_uptake(), IsothermSpec::langmuir(), step_feed(5.5));
  Vec y = Vec::Zero(m.state_size());
  for (int i = 0; i < m.n_nodes(); ++i) y[m.value_index(i)] = 5.5;
  for (int j = 0; j < m.n_collocation(); ++j) y[m.c_dofs() + j] = 12.0;
  Vec f;
  model->rhs(0.0, y, f, 0);
  for (int k = 0; k < m.n_elements(); ++k)
    for (int p = 0; p < 2; ++p) EXPECT_NEAR(f[model->c_row(k, p)], 0.0, 1e-12);
  EXPECT_NEAR(f.norm(), 0.0, 1e-12);
}

TEST(Residual, GlobalEquilibriumIsSteady)
{
  for (auto kind : {KineticKind::LDF, KineticKind::Vermeulen}) {
    KineticSpec kin;
    kin.kind = kind;
    const Mesh m(10);
    const auto iso = IsothermSpec::sips();
    const auto model = make_column_model(m, ColumnParams{}, kinetic_uptake(kin), iso, step_feed(5.5));
    const Vec y = model->initial_state(5.5);
    EXPECT_NEAR(y[m.q_index(3, 1)], isotherm_eval(iso, 5.5), 1e-12);
    Vec f;
    model->rhs(0.0, y, f, 0);
    EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-10) << to_string(kind);
  }
}

// The improved law keeps a positive rate at q = q*, so equilibrium loading is
// not a fixed point; only the solid rows are driven.
TEST(Residual, ImprovedLdfDrivesSolidAtEquilibriumLoading)
{
  KineticSpec kin;
  kin.kind = KineticKind::ImprovedLDF;
  const Mesh m(6);
  const auto iso = IsothermSpec::langmuir();
  const auto model = make_column_model(m, ColumnParams{}, kinetic_uptake(kin), iso, step_feed(5.5));
  const Vec y = model->initial_state(5.5);
  Vec f;
  model->rhs(0.0, y, f, 0);
  const double qs = isotherm_eval(iso, 5.5);
  const double g = kinetic_eval(kin, qs, qs);
  EXPECT_GT(g, 0.0);
  EXPECT_NEAR(f[model->q_row(2, 0)], model->solid_coupling() * g, 1e-10);
  EXPECT_NEAR(f[model->c_row(2, 0)], -model->liquid_coupling() * g, 1e-10);
}

TEST(Residual, OutletRowIsSlope)
{
  const Mesh m(4);
  const auto model = make_column_model(m, ColumnParams{}, zero_uptake(), IsothermSpec::langmuir(), step_feed(5.5));
  Vec y = model->initial_state(0.0);
  y[m.slope_index(4)] = 0.37;
  Vec f;
  model->rhs(0.0, y, f, 0);
  EXPECT_DOUBLE_EQ(f[model->outlet_row()], 0.37);
}

TEST(Residual, InletRowIsDanckwerts)
{
  const Mesh m(4);
  const ColumnParams cp;
  const auto model = make_column_model(m, cp, zero_uptake(), IsothermSpec::langmuir(), step_feed(5.5));
  Vec y = model->initial_state(0.0);
  y[m.value_index(0)] = 1.0;
  y[m.slope_index(0)] = 2.0;
  Vec f;
  model->rhs(0.0, y, f, 0);
  EXPECT_NEAR(f[model->inlet_row()], 2.0 - cp.peclet * (1.0 - 5.5), 1e-12);
}

TEST(Residual, AlgebraicRowsHaveZeroMass)
{
  const Mesh m(5);
  const auto model = make_column_model(m, ColumnParams{}, zero_uptake(), IsothermSpec::langmuir(), step_feed(5.5));
  const auto dae = model->dae();
  EXPECT_EQ(dae.algebraic_rows.size(), 2u);
  for (auto r : dae.algebraic_rows) EXPECT_EQ(dae.mass.row(r).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(dae.mass_pattern()[static_cast<std::size_t>(model->inlet_row())], 0);
  EXPECT_EQ(dae.mass_pattern()[static_cast<std::size_t>(model->q_row(2, 1))], 1);
}

TEST(Residual, JacobianMatchesDifferences)
{
  for (auto kind : {KineticKind::LDF, KineticKind::Vermeulen, KineticKind::ImprovedLDF}) {
    KineticSpec kin;
    kin.kind = kind;
    const Mesh m(6);
    const auto model = make_column_model(m, ColumnParams{}, kinetic_uptake(kin), IsothermSpec::sips(), step_feed(5.5));
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.5, 5.0);
    Vec y(m.state_size());
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = i < m.c_dofs() ? u(rng) : 8.0 * u(rng);
    Mat jac;
    model->jacobian(0.0, y, jac, 0);
    Vec f0, f1;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(y[j]));
      Vec yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      model->rhs(0.0, yp, f1, 0);
      model->rhs(0.0, ym, f0, 0);
      const Vec col = (f1 - f0) / (2 * h);
      EXPECT_LT((col - jac.col(j)).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, col.cwiseAbs().maxCoeff()))
          << to_string(kind) << " column " << j;
    }
  }
}

TEST(Residual, CollocationSamplesUseIsotherm)
{
  const Mesh m(3);
  const auto iso = IsothermSpec::langmuir();
  const auto model = make_column_model(m, ColumnParams{}, zero_uptake(), iso, step_feed(2.0));
  const Vec y = model->initial_state(2.0);
  const auto s = model->collocation_samples(y);
  ASSERT_EQ(s.size(), 6u);
  for (const auto& p : s) {
    EXPECT_NEAR(p.c, 2.0, 1e-12);
    EXPECT_NEAR(p.qstar, isotherm_eval(iso, 2.0), 1e-12);
    EXPECT_NEAR(p.dqstar_dc, isotherm_derivative(iso, 2.0), 1e-12);
  }
}

TEST(Residual, CouplingCoefficients)
{
  ColumnParams cp;
  cp.porosity = 0.4;
  const auto model = make_column_model(Mesh(2), cp, zero_uptake(), IsothermSpec::langmuir(), step_feed(1.0));
  EXPECT_NEAR(model->solid_coupling(), cp.length / cp.velocity, 1e-14);
  EXPECT_NEAR(model->liquid_coupling(), 0.6 / 0.4 * cp.length / cp.velocity, 1e-14);
}

TEST(Residual, InvalidParametersRejected)
{
  ColumnParams cp;
  cp.porosity = 1.2;
  EXPECT_THROW(make_column_model(Mesh(2), cp, zero_uptake(), IsothermSpec::langmuir(), step_feed(1.0)),
               std::invalid_argument);
}
