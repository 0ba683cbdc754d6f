#include <random>

#include <benchmark/benchmark.h>

#include "sorbkit/discovery.hpp"
#include "sorbkit/sensitivity.hpp"

using namespace sorbkit;

namespace {

std::shared_ptr<const ColumnModel> column(int n_elements)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  return make_column_model(Mesh(n_elements), sc.column, kinetic_uptake(sc.kinetics), sc.isotherm, sc.feed);
}

}  // namespace

static void BM_ColumnRhs(benchmark::State& state)
{
  const auto model = column(static_cast<int>(state.range(0)));
  const Vec y = model->initial_state(1.0);
  Vec f(model->size());
  for (auto _ : state) {
    model->rhs(0.5, y, f, 0);
    benchmark::DoNotOptimize(f.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ColumnRhs)->RangeMultiplier(2)->Range(8, 64)->Complexity(benchmark::oN);

static void BM_ColumnJacobian(benchmark::State& state)
{
  const auto model = column(static_cast<int>(state.range(0)));
  const Vec y = model->initial_state(1.0);
  Mat jac;
  for (auto _ : state) {
    model->jacobian(0.5, y, jac, 0);
    benchmark::DoNotOptimize(jac.data());
  }
}
BENCHMARK(BM_ColumnJacobian)->RangeMultiplier(2)->Range(8, 64);

static void BM_MechanisticSolve(benchmark::State& state)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  SimulationOptions opt;
  opt.n_elements = static_cast<int>(state.range(0));
  opt.integrator.rel_tol = opt.integrator.abs_tol = 1e-6;
  for (auto _ : state) {
    const auto sim = simulate_mechanistic(sc, opt);
    benchmark::DoNotOptimize(sim.trajectory.stats.steps);
  }
}
BENCHMARK(BM_MechanisticSolve)->Arg(21)->Arg(42)->Unit(benchmark::kMillisecond);

static void BM_NetForward(benchmark::State& state)
{
  const auto net = net_init(NetArch::for_case(parse_case("sips_vermeulen")), 1);
  double q = 10.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(net_forward(net, q, 30.0));
    q += 1e-9;
  }
}
BENCHMARK(BM_NetForward);

static void BM_AdjointGradient(benchmark::State& state)
{
  const auto id = parse_case("langmuir_ldf");
  const auto sc = training_scenario(id);
  const auto ds = make_dataset(sc, 0.05, 1);
  const auto net = net_init(NetArch::for_case(id), 2);
  const HybridOptions opt;
  for (auto _ : state) {
    const auto g = adjoint_gradient(net, ds, sc, opt);
    benchmark::DoNotOptimize(g.grad.data());
  }
}
BENCHMARK(BM_AdjointGradient)->Iterations(2)->Unit(benchmark::kMillisecond);

static void BM_LassoAdmm(benchmark::State& state)
{
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<UptakeSample> s;
  for (int i = 0; i < 168; ++i) {
    const double qs = 50.0 * u(rng), q = qs * u(rng);
    s.push_back({0.0, 0.0, q, qs, 0.22 * (qs - q)});
  }
  const BasisLibrary lib;
  const Mat theta = lib.evaluate(s);
  Vec y(theta.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = s[static_cast<std::size_t>(i)].value;
  for (auto _ : state) {
    const auto r = lasso_admm(theta, y, 0.1);
    benchmark::DoNotOptimize(r.coef.data());
  }
}
BENCHMARK(BM_LassoAdmm)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
