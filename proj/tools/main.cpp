#include <iostream>

#include <CLI11.hpp>

#include "pipeline.hpp"
#include "sorbkit/version.hpp"

namespace pl = sorbkit::pipeline;

int main(int argc, char** argv)
{
  CLI::App app{"Hybrid adsorption column modeling and uptake-law discovery"};
  app.set_version_flag("--version", sorbkit::kVersion);
  app.require_subcommand(1);

  pl::GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write noisy training and test datasets");
  g->add_option("--out", gen.out, "Output directory");
  g->add_option("--case", gen.cases, "Case name, comma list or 'all'");
  g->add_option("--config", gen.config, "Scenario config file")->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "Base seed");
  g->add_option("--noise", gen.noise_frac, "Noise standard deviation as a fraction of the peak feed");
  g->add_option("--jobs", gen.jobs, "Parallel cases")->check(CLI::PositiveNumber);

  pl::SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Solve the mechanistic column model");
  s->add_option("--out", sim.out, "Output directory");
  s->add_option("--case", sim.cases, "Case name, comma list or 'all'");
  s->add_option("--config", sim.config, "Scenario config file")->check(CLI::ExistingFile);
  s->add_option("--schedule", sim.schedule, "train or test");
  s->add_option("--elements", sim.n_elements, "Finite elements");
  s->add_option("--tol", sim.tol, "Relative and absolute tolerance");
  int sim_jobs = 1;
  std::uint64_t sim_seed = 0;
  s->add_option("--jobs", sim_jobs, "Accepted for uniformity")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim_seed, "Accepted for uniformity");

  pl::TrainOptions tr;
  auto* t = app.add_subcommand("train", "Fit the uptake network to breakthrough data");
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--case", tr.cases, "Case name, comma list or 'all'");
  t->add_option("--config", tr.config, "Scenario and training config file")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Training dataset CSV instead of a generated one")->check(CLI::ExistingFile);
  t->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_option("--seed", tr.seed, "Dataset and initialization seed");
  t->add_option("--adam-iters", tr.adam_iters, "ADAM iterations");
  t->add_option("--qn-iters", tr.qn_iters, "Quasi-Newton iterations");
  t->add_option("--noise", tr.noise_frac, "Noise fraction for generated data");
  t->add_flag("--gradcheck", tr.gradcheck, "Verify adjoint gradients before training");
  t->add_option("--jobs", tr.jobs, "Parallel cases")->check(CLI::PositiveNumber);

  pl::DiscoverOptions di;
  auto* d = app.add_subcommand("discover", "Identify an uptake law from a trained network");
  d->add_option("--out", di.out, "Output directory");
  d->add_option("--case", di.cases, "Case name, comma list or 'all'");
  d->add_option("--config", di.config, "Scenario config file")->check(CLI::ExistingFile);
  d->add_option("--theta", di.theta, "Trained checkpoint");
  d->add_option("--mode", di.mode, "sparse, symbolic or both");
  d->add_option("--seed", di.seed, "Symbolic regression seed");
  d->add_flag("--mean-loss", di.mean_loss, "Use the 1/(2n) lasso loss");
  d->add_option("--jobs", di.jobs, "Parallel cases")->check(CLI::PositiveNumber);

  pl::TaylorOptions ta;
  auto* y = app.add_subcommand("taylor", "Taylor coefficients of a reference uptake law");
  y->add_option("--kinetic", ta.kinetic, "ldf, vermeulen or ildf");
  y->add_option("--qstar", ta.qstar, "Expansion center q*");
  y->add_option("--q", ta.q, "Expansion center q");
  y->add_option("--order", ta.order, "1 or 2");

  pl::GradcheckOptions gc;
  auto* c = app.add_subcommand("gradcheck", "Adjoint gradient against finite differences");
  c->add_option("--case", gc.cases, "Case name, comma list or 'all'");
  c->add_option("--seed", gc.seed, "Seed for parameters and coordinates");
  c->add_option("--thetas", gc.thetas, "Random parameter vectors per case");
  c->add_option("--coords", gc.coords, "Random coordinates per parameter vector");
  c->add_option("--tol", gc.tol, "Solver tolerance");
  c->add_option("--step", gc.step, "Central difference step");
  c->add_option("--threshold", gc.threshold, "Largest accepted relative error");
  c->add_option("--jobs", gc.jobs, "Parallel checks")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? pl::kExitOk : pl::kExitValidation;
  }

  try {
    if (*g) return pl::cmd_generate(gen, std::cout);
    if (*s) return pl::cmd_simulate(sim, std::cout);
    if (*t) return pl::cmd_train(tr, std::cout);
    if (*d) return pl::cmd_discover(di, std::cout);
    if (*y) return pl::cmd_taylor(ta, std::cout);
    if (*c) return pl::cmd_gradcheck(gc, std::cout);
  } catch (const pl::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitValidation;
  } catch (const sorbkit::ScenarioParseError& e) {
    std::cerr << "error: " << e.what() << " (line " << e.line() << ", field " << e.field() << ")\n";
    return pl::kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitRuntime;
  }
  return pl::kExitRuntime;
}
