#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "sorbkit/trainer.hpp"

using namespace sorbkit;

TEST(Adam, FirstStepHandValue)
{
  TrainConfig cfg;
  Vec th = Vec::Zero(1);
  AdamState st;
  ASSERT_TRUE(adam_step(th, Vec::Ones(1), st, 1, cfg));
  EXPECT_NEAR(th[0], -0.05, 1e-8);
  EXPECT_NEAR(st.m[0], 0.1, 1e-15);
  EXPECT_NEAR(st.v[0], 0.001, 1e-15);
}

TEST(Adam, ZeroGradientKeepsThetaAndDecaysMoments)
{
  TrainConfig cfg;
  Vec th = Vec::Constant(2, 3.0);
  AdamState st{Vec::Constant(2, 0.0), Vec::Constant(2, 0.0)};
  ASSERT_TRUE(adam_step(th, Vec::Zero(2), st, 1, cfg));
  EXPECT_EQ(th, Vec::Constant(2, 3.0));
  AdamState st2{Vec::Constant(2, 0.5), Vec::Constant(2, 0.2)};
  ASSERT_TRUE(adam_step(th, Vec::Zero(2), st2, 5, cfg));
  EXPECT_NEAR(st2.m[0], 0.45, 1e-15);
  EXPECT_NEAR(st2.v[0], 0.1998, 1e-15);
}

TEST(Adam, NonFiniteGradientRejected)
{
  TrainConfig cfg;
  Vec th = Vec::Zero(1);
  AdamState st;
  EXPECT_FALSE(adam_step(th, Vec::Constant(1, NAN), st, 1, cfg));
  EXPECT_EQ(th[0], 0.0);
}

TEST(Adam, LearningRateDecay)
{
  TrainConfig cfg;
  EXPECT_NEAR(adam_lr(cfg, 1), 0.05, 1e-15);
  EXPECT_NEAR(adam_lr(cfg, 19), 0.05, 1e-15);
  EXPECT_NEAR(adam_lr(cfg, 20), 0.05 * 0.985, 1e-15);
  EXPECT_NEAR(adam_lr(cfg, 40), 0.04851, 1e-5);
}

TEST(Config, ValidationRejectsBadValues)
{
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.adam_lr = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.adam_iters = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Bfgs, RosenbrockConverges)
{
  const Objective rosen = [](const Vec& x, double& f, Vec& g) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    f = a * a + 100.0 * b * b;
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return true;
  };
  Vec x0(2);
  x0 << -1.2, 1.0;
  BfgsConfig cfg;
  cfg.max_iters = 200;
  const auto r = bfgs_minimize(rosen, x0, cfg);
  EXPECT_TRUE(r.converged) << r.message;
  EXPECT_LT(r.g.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE(r.iterations, 200);
  EXPECT_NEAR(r.x[0], 1.0, 1e-5);
  EXPECT_NEAR(r.x[1], 1.0, 1e-5);
}

TEST(Bfgs, QuadraticInFewIterations)
{
  Mat a(3, 3);
  a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  Vec b(3);
  b << 1, -2, 0.5;
  const Objective quad = [&](const Vec& x, double& f, Vec& g) {
    f = 0.5 * x.dot(a * x) - b.dot(x);
    g = a * x - b;
    return true;
  };
  int calls = 0;
  const auto r = bfgs_minimize(quad, Vec::Zero(3), BfgsConfig{}, [&](int, const Vec&, double, const Vec&, double) { ++calls; });
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.x - a.ldlt().solve(b)).norm(), 1e-5);
  EXPECT_LT(r.iterations, 20);
  EXPECT_EQ(calls, r.iterations);
}

TEST(Bfgs, FailingObjectiveStops)
{
  const Objective bad = [](const Vec& x, double& f, Vec& g) {
    f = x.squaredNorm();
    g = 2.0 * x;
    return x.norm() < 0.5;
  };
  const auto r = bfgs_minimize(bad, Vec::Constant(2, 0.3), BfgsConfig{});
  EXPECT_TRUE(std::isfinite(r.f));
  EXPECT_LE(r.f, 0.18 + 1e-12);
}

TEST(History, CsvHeader)
{
  TrainHistory h;
  h.records.push_back({1, "adam", 0.5, 0.1, 0.05, 0.2, 0, 0.5});
  const auto csv = h.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,phase,loss,grad_inf,lr,wall_s,failures,best_loss");
  EXPECT_NE(csv.find("1,adam,"), std::string::npos);
}

namespace {

struct SmallProblem
{
  Scenario sc = training_scenario(parse_case("langmuir_ldf"));
  NetParams net = net_init(NetArch::for_case(parse_case("langmuir_ldf")), 2);
  Dataset ds = make_dataset(sc, 0.05, 8);
};

}  // namespace

TEST(Train, FixedPointExitsEarly)
{
  SmallProblem p;
  const HybridOptions opt;
  const auto sim = simulate_hybrid(p.net, p.sc, opt);
  p.ds.observed = sim.outlet(p.ds.times);
  const auto r = train(p.net, p.ds, p.sc, TrainConfig{}, opt);
  EXPECT_EQ(r.best.theta, p.net.theta);
  EXPECT_LT(r.best_loss, 1e-20);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.history.records.size(), 1u);
}

TEST(Train, ShortRunDecreasesBestLoss)
{
  SmallProblem p;
  TrainConfig cfg;
  cfg.adam_iters = 8;
  cfg.qn_max_iters = 3;
  const auto r = train(p.net, p.ds, p.sc, cfg, HybridOptions{});
  ASSERT_FALSE(r.history.records.empty());
  for (std::size_t i = 1; i < r.history.records.size(); ++i)
    EXPECT_LE(r.history.records[i].best_loss, r.history.records[i - 1].best_loss);
  EXPECT_LT(r.best_loss, r.history.records.front().loss);
  EXPECT_EQ(r.history.records.front().phase, "adam");
  EXPECT_EQ(r.history.records.front().iteration, 1);
}

TEST(Train, CheckpointResumeContinuesIteration)
{
  SmallProblem p;
  const auto path = std::filesystem::temp_directory_path() / "sorbkit_train_ck.bin";
  TrainConfig cfg;
  cfg.adam_iters = 4;
  cfg.qn_max_iters = 0;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_path = path.string();
  train(p.net, p.ds, p.sc, cfg, HybridOptions{});
  ASSERT_TRUE(std::filesystem::exists(path));
  const auto ck = read_checkpoint(path.string());
  EXPECT_EQ(ck.phase, "adam");
  EXPECT_EQ(ck.iteration, 4);

  Checkpoint mid = ck;
  mid.iteration = 2;
  cfg.checkpoint_path.clear();
  const auto r = train(p.net, p.ds, p.sc, cfg, HybridOptions{}, &mid);
  ASSERT_FALSE(r.history.records.empty());
  EXPECT_EQ(r.history.records.front().iteration, 3);
  std::filesystem::remove(path);
}
