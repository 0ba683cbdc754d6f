#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "sorbkit/network.hpp"

using namespace sorbkit;

namespace {

NetArch single(int width)
{
  NetArch a;
  a.hidden = {width};
  return a;
}

}  // namespace

TEST(Arch, ParameterCount)
{
  EXPECT_EQ(single(17).parameter_count(), 69u);
  NetArch two;
  two.hidden = {10, 8};
  EXPECT_EQ(two.parameter_count(), 2u * 10 + 10 + 10 * 8 + 8 + 8 + 1);
}

TEST(Arch, CaseWidths)
{
  EXPECT_EQ(NetArch::for_case(parse_case("langmuir_ldf")).hidden, (std::vector<int>{17}));
  EXPECT_EQ(NetArch::for_case(parse_case("langmuir_ildf")).hidden, (std::vector<int>{17}));
  EXPECT_EQ(NetArch::for_case(parse_case("sips_ldf")).hidden, (std::vector<int>{20}));
  EXPECT_EQ(NetArch::for_case(parse_case("sips_vermeulen")).hidden, (std::vector<int>{10, 8}));
}

TEST(Arch, DescriptorRoundTrip)
{
  NetArch a;
  a.hidden = {10, 8};
  EXPECT_EQ(a.descriptor(), "2-10-8-1");
  EXPECT_EQ(NetArch::parse("2-10-8-1", a.input_scale), a);
  EXPECT_THROW(NetArch::parse("3-10-1", 1.0), std::invalid_argument);
}

TEST(Arch, InvalidRejected)
{
  NetArch a;
  a.hidden = {};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a.hidden = {0};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a.hidden = {4};
  a.input_scale = 0.0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

TEST(Init, DeterministicPerSeed)
{
  const auto a = net_init(single(17), 3);
  const auto b = net_init(single(17), 3);
  const auto c = net_init(single(17), 4);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_NE(a.theta, c.theta);
}

TEST(Init, SmallInitialOutput)
{
  const auto net = net_init(NetArch::for_case(parse_case("langmuir_vermeulen")), 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 55.54);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(std::abs(net_forward(net, u(rng), u(rng))), 1.0);
}

TEST(Init, ZeroBiases)
{
  const auto net = net_init(single(17), 9);
  for (const auto& L : net.layers())
    for (int o = 0; o < L.fan_out; ++o) EXPECT_EQ(net.theta[L.bias_offset + o], 0.0);
}

TEST(Forward, ZeroNetwork)
{
  NetParams net{single(17), Vec::Zero(69)};
  EXPECT_EQ(net_forward(net, 12.0, 40.0), 0.0);
  const auto g = net_forward_grad(net, 12.0, 40.0);
  EXPECT_EQ(g.value, 0.0);
  EXPECT_EQ(g.d_q, 0.0);
  EXPECT_EQ(g.d_qstar, 0.0);
}

TEST(Forward, HandComputedSingleUnit)
{
  NetArch a = single(1);
  a.input_scale = 0.5;
  NetParams net{a, Vec::Zero(static_cast<Eigen::Index>(a.parameter_count()))};
  // Layout: W1 (1x2) row-major, b1, W2 (1x1), b2.
  net.theta << 0.3, -0.7, 0.1, 1.5, -0.2;
  const double q = 2.0, qs = 3.0;
  const double z = 0.3 * 0.5 * q - 0.7 * 0.5 * qs + 0.1;
  EXPECT_NEAR(net_forward(net, q, qs), 1.5 * std::tanh(z) - 0.2, 1e-12);
  const double s = 1.0 - std::tanh(z) * std::tanh(z);
  const auto g = net_forward_grad(net, q, qs);
  EXPECT_NEAR(g.d_q, 1.5 * s * 0.3 * 0.5, 1e-12);
  EXPECT_NEAR(g.d_qstar, 1.5 * s * -0.7 * 0.5, 1e-12);
}

TEST(Forward, ParameterGradientMatchesDifferences)
{
  NetArch a;
  a.hidden = {10, 8};
  auto net = net_init(a, 21);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < net.theta.size(); ++i) net.theta[i] += n(rng);
  std::uniform_real_distribution<double> u(0.0, 55.0);
  for (int k = 0; k < 50; ++k) {
    const double q = u(rng), qs = u(rng);
    Vec g = Vec::Zero(net.theta.size());
    net_accumulate_param_grad(net, q, qs, 1.0, g);
    Vec fd(net.theta.size());
    for (Eigen::Index i = 0; i < net.theta.size(); ++i) {
      NetParams p = net, m = net;
      p.theta[i] += 1e-6;
      m.theta[i] -= 1e-6;
      fd[i] = (net_forward(p, q, qs) - net_forward(m, q, qs)) / 2e-6;
    }
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-6);
  }
}

TEST(Forward, InputGradientMatchesDifferences)
{
  const auto net = net_init(single(20), 4);
  for (auto [q, qs] : {std::pair{1.0, 30.0}, {20.0, 22.0}, {50.0, 10.0}}) {
    const auto g = net_forward_grad(net, q, qs);
    const double h = 1e-5;
    EXPECT_NEAR(g.value, net_forward(net, q, qs), 1e-15);
    EXPECT_NEAR(g.d_q, (net_forward(net, q + h, qs) - net_forward(net, q - h, qs)) / (2 * h), 1e-9);
    EXPECT_NEAR(g.d_qstar, (net_forward(net, q, qs + h) - net_forward(net, q, qs - h)) / (2 * h), 1e-9);
  }
}

TEST(Forward, AccumulateScalesWithWeight)
{
  const auto net = net_init(single(17), 4);
  Vec g1 = Vec::Zero(69), g2 = Vec::Zero(69);
  net_accumulate_param_grad(net, 3.0, 7.0, 1.0, g1);
  net_accumulate_param_grad(net, 3.0, 7.0, -2.5, g2);
  EXPECT_LT((g2 + 2.5 * g1).norm(), 1e-14);
  Vec bad = Vec::Zero(3);
  EXPECT_THROW(net_accumulate_param_grad(net, 1.0, 1.0, 1.0, bad), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact)
{
  NetArch a;
  a.hidden = {10, 8};
  const Checkpoint ck{net_init(a, 77), 125, "bfgs"};
  const auto path = std::filesystem::temp_directory_path() / "sorbkit_ck_test.bin";
  write_checkpoint(path.string(), ck);
  const auto back = read_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.net.arch, ck.net.arch);
  EXPECT_EQ(back.net.theta, ck.net.theta);
  EXPECT_EQ(back.iteration, 125);
  EXPECT_EQ(back.phase, "bfgs");
}

TEST(Checkpoint, MissingAndCorruptFiles)
{
  EXPECT_ANY_THROW(read_checkpoint("/nonexistent/theta.bin"));
  const auto path = std::filesystem::temp_directory_path() / "sorbkit_ck_bad.bin";
  std::ofstream(path) << "sorbkit-theta v1 arch=2-17-1 input_scale=1 n=69 iter=0 phase=adam\nshort";
  EXPECT_ANY_THROW(read_checkpoint(path.string()));
  std::filesystem::remove(path);
}
