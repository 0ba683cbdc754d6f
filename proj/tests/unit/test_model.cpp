#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "sorbkit/model.hpp"

using namespace sorbkit;

TEST(Isotherm, LangmuirZeroConcentration)
{
  EXPECT_EQ(isotherm_eval(IsothermSpec::langmuir(), 0.0), 0.0);
}

TEST(Isotherm, LangmuirReferenceValue)
{
  // 55.54 * 9.9 / 10.9
  EXPECT_NEAR(isotherm_eval(IsothermSpec::langmuir(55.54, 1.8), 5.5), 55.54 * 9.9 / 10.9, 1e-12);
  EXPECT_NEAR(isotherm_eval(IsothermSpec::langmuir(55.54, 1.8), 5.5), 50.444, 1e-3);
}

TEST(Isotherm, SipsReferenceValue)
{
  const double ca = std::pow(5.5, 1.5);
  EXPECT_NEAR(ca, 12.899, 5e-4);
  EXPECT_NEAR(isotherm_eval(IsothermSpec::sips(55.54, 1.8, 1.5), 5.5), 55.54 * 1.8 * ca / (1.0 + 1.8 * ca), 1e-12);
  // The quoted 53.245 carries rounding of the power term.
  EXPECT_NEAR(isotherm_eval(IsothermSpec::sips(55.54, 1.8, 1.5), 5.5), 53.245, 2e-3);
}

TEST(Isotherm, NegativeConcentrationThrows)
{
  EXPECT_THROW(isotherm_eval(IsothermSpec::langmuir(), -1.0), std::domain_error);
}

TEST(Isotherm, DerivativeMatchesDifferences)
{
  for (const auto& iso : {IsothermSpec::langmuir(), IsothermSpec::sips()}) {
    for (double c : {0.3, 1.0, 5.5, 9.0}) {
      const double h = 1e-6;
      const double fd = (isotherm_eval(iso, c + h) - isotherm_eval(iso, c - h)) / (2 * h);
      EXPECT_NEAR(isotherm_derivative(iso, c), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Isotherm, SaturatesBelowCapacity)
{
  const auto iso = IsothermSpec::langmuir();
  EXPECT_LT(isotherm_eval(iso, 1e6), iso.capacity);
  EXPECT_GT(isotherm_eval(iso, 1e6), 0.999 * iso.capacity);
}

TEST(Kinetics, VermeulenSymmetricZero)
{
  KineticSpec k;
  k.kind = KineticKind::Vermeulen;
  EXPECT_NEAR(kinetic_eval(k, 50.0, 50.0), 0.0, 1e-14);
}

TEST(Kinetics, LdfReferenceValue)
{
  KineticSpec k;
  EXPECT_NEAR(kinetic_eval(k, 0.0, 50.444), 0.22 * 50.444, 1e-12);
  EXPECT_NEAR(kinetic_eval(k, 0.0, 50.444), 11.098, 5e-4);
}

TEST(Kinetics, ImprovedLdfReferenceValue)
{
  KineticSpec k;
  k.kind = KineticKind::ImprovedLDF;
  EXPECT_NEAR(kinetic_eval(k, 50.0, 50.0), 0.22 * 0.2789 * std::exp(-0.5) * 50.0, 5e-4);
  EXPECT_NEAR(kinetic_eval(k, 50.0, 50.0), 1.8607, 5e-4);
}

TEST(Kinetics, GradientMatchesDifferences)
{
  for (auto kind : {KineticKind::LDF, KineticKind::Vermeulen, KineticKind::ImprovedLDF}) {
    KineticSpec k;
    k.kind = kind;
    for (auto [q, qs] : {std::pair{10.0, 30.0}, {48.11, 50.13}, {49.22, 49.23}, {30.0, 12.0}}) {
      const auto g = kinetic_eval_grad(k, q, qs);
      const double h = 1e-6;
      const double dq = (kinetic_eval(k, q + h, qs) - kinetic_eval(k, q - h, qs)) / (2 * h);
      const double ds = (kinetic_eval(k, q, qs + h) - kinetic_eval(k, q, qs - h)) / (2 * h);
      EXPECT_NEAR(g.value, kinetic_eval(k, q, qs), 1e-14);
      EXPECT_NEAR(g.d_q, dq, 1e-6 * std::max(1.0, std::abs(dq)));
      EXPECT_NEAR(g.d_qstar, ds, 1e-6 * std::max(1.0, std::abs(ds)));
    }
  }
}

TEST(Feed, SinglePhase)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  EXPECT_DOUBLE_EQ(feed_at(sc.feed, 50.0), 5.5);
}

TEST(Feed, ThreePhaseSchedules)
{
  FeedSchedule a{{{0, 5.5}, {110, 3.58}, {190, 7.33}}, 270, 0.5};
  EXPECT_DOUBLE_EQ(feed_at(a, 110.0), 3.58);
  EXPECT_DOUBLE_EQ(feed_at(a, 109.999), 5.5);
  FeedSchedule b{{{0, 5.5}, {110, 0.75}, {190, 9.33}}, 270, 0.5};
  EXPECT_DOUBLE_EQ(feed_at(b, 250.0), 9.33);
  EXPECT_EQ(b.phase_index(190.0), 2u);
  EXPECT_EQ(b.switch_times(), (std::vector<double>{110, 190}));
  EXPECT_DOUBLE_EQ(b.max_concentration(), 9.33);
}

TEST(Feed, SampleCount)
{
  const auto sc = training_scenario(parse_case("langmuir_ldf"));
  EXPECT_EQ(sc.feed.sample_count(), 56u);
  const auto t = sc.feed.sample_times();
  ASSERT_EQ(t.size(), 56u);
  EXPECT_DOUBLE_EQ(t.front(), 0.0);
  EXPECT_DOUBLE_EQ(t.back(), 110.0);
}

TEST(Feed, InvalidSchedulesRejected)
{
  FeedSchedule empty{{}, 110, 0.5};
  EXPECT_THROW(empty.validate(), std::invalid_argument);
  FeedSchedule unsorted{{{0, 5.5}, {50, 1.0}, {40, 2.0}}, 110, 0.5};
  EXPECT_THROW(unsorted.validate(), std::invalid_argument);
  FeedSchedule negative{{{0, -1.0}}, 110, 0.5};
  EXPECT_THROW(negative.validate(), std::invalid_argument);
}

TEST(Cases, SixReferenceCases)
{
  const auto cases = reference_cases();
  ASSERT_EQ(cases.size(), 6u);
  for (const auto& c : cases) EXPECT_EQ(parse_case(c.name()).name(), c.name());
  EXPECT_THROW(parse_case("freundlich_ldf"), std::invalid_argument);
}

TEST(Cases, TestScheduleSwitches)
{
  const auto sc = test_scenario(parse_case("sips_vermeulen"), 100.0, 200.0);
  EXPECT_EQ(sc.feed.switch_times(), (std::vector<double>{100, 200}));
  EXPECT_EQ(sc.isotherm.kind, IsothermKind::Sips);
  EXPECT_EQ(sc.kinetics.kind, KineticKind::Vermeulen);
}

TEST(ScenarioJson, RoundTrip)
{
  const auto sc = test_scenario(parse_case("sips_ildf"));
  const Scenario back = scenario_from_json(scenario_to_json(sc));
  EXPECT_EQ(back.isotherm.kind, sc.isotherm.kind);
  EXPECT_EQ(back.kinetics.kind, sc.kinetics.kind);
  EXPECT_DOUBLE_EQ(back.column.peclet, sc.column.peclet);
  ASSERT_EQ(back.feed.phases.size(), sc.feed.phases.size());
  for (std::size_t i = 0; i < sc.feed.phases.size(); ++i)
    EXPECT_DOUBLE_EQ(back.feed.phases[i].concentration, sc.feed.phases[i].concentration);
  EXPECT_EQ(scenario_to_json(back), scenario_to_json(sc));
}

TEST(ScenarioJson, ParseErrorReportsLineAndField)
{
  std::string text = scenario_to_json(training_scenario(parse_case("langmuir_ldf")));
  const auto pos = text.find("\"Pe\"");
  ASSERT_NE(pos, std::string::npos);
  const auto colon = text.find(':', pos);
  const auto end = text.find_first_of(",\n}", colon);
  text.replace(colon + 1, end - colon - 1, " \"long\"");
  try {
    scenario_from_json(text);
    FAIL() << "expected ScenarioParseError";
  } catch (const ScenarioParseError& e) {
    EXPECT_EQ(e.line(), 5);
    EXPECT_EQ(e.field(), "column.Pe");
  }
}

TEST(ScenarioJson, MalformedSyntax)
{
  EXPECT_THROW(scenario_from_json("{\"column\": {"), ScenarioParseError);
}
