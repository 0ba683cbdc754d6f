#pragma once

// Closed-form physics of the single-component fixed bed: column parameters,
// equilibrium isotherms, the reference uptake laws and piecewise-constant
// feed schedules.

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sorbkit {

struct ColumnParams
{
  double length = 2.0;      // L, dm
  double velocity = 0.51;   // interstitial velocity v, dm/min
  double peclet = 21.0;     // Pe
  double porosity = 0.5;    // epsilon

  /// tau_s = L / v in minutes.
  double residence_time() const { return length / velocity; }

  void validate() const;
};

enum class IsothermKind { Langmuir, Sips };
enum class KineticKind { LDF, Vermeulen, ImprovedLDF };

struct IsothermSpec
{
  IsothermKind kind = IsothermKind::Langmuir;
  double capacity = 55.54;  // Q, mg/g
  double affinity = 1.8;    // k, L/mg
  double exponent = 1.0;    // alpha, Sips only

  static IsothermSpec langmuir(double capacity = 55.54, double affinity = 1.8);
  static IsothermSpec sips(double capacity = 55.54, double affinity = 1.8, double exponent = 1.5);

  void validate() const;
};

struct KineticSpec
{
  KineticKind kind = KineticKind::LDF;
  double rate_constant = 0.22;  // min^-1
  // Denominator floor for the Vermeulen law; 1e-6 Q for the default isotherm.
  double q_floor = 1e-6 * 55.54;

  void validate() const;
};

/// Value of an uptake law together with its partial derivatives.
struct UptakeRate
{
  double value = 0.0;
  double d_q = 0.0;
  double d_qstar = 0.0;
};

struct FeedPhase
{
  double start = 0.0;          // min
  double concentration = 0.0;  // mg/L
};

struct FeedSchedule
{
  std::vector<FeedPhase> phases;
  double t_obs = 110.0;     // min
  double f_sample = 0.5;    // min^-1

  void validate() const;

  /// Number of observation instants i / f_sample in [0, t_obs].
  std::size_t sample_count() const;
  std::vector<double> sample_times() const;

  /// Start times of every phase after the first, in minutes.
  std::vector<double> switch_times() const;

  double max_concentration() const;

  /// Index of the phase active at t (left-closed phases).
  std::size_t phase_index(double t) const;
};

struct Scenario
{
  std::string name;
  ColumnParams column;
  IsothermSpec isotherm;
  KineticSpec kinetics;
  FeedSchedule feed;
  double c0 = 0.0;  // initial liquid concentration, mg/L

  void validate() const;
};

/// Equilibrium solid loading q* = Q k c^a / (1 + k c^a). Throws std::domain_error for c < 0.
double isotherm_eval(const IsothermSpec& iso, double c);

/// dq*/dc, used by the discretized model's Jacobian.
double isotherm_derivative(const IsothermSpec& iso, double c);

/// Uptake rate g(q, q*) in mg/(g min). Throws std::domain_error on NaN input.
double kinetic_eval(const KineticSpec& kin, double q, double qstar);

/// kinetic_eval plus first partial derivatives.
UptakeRate kinetic_eval_grad(const KineticSpec& kin, double q, double qstar);

/// Feed concentration at time t (minutes). Throws std::domain_error outside [0, t_obs].
double feed_at(const FeedSchedule& sched, double t);

std::string_view to_string(IsothermKind kind);
std::string_view to_string(KineticKind kind);
IsothermKind parse_isotherm_kind(std::string_view name);
KineticKind parse_kinetic_kind(std::string_view name);

// Scenario files are JSON objects with keys column{L,v,Pe,eps},
// isotherm{kind,Q,k,alpha}, kinetics{kind,rate}, feed{phases,t_obs,f_sample}
// and optional name / c0.

/// Throws ScenarioParseError with line and field information.
Scenario scenario_from_json(std::string_view text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_json(const Scenario& sc, int indent = 2);

class ScenarioParseError : public std::runtime_error
{
public:
  ScenarioParseError(const std::string& what, int line, std::string field);
  int line() const { return line_; }
  const std::string& field() const { return field_; }

private:
  int line_;
  std::string field_;
};

// Reference cases: {Langmuir, Sips} x {LDF, Vermeulen, improved LDF}.

struct CaseId
{
  IsothermKind isotherm;
  KineticKind kinetics;

  std::string name() const;  // e.g. "langmuir_ldf"
};

std::vector<CaseId> reference_cases();
CaseId parse_case(std::string_view name);

/// Single 5.5 mg/L loading step over 110 min sampled at 0.5 min^-1.
Scenario training_scenario(CaseId id);

/// Loading, desorption and re-loading steps over 270 min. Switches default to
/// 110 and 190 min.
Scenario test_scenario(CaseId id, double first_switch = 110.0, double second_switch = 190.0);

}  // namespace sorbkit
