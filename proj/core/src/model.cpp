#include "sorbkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sorbkit {

namespace {

constexpr double kImprovedLdfCorrection = 0.2789;

void require(bool ok, const char* what)
{
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void ColumnParams::validate() const
{
  require(length > 0.0, "column length must be positive");
  require(velocity > 0.0, "interstitial velocity must be positive");
  require(peclet > 0.0, "Peclet number must be positive");
  require(porosity > 0.0 && porosity < 1.0, "porosity must lie in (0, 1)");
}

IsothermSpec IsothermSpec::langmuir(double capacity, double affinity)
{
  return IsothermSpec{IsothermKind::Langmuir, capacity, affinity, 1.0};
}

IsothermSpec IsothermSpec::sips(double capacity, double affinity, double exponent)
{
  return IsothermSpec{IsothermKind::Sips, capacity, affinity, exponent};
}

void IsothermSpec::validate() const
{
  require(capacity > 0.0, "isotherm capacity Q must be positive");
  require(affinity > 0.0, "isotherm affinity k must be positive");
  require(exponent > 0.0, "isotherm exponent must be positive");
  if (kind == IsothermKind::Langmuir) require(exponent == 1.0, "Langmuir isotherm requires exponent 1");
}

void KineticSpec::validate() const
{
  require(rate_constant > 0.0, "kinetic rate constant must be positive");
  require(q_floor > 0.0, "Vermeulen floor must be positive");
}

void FeedSchedule::validate() const
{
  require(!phases.empty(), "feed schedule needs at least one phase");
  require(phases.front().start == 0.0, "first feed phase must start at t = 0");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    require(phases[i].concentration >= 0.0, "feed concentrations must be nonnegative");
    if (i > 0) require(phases[i].start > phases[i - 1].start, "feed phase start times must increase");
  }
  require(t_obs > phases.back().start, "t_obs must exceed the last phase start");
  require(f_sample > 0.0, "sampling rate must be positive");
}

std::size_t FeedSchedule::sample_count() const
{
  // Guard against t_obs * f_sample landing just below an integer.
  return static_cast<std::size_t>(std::floor(t_obs * f_sample + 1e-9)) + 1;
}

std::vector<double> FeedSchedule::sample_times() const
{
  std::vector<double> t(sample_count());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / f_sample;
  return t;
}

std::vector<double> FeedSchedule::switch_times() const
{
  std::vector<double> out;
  for (std::size_t i = 1; i < phases.size(); ++i) out.push_back(phases[i].start);
  return out;
}

double FeedSchedule::max_concentration() const
{
  double m = 0.0;
  for (const auto& p : phases) m = std::max(m, p.concentration);
  return m;
}

std::size_t FeedSchedule::phase_index(double t) const
{
  std::size_t k = 0;
  while (k + 1 < phases.size() && t >= phases[k + 1].start) ++k;
  return k;
}

void Scenario::validate() const
{
  column.validate();
  isotherm.validate();
  kinetics.validate();
  feed.validate();
  require(c0 >= 0.0, "initial concentration must be nonnegative");
}

double isotherm_eval(const IsothermSpec& iso, double c)
{
  if (!(c >= 0.0)) throw std::domain_error("isotherm_eval: concentration must be >= 0");
  const double kc = iso.affinity * (iso.kind == IsothermKind::Langmuir ? c : std::pow(c, iso.exponent));
  return iso.capacity * kc / (1.0 + kc);
}

double isotherm_derivative(const IsothermSpec& iso, double c)
{
  if (!(c >= 0.0)) throw std::domain_error("isotherm_derivative: concentration must be >= 0");
  if (iso.kind == IsothermKind::Langmuir) {
    const double d = 1.0 + iso.affinity * c;
    return iso.capacity * iso.affinity / (d * d);
  }
  if (c == 0.0) return iso.exponent < 1.0 ? INFINITY : (iso.exponent == 1.0 ? iso.capacity * iso.affinity : 0.0);
  const double ca = std::pow(c, iso.exponent);
  const double d = 1.0 + iso.affinity * ca;
  return iso.capacity * iso.affinity * iso.exponent * ca / c / (d * d);
}

UptakeRate kinetic_eval_grad(const KineticSpec& kin, double q, double qstar)
{
  if (std::isnan(q) || std::isnan(qstar)) throw std::domain_error("kinetic_eval: NaN input");
  const double k = kin.rate_constant;
  UptakeRate r;
  switch (kin.kind) {
    case KineticKind::LDF:
      r.value = k * (qstar - q);
      r.d_q = -k;
      r.d_qstar = k;
      break;
    case KineticKind::Vermeulen: {
      if (q > kin.q_floor) {
        r.value = 0.5 * k * (qstar * qstar - q * q) / q;
        r.d_q = -0.5 * k * (qstar * qstar / (q * q) + 1.0);
        r.d_qstar = k * qstar / q;
      } else {
        const double den = 2.0 * kin.q_floor;
        r.value = k * (qstar * qstar - q * q) / den;
        r.d_q = -2.0 * k * q / den;
        r.d_qstar = 2.0 * k * qstar / den;
      }
      break;
    }
    case KineticKind::ImprovedLDF: {
      if (qstar > 0.0) {
        const double e = std::exp(-q / (2.0 * qstar));
        r.value = k * (qstar + kImprovedLdfCorrection * qstar * e - q);
        r.d_q = k * (-0.5 * kImprovedLdfCorrection * e - 1.0);
        r.d_qstar = k * (1.0 + kImprovedLdfCorrection * e * (1.0 + q / (2.0 * qstar)));
      } else {
        // q* e^{-q/2q*} -> 0 as q* -> 0+ for q > 0.
        r.value = k * (qstar - q);
        r.d_q = -k;
        r.d_qstar = k;
      }
      break;
    }
  }
  return r;
}

double kinetic_eval(const KineticSpec& kin, double q, double qstar)
{
  return kinetic_eval_grad(kin, q, qstar).value;
}

double feed_at(const FeedSchedule& sched, double t)
{
  if (!(t >= 0.0 && t <= sched.t_obs)) throw std::domain_error("feed_at: time outside [0, t_obs]");
  return sched.phases[sched.phase_index(t)].concentration;
}

std::string_view to_string(IsothermKind kind)
{
  return kind == IsothermKind::Langmuir ? "langmuir" : "sips";
}

std::string_view to_string(KineticKind kind)
{
  switch (kind) {
    case KineticKind::LDF: return "ldf";
    case KineticKind::Vermeulen: return "vermeulen";
    case KineticKind::ImprovedLDF: return "ildf";
  }
  return "?";
}

namespace {

std::string lower(std::string_view s)
{
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return out;
}

}  // namespace

IsothermKind parse_isotherm_kind(std::string_view name)
{
  const auto n = lower(name);
  if (n == "langmuir") return IsothermKind::Langmuir;
  if (n == "sips") return IsothermKind::Sips;
  throw std::invalid_argument("unknown isotherm kind: " + std::string(name));
}

KineticKind parse_kinetic_kind(std::string_view name)
{
  const auto n = lower(name);
  if (n == "ldf") return KineticKind::LDF;
  if (n == "vermeulen") return KineticKind::Vermeulen;
  if (n == "ildf" || n == "improvedldf" || n == "improved_ldf") return KineticKind::ImprovedLDF;
  throw std::invalid_argument("unknown kinetic kind: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Scenario JSON

ScenarioParseError::ScenarioParseError(const std::string& what, int line, std::string field)
    : std::runtime_error(what), line_(line), field_(std::move(field))
{
}

namespace {

using nlohmann::json;

int line_of_offset(std::string_view text, std::size_t offset)
{
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Best-effort line lookup for a key in the raw text; 0 when not found.
int line_of_key(std::string_view text, const std::string& key)
{
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string_view::npos ? 0 : line_of_offset(text, pos);
}

struct FieldReader
{
  std::string_view text;

  const json& at(const json& obj, const std::string& section, const std::string& key) const
  {
    const std::string path = section.empty() ? key : section + "." + key;
    if (!obj.is_object() || !obj.contains(key))
      throw ScenarioParseError("missing field '" + path + "'", line_of_key(text, section.empty() ? key : section), path);
    return obj.at(key);
  }

  double number(const json& obj, const std::string& section, const std::string& key) const
  {
    const auto& v = at(obj, section, key);
    const std::string path = section.empty() ? key : section + "." + key;
    if (!v.is_number()) throw ScenarioParseError("field '" + path + "' must be a number", line_of_key(text, key), path);
    return v.get<double>();
  }

  std::string string(const json& obj, const std::string& section, const std::string& key) const
  {
    const auto& v = at(obj, section, key);
    const std::string path = section + "." + key;
    if (!v.is_string()) throw ScenarioParseError("field '" + path + "' must be a string", line_of_key(text, key), path);
    return v.get<std::string>();
  }
};

}  // namespace

Scenario scenario_from_json(std::string_view text)
{
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ScenarioParseError(std::string("malformed scenario JSON: ") + e.what(), line_of_offset(text, e.byte), "");
  }
  FieldReader r{text};
  Scenario sc;
  if (doc.contains("name") && doc["name"].is_string()) sc.name = doc["name"].get<std::string>();
  if (doc.contains("c0")) sc.c0 = r.number(doc, "", "c0");

  const auto& col = r.at(doc, "", "column");
  sc.column.length = r.number(col, "column", "L");
  sc.column.velocity = r.number(col, "column", "v");
  sc.column.peclet = r.number(col, "column", "Pe");
  sc.column.porosity = r.number(col, "column", "eps");

  const auto& iso = r.at(doc, "", "isotherm");
  try {
    sc.isotherm.kind = parse_isotherm_kind(r.string(iso, "isotherm", "kind"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioParseError(e.what(), line_of_key(text, "kind"), "isotherm.kind");
  }
  sc.isotherm.capacity = r.number(iso, "isotherm", "Q");
  sc.isotherm.affinity = r.number(iso, "isotherm", "k");
  sc.isotherm.exponent = iso.contains("alpha") ? r.number(iso, "isotherm", "alpha") : 1.0;

  const auto& kin = r.at(doc, "", "kinetics");
  try {
    sc.kinetics.kind = parse_kinetic_kind(r.string(kin, "kinetics", "kind"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioParseError(e.what(), line_of_key(text, "kinetics"), "kinetics.kind");
  }
  sc.kinetics.rate_constant = r.number(kin, "kinetics", "rate");
  sc.kinetics.q_floor = 1e-6 * sc.isotherm.capacity;

  const auto& feed = r.at(doc, "", "feed");
  const auto& phases = r.at(feed, "feed", "phases");
  if (!phases.is_array())
    throw ScenarioParseError("field 'feed.phases' must be an array", line_of_key(text, "phases"), "feed.phases");
  for (const auto& p : phases) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ScenarioParseError("feed phases must be [t, c] pairs", line_of_key(text, "phases"), "feed.phases");
    sc.feed.phases.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  sc.feed.t_obs = r.number(feed, "feed", "t_obs");
  sc.feed.f_sample = r.number(feed, "feed", "f_sample");

  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioParseError(std::string("invalid scenario: ") + e.what(), 0, "");
  }
  return sc;
}

Scenario load_scenario(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

std::string scenario_to_json(const Scenario& sc, int indent)
{
  json doc;
  doc["name"] = sc.name;
  doc["c0"] = sc.c0;
  doc["column"] = {{"L", sc.column.length}, {"v", sc.column.velocity}, {"Pe", sc.column.peclet}, {"eps", sc.column.porosity}};
  doc["isotherm"] = {{"kind", to_string(sc.isotherm.kind)},
                     {"Q", sc.isotherm.capacity},
                     {"k", sc.isotherm.affinity},
                     {"alpha", sc.isotherm.exponent}};
  doc["kinetics"] = {{"kind", to_string(sc.kinetics.kind)}, {"rate", sc.kinetics.rate_constant}};
  json phases = json::array();
  for (const auto& p : sc.feed.phases) phases.push_back({p.start, p.concentration});
  doc["feed"] = {{"phases", phases}, {"t_obs", sc.feed.t_obs}, {"f_sample", sc.feed.f_sample}};
  return doc.dump(indent);
}

// ---------------------------------------------------------------------------
// Reference cases

std::string CaseId::name() const
{
  return std::string(to_string(isotherm)) + "_" + std::string(to_string(kinetics));
}

std::vector<CaseId> reference_cases()
{
  std::vector<CaseId> out;
  for (auto iso : {IsothermKind::Langmuir, IsothermKind::Sips})
    for (auto kin : {KineticKind::LDF, KineticKind::ImprovedLDF, KineticKind::Vermeulen}) out.push_back({iso, kin});
  return out;
}

CaseId parse_case(std::string_view name)
{
  for (const auto& c : reference_cases())
    if (c.name() == lower(name)) return c;
  throw std::invalid_argument("unknown case: " + std::string(name));
}

namespace {

Scenario base_scenario(CaseId id)
{
  Scenario sc;
  sc.isotherm = id.isotherm == IsothermKind::Langmuir ? IsothermSpec::langmuir() : IsothermSpec::sips();
  sc.kinetics.kind = id.kinetics;
  sc.kinetics.q_floor = 1e-6 * sc.isotherm.capacity;
  return sc;
}

}  // namespace

Scenario training_scenario(CaseId id)
{
  Scenario sc = base_scenario(id);
  sc.name = id.name() + "_train";
  sc.feed.phases = {{0.0, 5.5}};
  sc.feed.t_obs = 110.0;
  sc.feed.f_sample = 0.5;
  return sc;
}

Scenario test_scenario(CaseId id, double first_switch, double second_switch)
{
  Scenario sc = base_scenario(id);
  sc.name = id.name() + "_test";
  if (id.isotherm == IsothermKind::Langmuir)
    sc.feed.phases = {{0.0, 5.5}, {first_switch, 3.58}, {second_switch, 7.33}};
  else
    sc.feed.phases = {{0.0, 5.5}, {first_switch, 0.75}, {second_switch, 9.33}};
  sc.feed.t_obs = 270.0;
  sc.feed.f_sample = 0.5;
  return sc;
}

}  // namespace sorbkit
