#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "sorbkit/version.hpp"

namespace sorbkit::pipeline {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Digests and manifests

std::string sha256_hex(const std::string& bytes)
{
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void RunManifest::add_input(const fs::path& p) { inputs.emplace_back(p.string(), sha256_file(p)); }
void RunManifest::add_output(const fs::path& p) { outputs.emplace_back(p.string(), sha256_file(p)); }

std::string RunManifest::to_json() const
{
  ojson j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config"] = config;
  j["seeds"] = seeds;
  auto files = [](const auto& v) {
    ojson arr = ojson::array();
    for (const auto& [p, d] : v) arr.push_back({{"path", p}, {"sha256", d}});
    return arr;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  j["wall_time_s"] = wall_time;
  return j.dump(2) + "\n";
}

void RunManifest::write(const fs::path& p) const { write_text(p, to_json()); }

void write_text(const fs::path& path, const std::string& text)
{
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string esc(const std::string& s)
{
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string fmt(double v, int prec = 4)
{
  char b[40];
  std::snprintf(b, sizeof b, "%.*g", prec, v);
  return b;
}

}  // namespace

std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series)
{
  const double w = 720, h = 440, ml = 70, mr = 170, mt = 40, mb = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\"" << h - mt - mb
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18 << "\" text-anchor=\"middle\">" << fmt(xv, 3) << "</text>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv, 3) << "</text>\n";
    o << "<line x1=\"" << ml << "\" x2=\"" << w - mr << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
      << "\" stroke=\"#eee\"/>\n";
  }
  o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">" << esc(xlabel) << "</text>\n";
  o << "<text transform=\"translate(18," << (mt + h - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel)
    << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    if (s.markers) {
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
        if (std::isfinite(s.y[i]))
          o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\"" << c << "\"/>\n";
    } else {
      o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.6\" points=\"";
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
        if (std::isfinite(s.y[i])) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
      o << "\"/>\n";
    }
    const double ly = mt + 14 + 18 * static_cast<double>(k);
    o << "<rect x=\"" << w - mr + 12 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"8\" fill=\"" << c << "\"/>\n";
    o << "<text x=\"" << w - mr + 30 << "\" y=\"" << ly << "\">" << esc(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg(const fs::path& path, const std::string& svg, std::ostream& log)
{
  try {
    write_text(path, svg);
  } catch (const std::exception& e) {
    log << "warning: plot not written: " << e.what() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Configuration

ConfigFile load_config(const fs::path& path)
{
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  ConfigFile cfg;
  try {
    cfg.raw = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!cfg.raw.is_object()) throw ValidationError(path.string() + ": top level must be an object");
  try {
    if (cfg.raw.contains("column")) cfg.scenario = scenario_from_json(text);
  } catch (const ScenarioParseError& e) {
    throw ValidationError(path.string() + ":" + std::to_string(e.line()) + ": " + e.what() +
                          (e.field().empty() ? "" : " [" + e.field() + "]"));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (cfg.raw.contains("train")) cfg.train = cfg.raw["train"];
  if (cfg.raw.contains("dataset")) cfg.dataset = cfg.raw["dataset"];
  return cfg;
}

std::vector<CaseSetup> resolve_cases(const std::string& case_arg, const ConfigFile& cfg, double switch1, double switch2)
{
  std::vector<CaseId> ids;
  std::string arg = case_arg;
  if (cfg.raw.contains("case") && cfg.raw["case"].is_string() && (arg.empty() || arg == "default"))
    arg = cfg.raw["case"].get<std::string>();
  if (arg == "all") {
    ids = reference_cases();
  } else {
    std::stringstream ss(arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        ids.push_back(parse_case(tok));
      } catch (const std::exception& e) {
        throw ValidationError(std::string("unknown case '") + tok + "'");
      }
    }
  }
  if (ids.empty()) throw ValidationError("no case selected");
  std::vector<CaseSetup> out;
  for (const auto& id : ids) {
    CaseSetup cs{id, training_scenario(id), test_scenario(id, switch1, switch2)};
    if (cfg.scenario) {
      // A config scenario replaces the built-in training schedule; the test
      // schedule keeps its steps but inherits column and isotherm settings.
      cs.train = *cfg.scenario;
      cs.test.column = cfg.scenario->column;
      cs.test.isotherm = cfg.scenario->isotherm;
      cs.test.kinetics = cfg.scenario->kinetics;
      cs.test.c0 = cfg.scenario->c0;
      if (cs.train.name.empty()) cs.train.name = id.name() + "_train";
    }
    out.push_back(cs);
  }
  return out;
}

std::uint64_t dataset_seed(std::uint64_t base, const CaseId& id, int split)
{
  const auto cases = reference_cases();
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases[i].name() == id.name()) idx = i;
  return base * 1000 + idx * 10 + static_cast<std::uint64_t>(split);
}

void apply_train_overrides(const nlohmann::json& j, TrainConfig& cfg)
{
  auto set = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      if (!j[key].is_number()) throw ValidationError(std::string("train.") + key + " must be a number");
      field = j[key].get<std::decay_t<decltype(field)>>();
    }
  };
  set("adam_lr", cfg.adam_lr);
  set("decay_every", cfg.decay_every);
  set("decay_factor", cfg.decay_factor);
  set("adam_iters", cfg.adam_iters);
  set("beta1", cfg.beta1);
  set("beta2", cfg.beta2);
  set("adam_eps", cfg.adam_eps);
  set("qn_max_iters", cfg.qn_max_iters);
  set("grad_tol", cfg.grad_tol);
  set("checkpoint_every", cfg.checkpoint_every);
  set("max_failure_frac", cfg.max_failure_frac);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn)
{
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ConfigFile maybe_config(const std::optional<fs::path>& p) { return p ? load_config(*p) : ConfigFile{}; }

std::string curve_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& cols)
{
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += "\n";
  const std::size_t n = cols.empty() ? 0 : cols.front().size();
  char buf[40];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.10g", cols[c][i]);
      out += (c ? "," : "") + std::string(buf);
    }
    out += "\n";
  }
  return out;
}

std::vector<double> dense_times(double t_end, std::size_t n = 541)
{
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = t_end * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

ojson scenario_json(const Scenario& sc) { return ojson::parse(scenario_to_json(sc)); }

}  // namespace

// ---------------------------------------------------------------------------

int cmd_generate(const GenerateOptions& opt, std::ostream& log)
{
  const auto t0 = std::chrono::steady_clock::now();
  if (!(opt.noise_frac >= 0.0)) throw ValidationError("--noise must be nonnegative");
  const ConfigFile cfg = maybe_config(opt.config);
  const double noise = cfg.dataset.contains("noise_frac") ? cfg.dataset["noise_frac"].get<double>() : opt.noise_frac;
  const auto cases = resolve_cases(opt.cases, cfg);
  fs::create_directories(opt.out);

  struct Job
  {
    const CaseSetup* cs;
    int split;
  };
  std::vector<Job> jobs;
  for (const auto& cs : cases)
    for (int split = 0; split < 2; ++split) jobs.push_back({&cs, split});

  std::vector<fs::path> written(jobs.size() * 2);
  std::mutex log_mu;
  parallel_for(jobs.size(), opt.jobs, [&](std::size_t i) {
    const Job& j = jobs[i];
    const Scenario& sc = j.split == 0 ? j.cs->train : j.cs->test;
    const auto seed = dataset_seed(opt.seed, j.cs->id, j.split);
    const Dataset ds = make_dataset(sc, noise, seed);
    const std::string stem = j.cs->id.name() + (j.split == 0 ? "_train" : "_test");
    const fs::path csv = opt.out / (stem + ".csv");
    const fs::path side = opt.out / (stem + ".json");
    write_dataset_csv(csv.string(), ds);
    write_text(side, dataset_manifest_json(ds));
    written[2 * i] = csv;
    written[2 * i + 1] = side;
    std::lock_guard<std::mutex> lock(log_mu);
    log << "wrote " << csv.string() << " (" << ds.size() << " samples, sigma " << ds.sigma << ")\n";
  });

  RunManifest m;
  m.command = "generate";
  m.config = {{"cases", opt.cases}, {"noise_frac", noise}};
  m.seeds = {{"base", opt.seed}};
  if (opt.config) m.add_input(*opt.config);
  for (const auto& p : written) m.add_output(p);
  m.wall_time = seconds_since(t0);
  m.write(opt.out / "generate_manifest.json");
  return kExitOk;
}

int cmd_simulate(const SimulateOptions& opt, std::ostream& log)
{
  const auto t0 = std::chrono::steady_clock::now();
  if (opt.schedule != "train" && opt.schedule != "test") throw ValidationError("--schedule must be train or test");
  if (opt.n_elements < 1) throw ValidationError("--elements must be positive");
  if (!(opt.tol > 0.0 && opt.tol < 1.0)) throw ValidationError("--tol must lie in (0, 1)");
  const ConfigFile cfg = maybe_config(opt.config);
  const auto cases = resolve_cases(opt.cases, cfg);
  fs::create_directories(opt.out);
  RunManifest m;
  m.command = "simulate";
  m.config = {{"cases", opt.cases}, {"schedule", opt.schedule}, {"elements", opt.n_elements}, {"tol", opt.tol}};
  if (opt.config) m.add_input(*opt.config);
  for (const auto& cs : cases) {
    const Scenario& sc = opt.schedule == "train" ? cs.train : cs.test;
    SimulationOptions so;
    so.n_elements = opt.n_elements;
    so.integrator.rel_tol = so.integrator.abs_tol = opt.tol;
    const Simulation sim = simulate_mechanistic(sc, so);
    if (!sim.success()) throw std::runtime_error("simulation failed: " + sim.trajectory.message);
    const auto t = dense_times(sc.feed.t_obs);
    const auto c = sim.outlet(t);
    std::vector<double> feed;
    for (double ti : t) feed.push_back(feed_at(sc.feed, ti));
    const std::string stem = cs.id.name() + "_" + opt.schedule;
    const fs::path csv = opt.out / (stem + "_outlet.csv");
    write_text(csv, curve_csv({"t_min", "c_out_mgL", "c_feed_mgL"}, {t, c, feed}));
    write_svg(opt.out / (stem + "_outlet.svg"),
              svg_chart(stem + " breakthrough", "t (min)", "c (mg/L)", {{"outlet", t, c}, {"feed", t, feed}}), log);
    m.add_output(csv);
    log << "wrote " << csv.string() << " (" << sim.trajectory.stats.steps << " steps)\n";
  }
  m.wall_time = seconds_since(t0);
  m.write(opt.out / "simulate_manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt, std::ostream& log)
{
  if (opt.coords < 1 || opt.thetas < 1) throw ValidationError("gradcheck: counts must be positive");
  const auto cases = resolve_cases(opt.cases, ConfigFile{});
  HybridOptions ho;
  ho.integrator.rel_tol = ho.integrator.abs_tol = opt.tol;
  std::vector<std::pair<std::size_t, int>> work;
  for (std::size_t c = 0; c < cases.size(); ++c)
    for (int k = 0; k < opt.thetas; ++k) work.emplace_back(c, k);
  std::vector<GradcheckResult> out(work.size());
  std::vector<Dataset> data(cases.size());
  parallel_for(cases.size(), opt.jobs, [&](std::size_t c) {
    data[c] = make_dataset(cases[c].train, 0.05, dataset_seed(opt.seed, cases[c].id, 0));
  });
  std::mutex log_mu;
  parallel_for(work.size(), opt.jobs, [&](std::size_t w) {
    const auto [c, k] = work[w];
    const CaseSetup& cs = cases[c];
    const auto arch = NetArch::for_case(cs.id);
    const NetParams net = net_init(arch, opt.seed * 7919 + static_cast<std::uint64_t>(c) * 31 + static_cast<std::uint64_t>(k));
    std::mt19937_64 rng(opt.seed * 104729 + w);
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(net.theta.size()));
    for (Eigen::Index i = 0; i < net.theta.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min<std::size_t>(coords.size(), static_cast<std::size_t>(opt.coords)));
    const GradientReport adj = adjoint_gradient(net, data[c], cs.train, ho);
    if (!adj.success) throw std::runtime_error("gradcheck: adjoint failed for " + cs.id.name() + ": " + adj.message);
    const Vec fd = fd_gradient(net, data[c], cs.train, ho, coords, opt.step);
    double num = 0.0, den = 0.0;
    for (auto i : coords) {
      num += (adj.grad[i] - fd[i]) * (adj.grad[i] - fd[i]);
      den += fd[i] * fd[i];
    }
    out[w] = {cs.id.name(), k, den > 0.0 ? std::sqrt(num / den) : std::sqrt(num)};
    std::lock_guard<std::mutex> lock(log_mu);
    log << cs.id.name() << " theta " << k << ": relative error " << fmt(out[w].rel_error, 3) << "\n";
  });
  return out;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log)
{
  const auto res = run_gradcheck(opt, log);
  double worst = 0.0;
  for (const auto& r : res) worst = std::max(worst, r.rel_error);
  log << "max relative error " << fmt(worst, 3) << " (threshold " << fmt(opt.threshold, 3) << ")\n";
  return worst <= opt.threshold ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------

namespace {

struct TrainArtifacts
{
  TrainSummary summary;
  std::vector<fs::path> outputs;
};

TrainArtifacts train_case(const CaseSetup& cs, const TrainOptions& opt, const ConfigFile& cfg, std::ostream& log,
                          std::mutex& log_mu)
{
  TrainArtifacts art;
  const fs::path dir = opt.out / cs.id.name();
  fs::create_directories(dir);
  const double noise = cfg.dataset.contains("noise_frac") ? cfg.dataset["noise_frac"].get<double>() : opt.noise_frac;

  Dataset train_ds;
  if (opt.data) {
    train_ds = read_dataset_csv(opt.data->string(), cs.train);
    train_ds.sigma = noise * cs.train.feed.max_concentration();
  } else {
    train_ds = make_dataset(cs.train, noise, dataset_seed(opt.seed, cs.id, 0));
  }
  const Dataset test_ds = make_dataset(cs.test, noise, dataset_seed(opt.seed, cs.id, 1));

  TrainConfig tc;
  tc.seed = opt.seed;
  apply_train_overrides(cfg.train, tc);
  if (opt.adam_iters) tc.adam_iters = *opt.adam_iters;
  if (opt.qn_iters) tc.qn_max_iters = *opt.qn_iters;
  tc.checkpoint_path = (dir / "checkpoint.bin").string();
  tc.validate();

  std::optional<Checkpoint> resume;
  if (opt.resume) resume = read_checkpoint(opt.resume->string());
  const NetParams theta0 = net_init(NetArch::for_case(cs.id), opt.seed);
  if (resume && !(resume->net.arch == theta0.arch))
    throw ValidationError("checkpoint architecture " + resume->net.arch.descriptor() + " does not match case " +
                          cs.id.name());

  const HybridOptions ho;
  const TrainResult tr = train(theta0, train_ds, cs.train, tc, ho, resume ? &*resume : nullptr);
  art.summary.case_name = cs.id.name();
  art.summary.sigma = train_ds.sigma;
  art.summary.best_loss = tr.best_loss;
  art.summary.aborted = tr.aborted;
  art.summary.message = tr.message;

  const fs::path theta_path = dir / "theta.bin";
  write_checkpoint(theta_path.string(), Checkpoint{tr.best, static_cast<int>(tr.history.records.size()), "final"});
  const fs::path hist = dir / "history.csv";
  write_text(hist, tr.history.csv());
  art.outputs = {theta_path, hist};
  if (fs::exists(tc.checkpoint_path)) art.outputs.emplace_back(tc.checkpoint_path);

  // Predictions on both schedules with the best parameters.
  const Simulation fit = simulate_hybrid(tr.best, cs.train, ho);
  const Simulation pred = simulate_hybrid(tr.best, cs.test, ho);
  if (!fit.success() || !pred.success()) throw std::runtime_error("prediction solve failed for " + cs.id.name());
  const auto train_pred = fit.outlet(train_ds.times);
  const auto test_pred = pred.outlet(test_ds.times);
  art.summary.train_rmse = rmse(train_pred, train_ds.observed);
  art.summary.test_rmse = rmse(test_pred, test_ds.observed);

  const fs::path trc = dir / "train_prediction.csv";
  const fs::path tec = dir / "test_prediction.csv";
  write_text(trc, curve_csv({"t_min", "c_obs_mgL", "c_clean_mgL", "c_model_mgL"},
                            {train_ds.times, train_ds.observed, train_ds.clean, train_pred}));
  write_text(tec, curve_csv({"t_min", "c_obs_mgL", "c_clean_mgL", "c_model_mgL"},
                            {test_ds.times, test_ds.observed, test_ds.clean, test_pred}));
  art.outputs.push_back(trc);
  art.outputs.push_back(tec);
  const auto td = dense_times(cs.train.feed.t_obs, 221);
  const auto ted = dense_times(cs.test.feed.t_obs, 541);
  write_svg(dir / "train_overlay.svg",
            svg_chart(cs.id.name() + " training", "t (min)", "c (mg/L)",
                      {{"observed", train_ds.times, train_ds.observed, true}, {"hybrid", td, fit.outlet(td)}}),
            log);
  write_svg(dir / "test_overlay.svg",
            svg_chart(cs.id.name() + " test", "t (min)", "c (mg/L)",
                      {{"observed", test_ds.times, test_ds.observed, true}, {"hybrid", ted, pred.outlet(ted)}}),
            log);

  RunManifest m;
  m.command = "train";
  ojson tcj = {{"adam_lr", tc.adam_lr},         {"decay_every", tc.decay_every}, {"decay_factor", tc.decay_factor},
               {"adam_iters", tc.adam_iters},   {"qn_max_iters", tc.qn_max_iters}, {"grad_tol", tc.grad_tol},
               {"arch", tr.best.arch.descriptor()}, {"noise_frac", noise}};
  m.config = {{"case", cs.id.name()}, {"train", tcj}, {"scenario", scenario_json(cs.train)}};
  m.seeds = {{"init", opt.seed}, {"train_data", train_ds.seed}, {"test_data", test_ds.seed}};
  if (opt.config) m.add_input(*opt.config);
  if (opt.data) m.add_input(*opt.data);
  if (opt.resume) m.add_input(*opt.resume);
  for (const auto& p : art.outputs) m.add_output(p);
  m.write(dir / "train_manifest.json");

  std::lock_guard<std::mutex> lock(log_mu);
  log << cs.id.name() << ": best loss " << fmt(tr.best_loss) << ", train RMSE " << fmt(art.summary.train_rmse)
      << ", test RMSE " << fmt(art.summary.test_rmse) << " (sigma " << fmt(train_ds.sigma) << "), " << tr.message
      << "\n";
  return art;
}

}  // namespace

int cmd_train(const TrainOptions& opt, std::ostream& log, std::vector<TrainSummary>* summaries)
{
  const ConfigFile cfg = maybe_config(opt.config);
  const auto cases = resolve_cases(opt.cases, cfg);
  if (opt.resume && cases.size() != 1) throw ValidationError("--resume needs exactly one case");
  if (opt.data && cases.size() != 1) throw ValidationError("--data needs exactly one case");
  if (opt.adam_iters && *opt.adam_iters < 0) throw ValidationError("--adam-iters must be nonnegative");
  if (opt.qn_iters && *opt.qn_iters < 0) throw ValidationError("--qn-iters must be nonnegative");

  if (opt.gradcheck) {
    GradcheckOptions g;
    g.cases = opt.cases;
    g.seed = opt.seed;
    g.thetas = 1;
    g.jobs = opt.jobs;
    const int rc = cmd_gradcheck(g, log);
    if (rc != kExitOk) return rc;
  }

  std::vector<TrainSummary> out(cases.size());
  std::mutex log_mu;
  bool aborted = false;
  parallel_for(cases.size(), opt.jobs, [&](std::size_t i) {
    const auto art = train_case(cases[i], opt, cfg, log, log_mu);
    out[i] = art.summary;
    if (art.summary.aborted) aborted = true;
  });
  if (summaries) *summaries = out;
  return aborted ? kExitRuntime : kExitOk;
}

// ---------------------------------------------------------------------------

double closed_loop_rmse(const UptakeFn& law, const NetParams& net, const Scenario& sc, bool* ok)
{
  const HybridOptions ho;
  const Simulation ref = simulate_hybrid(net, sc, ho);
  const Simulation alt = simulate(sc, law, ho.simulation());
  const bool good = ref.success() && alt.success();
  if (ok) *ok = good;
  if (!good) return std::numeric_limits<double>::infinity();
  const auto t = sc.feed.sample_times();
  return rmse(ref.outlet(t), alt.outlet(t));
}

namespace {

struct DiscoveryArtifacts
{
  DiscoverySummary summary;
  std::vector<fs::path> outputs;
};

DiscoveryArtifacts discover_case(const CaseSetup& cs, const DiscoverOptions& opt, std::ostream& log, std::mutex& log_mu)
{
  DiscoveryArtifacts art;
  art.summary.case_name = cs.id.name();
  const fs::path dir = opt.out / cs.id.name();
  fs::create_directories(dir);
  const fs::path theta_path = opt.theta ? *opt.theta : dir / "theta.bin";
  if (!fs::exists(theta_path)) throw std::runtime_error("missing checkpoint " + theta_path.string());
  const NetParams net = read_checkpoint(theta_path.string()).net;

  const HybridOptions ho;
  const Simulation sim = simulate_hybrid(net, cs.train, ho);
  if (!sim.success()) throw std::runtime_error("hybrid solve failed: " + sim.trajectory.message);
  const auto samples = sample_uptake(net, sim, {1.0 / 3.0, 2.0 / 3.0, 1.0}, cs.train.feed.sample_times());
  const fs::path scsv = dir / "uptake_samples.csv";
  write_text(scsv, samples_csv(samples));
  art.outputs.push_back(scsv);

  std::ostringstream rep;
  rep << "case: " << cs.id.name() << "\n";
  rep << "network: " << net.arch.descriptor() << "\n";
  rep << "samples: " << samples.size() << " at x* = {1/3, 2/3, 1} (nearest collocation points)\n\n";

  const bool do_sparse = opt.mode == "sparse" || opt.mode == "both";
  const bool do_symbolic = opt.mode == "symbolic" || opt.mode == "both";
  std::vector<Series> uptake_series;
  std::vector<double> idx(samples.size()), net_v, true_v;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    idx[i] = static_cast<double>(i);
    net_v.push_back(samples[i].value);
    true_v.push_back(kinetic_eval(cs.train.kinetics, std::max(samples[i].q, 0.0), samples[i].qstar));
  }
  uptake_series.push_back({"network", idx, net_v, true});
  uptake_series.push_back({"true law", idx, true_v});

  if (do_sparse) {
    GridOptions go;
    go.lasso.mean_loss = opt.mean_loss;
    const GridResult gr = phi_grid_search(samples, BasisLibrary(6), go);
    const SparseModel& best = gr.best_model();
    art.summary.sparse = best;
    rep << "[sparse regression]\n";
    rep << "polynomial: " << best.to_string(4) << "\n";
    rep << "active terms: " << best.active() << "\n";
    for (std::size_t a = 0; a < best.terms.size(); ++a)
      rep << "  " << BasisLibrary::term_name(best.terms[a]) << " = " << fmt(best.coefficients[a], 8) << "\n";
    rep << "phi: " << fmt(best.phi, 6) << "\nBIC: " << fmt(best.bic, 8) << "\nMSE: " << fmt(best.mse, 6) << "\n";
    rep << "grid (phi, active, BIC):";
    for (const auto& m : gr.models) rep << " (" << fmt(m.phi, 3) << ", " << m.active() << ", " << fmt(m.bic, 6) << ")";
    rep << "\n";

    std::vector<double> poly_v;
    for (const auto& s : samples) poly_v.push_back(best.predict(s.q, s.qstar));
    uptake_series.push_back({"polynomial", idx, poly_v});

    // Closed loop: the polynomial replaces the network in the column model.
    const UptakeFn law = polynomial_uptake(best);
    bool ok_train = false, ok_test = false;
    art.summary.closed_loop_train_rmse = closed_loop_rmse(law, net, cs.train, &ok_train);
    art.summary.closed_loop_test_rmse = closed_loop_rmse(law, net, cs.test, &ok_test);
    art.summary.closed_loop_ok = ok_train && ok_test;
    rep << "closed-loop RMSE vs network (train, test): " << fmt(art.summary.closed_loop_train_rmse) << ", "
        << fmt(art.summary.closed_loop_test_rmse) << "\n\n";
    for (int split = 0; split < 2; ++split) {
      const Scenario& sc = split == 0 ? cs.train : cs.test;
      const Simulation a = simulate_hybrid(net, sc, ho);
      const Simulation b = simulate(sc, law, ho.simulation());
      const auto t = dense_times(sc.feed.t_obs, 271);
      std::vector<double> ca = a.success() ? a.outlet(t) : std::vector<double>(t.size(), NAN);
      std::vector<double> cb = b.success() ? b.outlet(t) : std::vector<double>(t.size(), NAN);
      const std::string stem = split == 0 ? "train" : "test";
      const fs::path p = dir / ("polynomial_breakthrough_" + stem + ".csv");
      write_text(p, curve_csv({"t_min", "c_network_mgL", "c_polynomial_mgL"}, {t, ca, cb}));
      art.outputs.push_back(p);
      write_svg(dir / ("polynomial_breakthrough_" + stem + ".svg"),
                svg_chart(cs.id.name() + " " + stem + ": network vs polynomial", "t (min)", "c (mg/L)",
                          {{"network", t, ca}, {"polynomial", t, cb}}),
                log);
    }
  }

  if (do_symbolic) {
    GpOptions gp;
    gp.seed = opt.seed;
    const GpResult res = gp_symbolic(samples, gp);
    art.summary.symbolic = res;
    rep << "[symbolic regression]\n";
    rep << "best: " << res.best.tree.to_string(4) << "\n";
    rep << "MSE: " << fmt(res.best.mse, 6) << "\ncomplexity: " << res.best.tree.complexity() << "\n";
    rep << "pareto front (complexity, MSE, expression):\n";
    for (const auto& c : res.pareto)
      rep << "  " << c.tree.complexity() << ", " << fmt(c.mse, 6) << ", " << c.tree.to_string(4) << "\n";
    std::vector<double> gv;
    for (const auto& s : samples) gv.push_back(res.best.tree.eval(s.q, s.qstar));
    uptake_series.push_back({"symbolic", idx, gv});
  }

  write_svg(dir / "uptake_comparison.svg",
            svg_chart(cs.id.name() + " uptake rate", "sample index", "g (1/min)", uptake_series), log);
  const fs::path rp = dir / "discovery_report.txt";
  write_text(rp, rep.str());
  art.outputs.push_back(rp);

  RunManifest m;
  m.command = "discover";
  m.config = {{"case", cs.id.name()}, {"mode", opt.mode}, {"mean_loss", opt.mean_loss}};
  m.seeds = {{"gp", opt.seed}};
  m.add_input(theta_path);
  for (const auto& p : art.outputs) m.add_output(p);
  m.write(dir / "discover_manifest.json");

  std::lock_guard<std::mutex> lock(log_mu);
  log << rep.str();
  return art;
}

}  // namespace

int cmd_discover(const DiscoverOptions& opt, std::ostream& log, std::vector<DiscoverySummary>* summaries)
{
  if (opt.mode != "sparse" && opt.mode != "symbolic" && opt.mode != "both")
    throw ValidationError("--mode must be sparse, symbolic or both");
  const ConfigFile cfg = maybe_config(opt.config);
  const auto cases = resolve_cases(opt.cases, cfg);
  if (opt.theta && cases.size() != 1) throw ValidationError("--theta needs exactly one case");
  std::vector<DiscoverySummary> out(cases.size());
  std::mutex log_mu;
  parallel_for(cases.size(), opt.jobs, [&](std::size_t i) { out[i] = discover_case(cases[i], opt, log, log_mu).summary; });
  if (summaries) *summaries = out;
  return kExitOk;
}

int cmd_taylor(const TaylorOptions& opt, std::ostream& log)
{
  KineticSpec kin;
  try {
    kin.kind = parse_kinetic_kind(opt.kinetic);
  } catch (const std::exception&) {
    throw ValidationError("unknown kinetic law '" + opt.kinetic + "'");
  }
  if (opt.order != 1 && opt.order != 2) throw ValidationError("--order must be 1 or 2");
  TaylorExpansion t;
  try {
    t = taylor_expand(kin, opt.qstar, opt.q, opt.order);
  } catch (const std::domain_error& e) {
    throw ValidationError(e.what());
  }
  log << "kinetic: " << opt.kinetic << " at (q*, q) = (" << fmt(opt.qstar, 6) << ", " << fmt(opt.q, 6)
      << "), order " << opt.order << "\n";
  log << "value        " << fmt(t.value, 6) << "\n";
  log << "d/dq*        " << fmt(t.d_qstar, 6) << "\n";
  log << "d/dq         " << fmt(t.d_q, 6) << "\n";
  if (opt.order == 2) {
    log << "1/2 d2/dq*2  " << fmt(t.half_d2_qstar, 6) << "\n";
    log << "d2/dq*dq     " << fmt(t.d2_mixed, 6) << "\n";
    log << "1/2 d2/dq2   " << fmt(t.half_d2_q, 6) << "\n";
  }
  const auto m = t.monomials();
  log << "expanded: " << fmt(m[0], 6) << " + " << fmt(m[1], 6) << " q* + " << fmt(m[2], 6) << " q";
  if (opt.order == 2) log << " + " << fmt(m[3], 6) << " q*^2 + " << fmt(m[4], 6) << " q* q + " << fmt(m[5], 6) << " q^2";
  log << "\n";
  return kExitOk;
}

}  // namespace sorbkit::pipeline
