#pragma once

// Batch commands behind the sorbkit executable. Each artifact-producing
// command writes exactly one run manifest into its output directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sorbkit/discovery.hpp"
#include "sorbkit/trainer.hpp"

namespace sorbkit::pipeline {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

/// Bad user input: malformed files, unknown names, out-of-range options.
class ValidationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

struct RunManifest
{
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  double wall_time = 0.0;

  void add_input(const fs::path& p);
  void add_output(const fs::path& p);
  std::string to_json() const;
  void write(const fs::path& p) const;
};

struct Series
{
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;
};

std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series);

/// Plots are best effort: failures are reported on log and never thrown.
void write_svg(const fs::path& path, const std::string& svg, std::ostream& log);

/// Writes text atomically enough for batch use; throws on failure.
void write_text(const fs::path& path, const std::string& text);

// ---------------------------------------------------------------------------

/// Scenario, dataset and training settings resolved from built-in defaults,
/// an optional config file and command-line overrides (in that precedence).
struct CaseSetup
{
  CaseId id;
  Scenario train;
  Scenario test;
};

/// Config files are scenario JSON objects; an optional "case" key selects the
/// reference case, and optional "train" and "dataset" objects override
/// TrainConfig fields and noise settings.
struct ConfigFile
{
  std::optional<Scenario> scenario;
  nlohmann::json train = nlohmann::json::object();
  nlohmann::json dataset = nlohmann::json::object();
  nlohmann::json raw = nlohmann::json::object();
};

ConfigFile load_config(const fs::path& path);

std::vector<CaseSetup> resolve_cases(const std::string& case_arg, const ConfigFile& cfg, double switch1 = 110.0,
                                     double switch2 = 190.0);

/// Seed of the dataset for a case and split (0 train, 1 test).
std::uint64_t dataset_seed(std::uint64_t base, const CaseId& id, int split);

void apply_train_overrides(const nlohmann::json& j, TrainConfig& cfg);

/// Runs fn(i) for i in [0, n) on up to jobs threads; rethrows the first error.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------

struct GenerateOptions
{
  fs::path out = "out";
  std::string cases = "all";
  std::optional<fs::path> config;
  std::uint64_t seed = 1;
  double noise_frac = 0.05;
  int jobs = 1;
};

struct SimulateOptions
{
  fs::path out = "out";
  std::string cases = "langmuir_ldf";
  std::optional<fs::path> config;
  std::string schedule = "train";  // train or test
  int n_elements = 60;
  double tol = 1e-8;
};

struct TrainOptions
{
  fs::path out = "out";
  std::string cases = "langmuir_ldf";
  std::optional<fs::path> config;
  std::optional<fs::path> data;
  std::optional<fs::path> resume;
  std::uint64_t seed = 1;  // dataset seed base and network initialization
  std::optional<int> adam_iters;
  std::optional<int> qn_iters;
  double noise_frac = 0.05;
  bool gradcheck = false;
  int jobs = 1;
};

struct DiscoverOptions
{
  fs::path out = "out";
  std::string cases = "langmuir_ldf";
  std::optional<fs::path> config;
  std::optional<fs::path> theta;  // default <out>/<case>/theta.bin
  std::string mode = "both";      // sparse, symbolic or both
  std::uint64_t seed = 1;
  bool mean_loss = false;
  int jobs = 1;
};

struct TaylorOptions
{
  std::string kinetic = "vermeulen";
  double qstar = 50.13;
  double q = 48.11;
  int order = 2;
};

struct GradcheckOptions
{
  std::string cases = "all";
  std::uint64_t seed = 1;
  int thetas = 3;
  int coords = 20;
  double tol = 1e-8;
  double step = 1e-5;
  double threshold = 1e-3;
  int jobs = 1;
};

struct GradcheckResult
{
  std::string case_name;
  int theta_index = 0;
  double rel_error = 0.0;  // ||g_adj - g_fd|| / ||g_fd|| on the sampled coordinates
};

/// Adjoint against central differences on random coordinates at random
/// parameters. Tight tolerances keep solver noise below the difference step.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt, std::ostream& log);

/// Outcome of a training run in physical terms.
struct TrainSummary
{
  std::string case_name;
  double sigma = 0.0;
  double train_rmse = 0.0;  // against the noisy training observations
  double test_rmse = 0.0;   // against the noisy test observations
  double best_loss = 0.0;
  bool aborted = false;
  std::string message;
};

struct DiscoverySummary
{
  std::string case_name;
  SparseModel sparse;
  std::optional<GpResult> symbolic;
  double closed_loop_train_rmse = 0.0;  // polynomial vs network breakthrough
  double closed_loop_test_rmse = 0.0;
  bool closed_loop_ok = false;
};

int cmd_generate(const GenerateOptions& opt, std::ostream& log);
int cmd_simulate(const SimulateOptions& opt, std::ostream& log);
int cmd_train(const TrainOptions& opt, std::ostream& log, std::vector<TrainSummary>* summaries = nullptr);
int cmd_discover(const DiscoverOptions& opt, std::ostream& log, std::vector<DiscoverySummary>* summaries = nullptr);
int cmd_taylor(const TaylorOptions& opt, std::ostream& log);
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log);

/// Closed-loop breakthrough of an identified uptake law against the trained
/// network on the same schedule (42 elements, 1e-6 tolerances).
double closed_loop_rmse(const UptakeFn& law, const NetParams& net, const Scenario& sc, bool* ok = nullptr);

}  // namespace sorbkit::pipeline
