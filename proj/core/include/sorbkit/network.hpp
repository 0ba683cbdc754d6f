#pragma once

// Small dense tanh network standing in for the unknown uptake law.
//
// Parameter layout (flat, layer-major): for every layer the weight matrix in
// row-major order (fan_out rows of fan_in entries) followed by the fan_out
// biases. Inputs (q, q*) are multiplied by input_scale before the first layer;
// the output is left unscaled and is read as an uptake rate in min^-1.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sorbkit/dae.hpp"
#include "sorbkit/model.hpp"

namespace sorbkit {

struct NetArch
{
  std::vector<int> hidden{17};
  double input_scale = 1.0 / 55.54;

  static constexpr int kInputs = 2;
  static constexpr int kOutputs = 1;

  /// Layer widths including input and output, e.g. {2, 17, 1}.
  std::vector<int> widths() const;
  std::size_t parameter_count() const;
  void validate() const;

  /// "2-17-1"
  std::string descriptor() const;
  static NetArch parse(const std::string& descriptor, double input_scale);

  /// Hidden widths for a reference case: Langmuir/Sips LDF and improved LDF
  /// use one layer of 17 / 20 units, Vermeulen uses two layers (10, 8).
  static NetArch for_case(CaseId id);

  bool operator==(const NetArch&) const = default;
};

struct NetParams
{
  NetArch arch;
  Vec theta;

  /// Per-layer views of the flat vector.
  struct Layer
  {
    int fan_in;
    int fan_out;
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
  };
  std::vector<Layer> layers() const;
};

/// Glorot-uniform hidden layers, zero biases, output layer scaled by 0.1.
NetParams net_init(const NetArch& arch, std::uint64_t seed);

double net_forward(const NetParams& net, double q, double qstar);

/// Output and its partial derivatives with respect to (q, q*).
UptakeRate net_forward_grad(const NetParams& net, double q, double qstar);

/// Adds weight * d(output)/d(theta) at (q, q*) into grad.
void net_accumulate_param_grad(const NetParams& net, double q, double qstar, double weight, Vec& grad);

/// Matrix-free uptake functor bound to a parameter vector.
class NetUptake
{
public:
  explicit NetUptake(NetParams net) : net_(std::move(net)) {}
  UptakeRate operator()(double q, double qstar) const { return net_forward_grad(net_, q, qstar); }
  const NetParams& params() const { return net_; }

private:
  NetParams net_;
};

// Checkpoint file: one ASCII header line
//   sorbkit-theta v1 arch=2-17-1 input_scale=<g17> n=<count> iter=<k> phase=<name>
// followed by n little-endian IEEE-754 doubles.

struct Checkpoint
{
  NetParams net;
  int iteration = 0;
  std::string phase = "adam";
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace sorbkit
