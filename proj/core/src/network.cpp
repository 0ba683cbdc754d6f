#include "sorbkit/network.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sorbkit {

namespace {

constexpr int kMaxWidth = 256;
constexpr int kMaxLayers = 8;

}  // namespace

std::vector<int> NetArch::widths() const
{
  std::vector<int> w{kInputs};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(kOutputs);
  return w;
}

std::size_t NetArch::parameter_count() const
{
  const auto w = widths();
  std::size_t n = 0;
  for (std::size_t l = 1; l < w.size(); ++l) n += static_cast<std::size_t>((w[l - 1] + 1) * w[l]);
  return n;
}

void NetArch::validate() const
{
  if (hidden.empty() || hidden.size() > kMaxLayers - 1) throw std::invalid_argument("NetArch: need 1..7 hidden layers");
  for (int h : hidden)
    if (h < 1 || h > kMaxWidth) throw std::invalid_argument("NetArch: hidden widths must lie in [1, 256]");
  if (!(input_scale > 0.0)) throw std::invalid_argument("NetArch: input scale must be positive");
}

std::string NetArch::descriptor() const
{
  std::string s;
  for (int w : widths()) s += (s.empty() ? "" : "-") + std::to_string(w);
  return s;
}

NetArch NetArch::parse(const std::string& descriptor, double input_scale)
{
  std::vector<int> w;
  std::stringstream ss(descriptor);
  std::string tok;
  while (std::getline(ss, tok, '-')) w.push_back(std::stoi(tok));
  if (w.size() < 3 || w.front() != kInputs || w.back() != kOutputs)
    throw std::invalid_argument("NetArch: bad descriptor " + descriptor);
  NetArch a;
  a.hidden.assign(w.begin() + 1, w.end() - 1);
  a.input_scale = input_scale;
  a.validate();
  return a;
}

NetArch NetArch::for_case(CaseId id)
{
  NetArch a;
  if (id.kinetics == KineticKind::Vermeulen)
    a.hidden = {10, 8};
  else
    a.hidden = {id.isotherm == IsothermKind::Langmuir ? 17 : 20};
  return a;
}

std::vector<NetParams::Layer> NetParams::layers() const
{
  const auto w = arch.widths();
  std::vector<Layer> out;
  Eigen::Index off = 0;
  for (std::size_t l = 1; l < w.size(); ++l) {
    Layer layer{w[l - 1], w[l], off, off + w[l - 1] * w[l]};
    off = layer.bias_offset + w[l];
    out.push_back(layer);
  }
  return out;
}

NetParams net_init(const NetArch& arch, std::uint64_t seed)
{
  arch.validate();
  NetParams net{arch, Vec::Zero(static_cast<Eigen::Index>(arch.parameter_count()))};
  std::mt19937_64 rng(seed);
  const auto layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const double bound = std::sqrt(6.0 / (L.fan_in + L.fan_out));
    const double scale = l + 1 == layers.size() ? 0.1 : 1.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < L.fan_in * L.fan_out; ++i) net.theta[L.weight_offset + i] = scale * dist(rng);
  }
  return net;
}

namespace {

void check(const NetParams& net)
{
  if (static_cast<std::size_t>(net.theta.size()) != net.arch.parameter_count())
    throw std::invalid_argument("NetParams: parameter vector does not match architecture");
}

}  // namespace

UptakeRate net_forward_grad(const NetParams& net, double q, double qstar)
{
  check(net);
  const double* th = net.theta.data();
  const double s = net.arch.input_scale;
  // Activations and their derivatives with respect to (q, q*).
  std::array<double, kMaxWidth> a{}, da_q{}, da_s{}, z{}, dz_q{}, dz_s{};
  a[0] = s * q;
  a[1] = s * qstar;
  da_q[0] = s;
  da_s[1] = s;
  int width = NetArch::kInputs;

  const auto w = net.arch.widths();
  Eigen::Index off = 0;
  for (std::size_t l = 1; l < w.size(); ++l) {
    const int fan_in = w[l - 1];
    const int fan_out = w[l];
    const double* W = th + off;
    const double* b = W + fan_in * fan_out;
    for (int o = 0; o < fan_out; ++o) {
      double acc = b[o], acc_q = 0.0, acc_s = 0.0;
      const double* row = W + o * fan_in;
      for (int i = 0; i < fan_in; ++i) {
        acc += row[i] * a[static_cast<std::size_t>(i)];
        acc_q += row[i] * da_q[static_cast<std::size_t>(i)];
        acc_s += row[i] * da_s[static_cast<std::size_t>(i)];
      }
      z[static_cast<std::size_t>(o)] = acc;
      dz_q[static_cast<std::size_t>(o)] = acc_q;
      dz_s[static_cast<std::size_t>(o)] = acc_s;
    }
    const bool last = l + 1 == w.size();
    for (int o = 0; o < fan_out; ++o) {
      const auto oo = static_cast<std::size_t>(o);
      if (last) {
        a[oo] = z[oo];
        da_q[oo] = dz_q[oo];
        da_s[oo] = dz_s[oo];
      } else {
        const double t = std::tanh(z[oo]);
        const double d = 1.0 - t * t;
        a[oo] = t;
        da_q[oo] = d * dz_q[oo];
        da_s[oo] = d * dz_s[oo];
      }
    }
    width = fan_out;
    off += (fan_in + 1) * fan_out;
  }
  (void)width;
  return UptakeRate{a[0], da_q[0], da_s[0]};
}

double net_forward(const NetParams& net, double q, double qstar)
{
  check(net);
  const double* th = net.theta.data();
  std::array<double, kMaxWidth> a{}, z{};
  a[0] = net.arch.input_scale * q;
  a[1] = net.arch.input_scale * qstar;
  const auto w = net.arch.widths();
  Eigen::Index off = 0;
  for (std::size_t l = 1; l < w.size(); ++l) {
    const int fan_in = w[l - 1];
    const int fan_out = w[l];
    const double* W = th + off;
    const double* b = W + fan_in * fan_out;
    for (int o = 0; o < fan_out; ++o) {
      double acc = b[o];
      for (int i = 0; i < fan_in; ++i) acc += W[o * fan_in + i] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
    }
    const bool last = l + 1 == w.size();
    for (int o = 0; o < fan_out; ++o)
      a[static_cast<std::size_t>(o)] = last ? z[static_cast<std::size_t>(o)] : std::tanh(z[static_cast<std::size_t>(o)]);
    off += (fan_in + 1) * fan_out;
  }
  return a[0];
}

void net_accumulate_param_grad(const NetParams& net, double q, double qstar, double weight, Vec& grad)
{
  check(net);
  if (grad.size() != net.theta.size()) throw std::invalid_argument("net_accumulate_param_grad: gradient size mismatch");
  const double* th = net.theta.data();
  const auto w = net.arch.widths();
  const std::size_t nl = w.size() - 1;

  // acts[l] holds the input of layer l (acts[0] is the scaled input).
  std::array<std::array<double, kMaxWidth>, kMaxLayers + 1> acts{};
  acts[0][0] = net.arch.input_scale * q;
  acts[0][1] = net.arch.input_scale * qstar;
  std::array<Eigen::Index, kMaxLayers> offs{};
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    offs[l] = off;
    const int fan_in = w[l];
    const int fan_out = w[l + 1];
    const double* W = th + off;
    const double* b = W + fan_in * fan_out;
    for (int o = 0; o < fan_out; ++o) {
      double acc = b[o];
      for (int i = 0; i < fan_in; ++i) acc += W[o * fan_in + i] * acts[l][static_cast<std::size_t>(i)];
      acts[l + 1][static_cast<std::size_t>(o)] = l + 1 == nl ? acc : std::tanh(acc);
    }
    off += (fan_in + 1) * fan_out;
  }

  std::array<double, kMaxWidth> delta{}, prev{};
  delta[0] = weight;
  for (std::size_t l = nl; l-- > 0;) {
    const int fan_in = w[l];
    const int fan_out = w[l + 1];
    const Eigen::Index wo = offs[l];
    const Eigen::Index bo = wo + fan_in * fan_out;
    const double* W = th + wo;
    for (int o = 0; o < fan_out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      grad[bo + o] += d;
      for (int i = 0; i < fan_in; ++i) grad[wo + o * fan_in + i] += d * acts[l][static_cast<std::size_t>(i)];
    }
    if (l == 0) break;
    for (int i = 0; i < fan_in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < fan_out; ++o) acc += W[o * fan_in + i] * delta[static_cast<std::size_t>(o)];
      const double a = acts[l][static_cast<std::size_t>(i)];
      prev[static_cast<std::size_t>(i)] = acc * (1.0 - a * a);
    }
    delta = prev;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_le(std::ostream& out, double v)
{
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::istream& in)
{
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated parameter block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  char scale[64];
  std::snprintf(scale, sizeof scale, "%.17g", ck.net.arch.input_scale);
  out << "sorbkit-theta v1 arch=" << ck.net.arch.descriptor() << " input_scale=" << scale
      << " n=" << ck.net.theta.size() << " iter=" << ck.iteration << " phase=" << ck.phase << "\n";
  for (Eigen::Index i = 0; i < ck.net.theta.size(); ++i) put_le(out, ck.net.theta[i]);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header;
  std::getline(in, header);
  std::stringstream ss(header);
  std::string magic, version, tok;
  ss >> magic >> version;
  if (magic != "sorbkit-theta" || version != "v1") throw std::runtime_error("not a sorbkit checkpoint: " + path);
  std::string arch;
  double scale = 0.0;
  long n = -1;
  Checkpoint ck;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const auto key = tok.substr(0, eq);
    const auto val = tok.substr(eq + 1);
    if (key == "arch") arch = val;
    else if (key == "input_scale") scale = std::stod(val);
    else if (key == "n") n = std::stol(val);
    else if (key == "iter") ck.iteration = std::stoi(val);
    else if (key == "phase") ck.phase = val;
  }
  ck.net.arch = NetArch::parse(arch, scale);
  if (n != static_cast<long>(ck.net.arch.parameter_count())) throw std::runtime_error("checkpoint: parameter count mismatch");
  ck.net.theta.resize(n);
  for (long i = 0; i < n; ++i) ck.net.theta[i] = get_le(in);
  return ck;
}

}  // namespace sorbkit
