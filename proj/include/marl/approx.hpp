#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "marl/common.hpp"

namespace marl {

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Fully-connected net: nonlinear hidden layers, linear output. `sizes`
// has at least two entries; sizes {d_in, d_out} is a plain linear map,
// which is how the mixer hypernetworks are built.
struct Mlp {
  std::vector<int> sizes;
  Activation activation = Activation::tanh;
  // weights[l] is row-major (sizes[l+1] x sizes[l]); biases[l] has
  // sizes[l+1] entries.
  std::vector<Vec> weights;
  std::vector<Vec> biases;

  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }
  size_t n_layers() const { return sizes.size() - 1; }
  size_t n_params() const;

  // Flat views over parameters in a fixed order (layer by layer,
  // weights then bias). Used by optimizers, checksums, probes.
  void flatten(Vec& out) const;
  void unflatten(std::span<const double> flat);
};

// Gradients of a scalar loss w.r.t. every parameter, plus the input.
struct GradientSet {
  std::vector<Vec> d_weights;
  std::vector<Vec> d_biases;
  Vec d_input;

  static GradientSet zeros_like(const Mlp& net);
  void add(const GradientSet& other);     // shapes must match
  void scale(double s);
  void check_finite(const std::string& tensor_owner) const;
  void flatten(Vec& out) const;           // same order as Mlp::flatten
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases,
// deterministic per seed.
Mlp init_params(const std::vector<int>& sizes, uint64_t seed,
                Activation act = Activation::tanh);

Vec forward(const Mlp& net, std::span<const double> x);

// Activations cached for reuse between forward and backward.
struct ForwardCache {
  std::vector<Vec> post;  // post[0] = input copy, post[l+1] = layer l output
};
Vec forward(const Mlp& net, std::span<const double> x, ForwardCache& cache);

// Exact gradients of (upstream . forward(x)) w.r.t. parameters and x.
GradientSet backward(const Mlp& net, std::span<const double> x,
                     std::span<const double> upstream);
// Faster path when the matching cache is already available.
GradientSet backward(const Mlp& net, const ForwardCache& cache,
                     std::span<const double> upstream);
// Accumulating variant used by batch kernels.
void backward_accumulate(const Mlp& net, const ForwardCache& cache,
                         std::span<const double> upstream, GradientSet& into);

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_num = 1e-8;
  long step = 0;
  std::vector<Vec> m_weights, v_weights, m_biases, v_biases;

  static OptimizerState make(OptimizerKind kind, double alpha, const Mlp& net);
};

// sgd: theta -= alpha * g; adam: bias-corrected moment update. Throws
// NumericError naming the tensor on non-finite gradients.
void apply_update(Mlp& net, const GradientSet& grads, OptimizerState& opt);

// Discretized-observation value table; missing keys read as zeros.
struct Tabular {
  int n_actions = 0;
  std::map<std::string, Vec> table;

  Vec lookup(const std::string& key) const;
  Vec& values(const std::string& key);  // inserts a zero row
};

// Key for a real-valued observation: entries rounded to 6 decimals.
std::string discretize_key(std::span<const double> obs);

// Text serialization (hexfloat, exact round-trip).
void write_mlp(std::ostream& os, const Mlp& net);
Mlp read_mlp(std::istream& is);
void write_optimizer(std::ostream& os, const OptimizerState& opt);
OptimizerState read_optimizer(std::istream& is);

// FNV-style digest over parameter bits; used by purity checks.
uint64_t param_checksum(const Mlp& net);

}  // namespace marl
