#include "marl/approx.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace marl {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2)
    throw ShapeError("Mlp needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw ShapeError("Mlp layer size must be positive");
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "' (tanh, relu)");
}

size_t Mlp::n_params() const {
  size_t n = 0;
  for (size_t l = 0; l < n_layers(); ++l)
    n += weights[l].size() + biases[l].size();
  return n;
}

void Mlp::flatten(Vec& out) const {
  out.clear();
  out.reserve(n_params());
  for (size_t l = 0; l < n_layers(); ++l) {
    out.insert(out.end(), weights[l].begin(), weights[l].end());
    out.insert(out.end(), biases[l].begin(), biases[l].end());
  }
}

void Mlp::unflatten(std::span<const double> flat) {
  if (flat.size() != n_params())
    throw ShapeError("unflatten: parameter count mismatch");
  size_t k = 0;
  for (size_t l = 0; l < n_layers(); ++l) {
    for (auto& w : weights[l]) w = flat[k++];
    for (auto& b : biases[l]) b = flat[k++];
  }
}

GradientSet GradientSet::zeros_like(const Mlp& net) {
  GradientSet g;
  g.d_weights.resize(net.n_layers());
  g.d_biases.resize(net.n_layers());
  for (size_t l = 0; l < net.n_layers(); ++l) {
    g.d_weights[l].assign(net.weights[l].size(), 0.0);
    g.d_biases[l].assign(net.biases[l].size(), 0.0);
  }
  g.d_input.assign(net.in_dim(), 0.0);
  return g;
}

void GradientSet::add(const GradientSet& other) {
  if (other.d_weights.size() != d_weights.size())
    throw ShapeError("GradientSet::add: layer count mismatch");
  for (size_t l = 0; l < d_weights.size(); ++l) {
    for (size_t i = 0; i < d_weights[l].size(); ++i)
      d_weights[l][i] += other.d_weights[l][i];
    for (size_t i = 0; i < d_biases[l].size(); ++i)
      d_biases[l][i] += other.d_biases[l][i];
  }
  for (size_t i = 0; i < d_input.size(); ++i) d_input[i] += other.d_input[i];
}

void GradientSet::scale(double s) {
  for (auto& layer : d_weights)
    for (auto& v : layer) v *= s;
  for (auto& layer : d_biases)
    for (auto& v : layer) v *= s;
  for (auto& v : d_input) v *= s;
}

void GradientSet::check_finite(const std::string& tensor_owner) const {
  for (size_t l = 0; l < d_weights.size(); ++l) {
    for (double v : d_weights[l])
      if (!std::isfinite(v))
        throw NumericError("non-finite gradient in " + tensor_owner +
                           " weights[" + std::to_string(l) + "]");
    for (double v : d_biases[l])
      if (!std::isfinite(v))
        throw NumericError("non-finite gradient in " + tensor_owner +
                           " biases[" + std::to_string(l) + "]");
  }
}

void GradientSet::flatten(Vec& out) const {
  out.clear();
  for (size_t l = 0; l < d_weights.size(); ++l) {
    out.insert(out.end(), d_weights[l].begin(), d_weights[l].end());
    out.insert(out.end(), d_biases[l].begin(), d_biases[l].end());
  }
}

Mlp init_params(const std::vector<int>& sizes, uint64_t seed, Activation act) {
  check_sizes(sizes);
  Rng rng(seed);
  Mlp net;
  net.sizes = sizes;
  net.activation = act;
  net.weights.resize(net.n_layers());
  net.biases.resize(net.n_layers());
  for (size_t l = 0; l < net.n_layers(); ++l) {
    const int fan_in = sizes[l], fan_out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    net.weights[l].resize(static_cast<size_t>(fan_in) * fan_out);
    for (auto& w : net.weights[l]) w = rng.uniform(-bound, bound);
    net.biases[l].assign(fan_out, 0.0);
  }
  return net;
}

Vec forward(const Mlp& net, std::span<const double> x) {
  ForwardCache cache;
  return forward(net, x, cache);
}

Vec forward(const Mlp& net, std::span<const double> x, ForwardCache& cache) {
  if (static_cast<int>(x.size()) != net.in_dim())
    throw ShapeError("forward: input has " + std::to_string(x.size()) +
                     " entries, net expects " + std::to_string(net.in_dim()));
  cache.post.assign(net.n_layers() + 1, {});
  cache.post[0].assign(x.begin(), x.end());
  for (size_t l = 0; l < net.n_layers(); ++l) {
    const int rows = net.sizes[l + 1], cols = net.sizes[l];
    const Vec& in = cache.post[l];
    Vec& out = cache.post[l + 1];
    out.resize(rows);
    const double* w = net.weights[l].data();
    const bool hidden = l + 1 < net.n_layers();
    for (int r = 0; r < rows; ++r) {
      double acc = net.biases[l][r];
      const double* row = w + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) acc += row[c] * in[c];
      if (hidden)
        acc = net.activation == Activation::tanh ? std::tanh(acc)
                                                 : std::max(0.0, acc);
      out[r] = acc;
    }
  }
  return cache.post.back();
}

GradientSet backward(const Mlp& net, std::span<const double> x,
                     std::span<const double> upstream) {
  ForwardCache cache;
  forward(net, x, cache);
  return backward(net, cache, upstream);
}

GradientSet backward(const Mlp& net, const ForwardCache& cache,
                     std::span<const double> upstream) {
  GradientSet g = GradientSet::zeros_like(net);
  backward_accumulate(net, cache, upstream, g);
  return g;
}

void backward_accumulate(const Mlp& net, const ForwardCache& cache,
                         std::span<const double> upstream, GradientSet& into) {
  if (static_cast<int>(upstream.size()) != net.out_dim())
    throw ShapeError("backward: upstream has " + std::to_string(upstream.size()) +
                     " entries, net outputs " + std::to_string(net.out_dim()));
  // delta = dL/d(pre-activation of current layer output)
  Vec delta(upstream.begin(), upstream.end());
  for (size_t li = net.n_layers(); li-- > 0;) {
    const int rows = net.sizes[li + 1], cols = net.sizes[li];
    const Vec& in = cache.post[li];
    const Vec& out = cache.post[li + 1];
    // Hidden layer: fold the activation derivative in. Both derivatives
    // are recoverable from the post-activation value alone.
    if (li + 1 < net.n_layers()) {
      if (net.activation == Activation::tanh)
        for (int r = 0; r < rows; ++r) delta[r] *= 1.0 - out[r] * out[r];
      else
        for (int r = 0; r < rows; ++r) delta[r] *= out[r] > 0.0 ? 1.0 : 0.0;
    }
    double* dw = into.d_weights[li].data();
    for (int r = 0; r < rows; ++r) {
      const double d = delta[r];
      into.d_biases[li][r] += d;
      double* dwrow = dw + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dwrow[c] += d * in[c];
    }
    Vec prev(cols, 0.0);
    const double* w = net.weights[li].data();
    for (int r = 0; r < rows; ++r) {
      const double d = delta[r];
      const double* row = w + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) prev[c] += d * row[c];
    }
    if (li == 0)
      for (int c = 0; c < cols; ++c) into.d_input[c] += prev[c];
    delta = std::move(prev);
  }
}

OptimizerState OptimizerState::make(OptimizerKind kind, double alpha, const Mlp& net) {
  if (alpha <= 0.0) throw ConfigError("optimizer step size must be positive");
  OptimizerState o;
  o.kind = kind;
  o.alpha = alpha;
  o.m_weights.resize(net.n_layers());
  o.v_weights.resize(net.n_layers());
  o.m_biases.resize(net.n_layers());
  o.v_biases.resize(net.n_layers());
  for (size_t l = 0; l < net.n_layers(); ++l) {
    o.m_weights[l].assign(net.weights[l].size(), 0.0);
    o.v_weights[l].assign(net.weights[l].size(), 0.0);
    o.m_biases[l].assign(net.biases[l].size(), 0.0);
    o.v_biases[l].assign(net.biases[l].size(), 0.0);
  }
  return o;
}

namespace {

void adam_tensor(Vec& theta, const Vec& g, Vec& m, Vec& v,
                 const OptimizerState& o, double bc1, double bc2) {
  for (size_t i = 0; i < theta.size(); ++i) {
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] -= o.alpha * mhat / (std::sqrt(vhat) + o.eps_num);
  }
}

}  // namespace

void apply_update(Mlp& net, const GradientSet& grads, OptimizerState& opt) {
  if (grads.d_weights.size() != net.n_layers())
    throw ShapeError("apply_update: gradient/net layer mismatch");
  grads.check_finite("net");
  if (opt.kind == OptimizerKind::sgd) {
    for (size_t l = 0; l < net.n_layers(); ++l) {
      for (size_t i = 0; i < net.weights[l].size(); ++i)
        net.weights[l][i] -= opt.alpha * grads.d_weights[l][i];
      for (size_t i = 0; i < net.biases[l].size(); ++i)
        net.biases[l][i] -= opt.alpha * grads.d_biases[l][i];
    }
    ++opt.step;
    return;
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (size_t l = 0; l < net.n_layers(); ++l) {
    adam_tensor(net.weights[l], grads.d_weights[l], opt.m_weights[l],
                opt.v_weights[l], opt, bc1, bc2);
    adam_tensor(net.biases[l], grads.d_biases[l], opt.m_biases[l],
                opt.v_biases[l], opt, bc1, bc2);
  }
}

Vec Tabular::lookup(const std::string& key) const {
  auto it = table.find(key);
  if (it == table.end()) return Vec(n_actions, 0.0);
  return it->second;
}

Vec& Tabular::values(const std::string& key) {
  auto it = table.find(key);
  if (it == table.end())
    it = table.emplace(key, Vec(n_actions, 0.0)).first;
  return it->second;
}

std::string discretize_key(std::span<const double> obs) {
  std::ostringstream os;
  for (double v : obs) {
    const double r = std::round(v * 1e6) / 1e6;
    os << format_double(r == 0.0 ? 0.0 : r) << ",";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Serialization: line-oriented text, values as hexfloats so reads are exact.

namespace {

void write_vec(std::ostream& os, const Vec& v) {
  os << v.size();
  os << std::hexfloat;
  for (double x : v) os << " " << x;
  os << std::defaultfloat << "\n";
}

// operator>> does not parse hexfloat portably; go through strtod.
double read_double(std::istream& is) {
  std::string token;
  is >> token;
  if (!is) throw ShapeError("checkpoint: truncated value");
  return std::strtod(token.c_str(), nullptr);
}

Vec read_vec(std::istream& is) {
  size_t n = 0;
  is >> n;
  if (!is) throw ShapeError("checkpoint: truncated vector");
  Vec v(n);
  for (auto& x : v) x = read_double(is);
  return v;
}

}  // namespace

void write_mlp(std::ostream& os, const Mlp& net) {
  os << "mlp " << to_string(net.activation) << " " << net.sizes.size();
  for (int s : net.sizes) os << " " << s;
  os << "\n";
  for (size_t l = 0; l < net.n_layers(); ++l) {
    write_vec(os, net.weights[l]);
    write_vec(os, net.biases[l]);
  }
}

Mlp read_mlp(std::istream& is) {
  std::string tag, act;
  size_t nsizes = 0;
  is >> tag >> act >> nsizes;
  if (tag != "mlp" || !is) throw ShapeError("checkpoint: expected mlp record");
  Mlp net;
  net.activation = activation_from_string(act);
  net.sizes.resize(nsizes);
  for (auto& s : net.sizes) is >> s;
  check_sizes(net.sizes);
  net.weights.resize(net.n_layers());
  net.biases.resize(net.n_layers());
  for (size_t l = 0; l < net.n_layers(); ++l) {
    net.weights[l] = read_vec(is);
    net.biases[l] = read_vec(is);
    if (net.weights[l].size() !=
            static_cast<size_t>(net.sizes[l]) * net.sizes[l + 1] ||
        net.biases[l].size() != static_cast<size_t>(net.sizes[l + 1]))
      throw ShapeError("checkpoint: mlp tensor shape mismatch");
  }
  return net;
}

void write_optimizer(std::ostream& os, const OptimizerState& opt) {
  os << "opt " << (opt.kind == OptimizerKind::sgd ? "sgd" : "adam") << " "
     << opt.step << std::hexfloat << " " << opt.alpha << " " << opt.beta1
     << " " << opt.beta2 << " " << opt.eps_num << std::defaultfloat << " "
     << opt.m_weights.size() << "\n";
  for (size_t l = 0; l < opt.m_weights.size(); ++l) {
    write_vec(os, opt.m_weights[l]);
    write_vec(os, opt.v_weights[l]);
    write_vec(os, opt.m_biases[l]);
    write_vec(os, opt.v_biases[l]);
  }
}

OptimizerState read_optimizer(std::istream& is) {
  std::string tag, kind;
  OptimizerState opt;
  size_t layers = 0;
  is >> tag >> kind >> opt.step;
  opt.alpha = read_double(is);
  opt.beta1 = read_double(is);
  opt.beta2 = read_double(is);
  opt.eps_num = read_double(is);
  is >> layers;
  if (tag != "opt" || !is) throw ShapeError("checkpoint: expected opt record");
  opt.kind = kind == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  opt.m_weights.resize(layers);
  opt.v_weights.resize(layers);
  opt.m_biases.resize(layers);
  opt.v_biases.resize(layers);
  for (size_t l = 0; l < layers; ++l) {
    opt.m_weights[l] = read_vec(is);
    opt.v_weights[l] = read_vec(is);
    opt.m_biases[l] = read_vec(is);
    opt.v_biases[l] = read_vec(is);
  }
  return opt;
}

uint64_t param_checksum(const Mlp& net) {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const Vec& v) {
    for (double x : v) {
      uint64_t bits;
      std::memcpy(&bits, &x, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  };
  for (size_t l = 0; l < net.n_layers(); ++l) {
    feed(net.weights[l]);
    feed(net.biases[l]);
  }
  return h;
}

}  // namespace marl
