#include "marl/mixer.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace marl {

std::string to_string(MixerKind k) {
  return k == MixerKind::sum ? "sum" : "monotonic";
}

MixerKind mixer_kind_from_string(const std::string& s) {
  if (s == "sum") return MixerKind::sum;
  if (s == "monotonic") return MixerKind::monotonic;
  throw ConfigError("unknown mixer kind '" + s + "' (sum, monotonic)");
}

size_t Mixer::n_params() const {
  if (kind == MixerKind::sum) return 0;
  return hyper_w1.n_params() + hyper_b1.n_params() + hyper_w2.n_params() +
         hyper_b2.n_params();
}

void Mixer::flatten(Vec& out) const {
  out.clear();
  if (kind == MixerKind::sum) return;
  Vec part;
  for (const Mlp* net : {&hyper_w1, &hyper_b1, &hyper_w2, &hyper_b2}) {
    net->flatten(part);
    out.insert(out.end(), part.begin(), part.end());
  }
}

void Mixer::unflatten(std::span<const double> flat) {
  if (kind == MixerKind::sum) {
    if (!flat.empty()) throw ShapeError("sum mixer has no parameters");
    return;
  }
  size_t k = 0;
  for (Mlp* net : {&hyper_w1, &hyper_b1, &hyper_w2, &hyper_b2}) {
    const size_t n = net->n_params();
    net->unflatten(flat.subspan(k, n));
    k += n;
  }
  if (k != flat.size()) throw ShapeError("mixer unflatten: length mismatch");
}

Mixer make_mixer(MixerKind kind, int n_inputs, int state_dim, int hidden,
                 uint64_t seed) {
  if (n_inputs < 1) throw ConfigError("mixer needs at least one input");
  Mixer m;
  m.kind = kind;
  m.n_inputs = n_inputs;
  if (kind == MixerKind::sum) return m;
  if (state_dim < 1) throw ConfigError("monotonic mixer needs state_dim >= 1");
  if (hidden < 1) throw ConfigError("monotonic mixer needs hidden >= 1");
  m.state_dim = state_dim;
  m.hidden = hidden;
  m.hyper_w1 = init_params({state_dim, hidden * n_inputs}, derive_seed(seed, "hyper_w1"));
  m.hyper_b1 = init_params({state_dim, hidden}, derive_seed(seed, "hyper_b1"));
  m.hyper_w2 = init_params({state_dim, hidden}, derive_seed(seed, "hyper_w2"));
  m.hyper_b2 = init_params({state_dim, 1}, derive_seed(seed, "hyper_b2"));
  return m;
}

MixerGrads MixerGrads::zeros_like(const Mixer& m) {
  MixerGrads g;
  g.d_q.assign(m.n_inputs, 0.0);
  if (m.kind == MixerKind::monotonic) {
    g.d_hyper_w1 = GradientSet::zeros_like(m.hyper_w1);
    g.d_hyper_b1 = GradientSet::zeros_like(m.hyper_b1);
    g.d_hyper_w2 = GradientSet::zeros_like(m.hyper_w2);
    g.d_hyper_b2 = GradientSet::zeros_like(m.hyper_b2);
  }
  return g;
}

void MixerGrads::add(const MixerGrads& other) {
  for (size_t i = 0; i < d_q.size(); ++i) d_q[i] += other.d_q[i];
  if (!d_hyper_w1.d_weights.empty()) {
    d_hyper_w1.add(other.d_hyper_w1);
    d_hyper_b1.add(other.d_hyper_b1);
    d_hyper_w2.add(other.d_hyper_w2);
    d_hyper_b2.add(other.d_hyper_b2);
  }
}

void MixerGrads::flatten(Vec& out) const {
  out.clear();
  Vec part;
  for (const GradientSet* g : {&d_hyper_w1, &d_hyper_b1, &d_hyper_w2, &d_hyper_b2}) {
    g->flatten(part);
    out.insert(out.end(), part.begin(), part.end());
  }
}

double mix_forward(const Mixer& m, std::span<const double> q,
                   std::span<const double> state) {
  if (static_cast<int>(q.size()) != m.n_inputs)
    throw ShapeError("mixer: expected " + std::to_string(m.n_inputs) +
                     " inputs, got " + std::to_string(q.size()));
  if (m.kind == MixerKind::sum) {
    double acc = q[0];
    for (size_t i = 1; i < q.size(); ++i) acc += q[i];
    return acc;
  }
  if (static_cast<int>(state.size()) != m.state_dim)
    throw ShapeError("mixer: state length mismatch");
  const Vec w1_raw = forward(m.hyper_w1, state);
  const Vec b1 = forward(m.hyper_b1, state);
  const Vec w2_raw = forward(m.hyper_w2, state);
  const Vec b2 = forward(m.hyper_b2, state);
  double out = b2[0];
  for (int h = 0; h < m.hidden; ++h) {
    double z = b1[h];
    for (int i = 0; i < m.n_inputs; ++i)
      z += std::abs(w1_raw[static_cast<size_t>(h) * m.n_inputs + i]) * q[i];
    out += std::abs(w2_raw[h]) * std::tanh(z);
  }
  return out;
}

double mix_forward_backward(const Mixer& m, std::span<const double> q,
                            std::span<const double> state, double upstream,
                            MixerGrads& into) {
  if (static_cast<int>(q.size()) != m.n_inputs)
    throw ShapeError("mixer: expected " + std::to_string(m.n_inputs) +
                     " inputs, got " + std::to_string(q.size()));
  if (m.kind == MixerKind::sum) {
    double acc = q[0];
    for (size_t i = 1; i < q.size(); ++i) acc += q[i];
    for (int i = 0; i < m.n_inputs; ++i) into.d_q[i] = upstream;
    return acc;
  }
  if (static_cast<int>(state.size()) != m.state_dim)
    throw ShapeError("mixer: state length mismatch");

  ForwardCache c_w1, c_b1, c_w2, c_b2;
  const Vec w1_raw = forward(m.hyper_w1, state, c_w1);
  const Vec b1 = forward(m.hyper_b1, state, c_b1);
  const Vec w2_raw = forward(m.hyper_w2, state, c_w2);
  const Vec b2 = forward(m.hyper_b2, state, c_b2);

  Vec z(m.hidden), t(m.hidden);
  double out = b2[0];
  for (int h = 0; h < m.hidden; ++h) {
    double acc = b1[h];
    for (int i = 0; i < m.n_inputs; ++i)
      acc += std::abs(w1_raw[static_cast<size_t>(h) * m.n_inputs + i]) * q[i];
    z[h] = acc;
    t[h] = std::tanh(acc);
    out += std::abs(w2_raw[h]) * t[h];
  }

  // Upstream vectors for each hypernet, then one backward pass each.
  Vec up_w1(static_cast<size_t>(m.hidden) * m.n_inputs, 0.0);
  Vec up_b1(m.hidden, 0.0);
  Vec up_w2(m.hidden, 0.0);
  const Vec up_b2 = {upstream};
  std::fill(into.d_q.begin(), into.d_q.end(), 0.0);
  for (int h = 0; h < m.hidden; ++h) {
    const double w2h = std::abs(w2_raw[h]);
    const double sgn_w2 = w2_raw[h] < 0.0 ? -1.0 : 1.0;
    up_w2[h] = upstream * sgn_w2 * t[h];
    const double dz = upstream * w2h * (1.0 - t[h] * t[h]);
    up_b1[h] = dz;
    for (int i = 0; i < m.n_inputs; ++i) {
      const size_t k = static_cast<size_t>(h) * m.n_inputs + i;
      const double sgn_w1 = w1_raw[k] < 0.0 ? -1.0 : 1.0;
      up_w1[k] = dz * q[i] * sgn_w1;
      into.d_q[i] += dz * std::abs(w1_raw[k]);
    }
  }
  backward_accumulate(m.hyper_w1, c_w1, up_w1, into.d_hyper_w1);
  backward_accumulate(m.hyper_b1, c_b1, up_b1, into.d_hyper_b1);
  backward_accumulate(m.hyper_w2, c_w2, up_w2, into.d_hyper_w2);
  backward_accumulate(m.hyper_b2, c_b2, up_b2, into.d_hyper_b2);
  return out;
}

MixerOptimizer MixerOptimizer::make(OptimizerKind kind, double alpha,
                                    const Mixer& m) {
  MixerOptimizer o;
  if (m.kind == MixerKind::sum) return o;
  o.w1 = OptimizerState::make(kind, alpha, m.hyper_w1);
  o.b1 = OptimizerState::make(kind, alpha, m.hyper_b1);
  o.w2 = OptimizerState::make(kind, alpha, m.hyper_w2);
  o.b2 = OptimizerState::make(kind, alpha, m.hyper_b2);
  return o;
}

void apply_update(Mixer& m, const MixerGrads& grads, MixerOptimizer& opt) {
  if (m.kind == MixerKind::sum) return;
  apply_update(m.hyper_w1, grads.d_hyper_w1, opt.w1);
  apply_update(m.hyper_b1, grads.d_hyper_b1, opt.b1);
  apply_update(m.hyper_w2, grads.d_hyper_w2, opt.w2);
  apply_update(m.hyper_b2, grads.d_hyper_b2, opt.b2);
}

void write_mixer(std::ostream& os, const Mixer& m) {
  os << "mixer " << to_string(m.kind) << " " << m.n_inputs << " "
     << m.state_dim << " " << m.hidden << "\n";
  if (m.kind == MixerKind::monotonic) {
    write_mlp(os, m.hyper_w1);
    write_mlp(os, m.hyper_b1);
    write_mlp(os, m.hyper_w2);
    write_mlp(os, m.hyper_b2);
  }
}

Mixer read_mixer(std::istream& is) {
  std::string tag, kind;
  Mixer m;
  is >> tag >> kind >> m.n_inputs >> m.state_dim >> m.hidden;
  if (tag != "mixer" || !is) throw ShapeError("checkpoint: expected mixer record");
  m.kind = mixer_kind_from_string(kind);
  if (m.kind == MixerKind::monotonic) {
    m.hyper_w1 = read_mlp(is);
    m.hyper_b1 = read_mlp(is);
    m.hyper_w2 = read_mlp(is);
    m.hyper_b2 = read_mlp(is);
  }
  return m;
}

}  // namespace marl
