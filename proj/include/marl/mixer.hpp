#pragma once

#include "marl/approx.hpp"

namespace marl {

enum class MixerKind { sum, monotonic };

std::string to_string(MixerKind k);
MixerKind mixer_kind_from_string(const std::string& s);

// Combines per-agent values into a team value.
//
//   sum        Q_tot = sum_i q_i (no parameters, no state)
//   monotonic  Q_tot = w2 . tanh(W1 q + b1(s)) + b2(s), where W1 and w2
//              come from state-conditioned hypernetworks with absolute
//              value applied, so dQ_tot/dq_i >= 0 for every input.
struct Mixer {
  MixerKind kind = MixerKind::sum;
  int n_inputs = 0;
  int state_dim = 0;
  int hidden = 0;
  Mlp hyper_w1, hyper_b1, hyper_w2, hyper_b2;  // linear maps from state

  bool needs_state() const { return kind == MixerKind::monotonic; }
  size_t n_params() const;
  void flatten(Vec& out) const;
  void unflatten(std::span<const double> flat);
};

Mixer make_mixer(MixerKind kind, int n_inputs, int state_dim, int hidden,
                 uint64_t seed);

struct MixerGrads {
  Vec d_q;  // dQ_tot/dq, length n_inputs
  GradientSet d_hyper_w1, d_hyper_b1, d_hyper_w2, d_hyper_b2;

  static MixerGrads zeros_like(const Mixer& m);
  void add(const MixerGrads& other);
  void flatten(Vec& out) const;  // hypernet part only, Mixer order
};

double mix_forward(const Mixer& m, std::span<const double> q,
                   std::span<const double> state);

// Accumulates upstream * dQ_tot/d(params) into `into` and returns the
// forward value. d_q is overwritten, not accumulated.
double mix_forward_backward(const Mixer& m, std::span<const double> q,
                            std::span<const double> state, double upstream,
                            MixerGrads& into);

struct MixerOptimizer {
  OptimizerState w1, b1, w2, b2;
  static MixerOptimizer make(OptimizerKind kind, double alpha, const Mixer& m);
};

void apply_update(Mixer& m, const MixerGrads& grads, MixerOptimizer& opt);

void write_mixer(std::ostream& os, const Mixer& m);
Mixer read_mixer(std::istream& is);

}  // namespace marl
