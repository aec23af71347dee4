#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <sstream>

#include "marl/approx.hpp"
#include "marl/common.hpp"

using namespace marl;

namespace {

// Independent forward pass used as an oracle: one scalar accumulator
// per neuron, no batching, no caching. Kept deliberately dumber than
// the library implementation.
Vec naive_forward(const Mlp& net, const Vec& x) {
  Vec cur = x;
  for (size_t l = 0; l < net.n_layers(); ++l) {
    const int rows = net.sizes[l + 1];
    const int cols = net.sizes[l];
    Vec next(rows);
    for (int r = 0; r < rows; ++r) {
      double acc = net.biases[l][r];
      for (int c = 0; c < cols; ++c)
        acc += net.weights[l][static_cast<size_t>(r) * cols + c] * cur[c];
      const bool last = l + 1 == net.n_layers();
      if (last)
        next[r] = acc;
      else if (net.activation == Activation::tanh)
        next[r] = std::tanh(acc);
      else
        next[r] = acc > 0.0 ? acc : 0.0;
    }
    cur = std::move(next);
  }
  return cur;
}

double scalar_loss(const Mlp& net, const Vec& x, const Vec& upstream) {
  const Vec y = forward(net, x);
  double loss = 0.0;
  for (size_t j = 0; j < y.size(); ++j) loss += upstream[j] * y[j];
  return loss;
}

// Central finite differences of scalar_loss over the flattened params.
Vec fd_param_grads(Mlp net, const Vec& x, const Vec& upstream, double h) {
  Vec theta;
  net.flatten(theta);
  Vec out(theta.size());
  for (size_t k = 0; k < theta.size(); ++k) {
    Vec bumped = theta;
    bumped[k] = theta[k] + h;
    net.unflatten(bumped);
    const double hi = scalar_loss(net, x, upstream);
    bumped[k] = theta[k] - h;
    net.unflatten(bumped);
    const double lo = scalar_loss(net, x, upstream);
    out[k] = (hi - lo) / (2.0 * h);
  }
  net.unflatten(theta);
  return out;
}

Vec random_vec(Rng& rng, size_t n, double scale = 1.0) {
  Vec v(n);
  for (auto& e : v) e = rng.uniform(-scale, scale);
  return v;
}

bool bitwise_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool bitwise_equal(const Mlp& a, const Mlp& b) {
  if (a.sizes != b.sizes || a.activation != b.activation) return false;
  for (size_t l = 0; l < a.weights.size(); ++l) {
    if (!bitwise_equal(a.weights[l], b.weights[l])) return false;
    if (!bitwise_equal(a.biases[l], b.biases[l])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("forward matches an independent reimplementation") {
  const std::vector<std::vector<int>> shapes = {
      {2, 3}, {3, 4, 2}, {5, 8, 8, 3}, {4, 7, 1}, {1, 6, 6, 6, 2}};
  Rng rng(7);
  for (const auto& sizes : shapes) {
    for (Activation act : {Activation::tanh, Activation::relu}) {
      const Mlp net = init_params(sizes, rng.next_u64(), act);
      for (int trial = 0; trial < 5; ++trial) {
        const Vec x = random_vec(rng, sizes.front(), 2.0);
        const Vec got = forward(net, x);
        const Vec want = naive_forward(net, x);
        REQUIRE(got.size() == want.size());
        for (size_t j = 0; j < got.size(); ++j)
          CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("forward on a hand-built single neuron") {
  Mlp net = init_params({1, 1, 1}, 0);
  net.weights[0] = {2.0};
  net.biases[0] = {0.5};
  net.weights[1] = {3.0};
  net.biases[1] = {-1.0};

  const Vec y = forward(net, Vec{0.25});
  CHECK(y.size() == 1);
  CHECK(y[0] == doctest::Approx(3.0 * std::tanh(2.0 * 0.25 + 0.5) - 1.0)
                    .epsilon(1e-15));

  net.activation = Activation::relu;
  // Pre-activation 2*(-1)+0.5 = -1.5, clamped to zero by relu.
  const Vec z = forward(net, Vec{-1.0});
  CHECK(z[0] == -1.0);
}

TEST_CASE("forward rejects a wrong input length") {
  const Mlp net = init_params({3, 2}, 1);
  CHECK_THROWS_AS(forward(net, Vec{1.0, 2.0}), ShapeError);
}

TEST_CASE("backward matches central finite differences") {
  // Criterion for the analytic gradients: <= 1e-4 relative error against
  // h = 1e-5 central differences, over several shapes and both
  // activations. Relu inputs are nudged away from the kink.
  const std::vector<std::vector<int>> shapes = {
      {2, 3}, {3, 5, 2}, {4, 8, 8, 1}, {5, 4, 4, 4, 3}};
  Rng rng(11);
  const double h = 1e-5;
  for (const auto& sizes : shapes) {
    for (Activation act : {Activation::tanh, Activation::relu}) {
      const Mlp net = init_params(sizes, rng.next_u64(), act);
      const Vec x = random_vec(rng, sizes.front());
      const Vec upstream = random_vec(rng, sizes.back());

      const GradientSet grads = backward(net, x, upstream);
      Vec analytic;
      grads.flatten(analytic);
      const Vec fd = fd_param_grads(net, x, upstream, h);
      REQUIRE(analytic.size() == fd.size());
      for (size_t k = 0; k < fd.size(); ++k) {
        const double scale =
            std::max({1.0, std::fabs(analytic[k]), std::fabs(fd[k])});
        CHECK(std::fabs(analytic[k] - fd[k]) / scale <= 1e-4);
      }

      // d_input against finite differences over x.
      for (size_t i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd_x =
            (scalar_loss(net, xp, upstream) - scalar_loss(net, xm, upstream)) /
            (2.0 * h);
        const double scale =
            std::max({1.0, std::fabs(grads.d_input[i]), std::fabs(fd_x)});
        CHECK(std::fabs(grads.d_input[i] - fd_x) / scale <= 1e-4);
      }
    }
  }
}

TEST_CASE("zero upstream yields zero gradients") {
  Rng rng(3);
  const Mlp net = init_params({3, 6, 2}, rng.next_u64());
  const Vec x = random_vec(rng, 3);
  const GradientSet grads = backward(net, x, Vec{0.0, 0.0});
  Vec flat;
  grads.flatten(flat);
  for (double g : flat) CHECK(g == 0.0);
  for (double g : grads.d_input) CHECK(g == 0.0);
}

TEST_CASE("backward is linear in the upstream") {
  Rng rng(5);
  const Mlp net = init_params({4, 5, 3}, rng.next_u64());
  const Vec x = random_vec(rng, 4);
  const Vec u1 = random_vec(rng, 3);
  Vec u2 = random_vec(rng, 3);
  Vec u_sum(3);
  for (int j = 0; j < 3; ++j) u_sum[j] = u1[j] + u2[j];

  GradientSet g1 = backward(net, x, u1);
  const GradientSet g2 = backward(net, x, u2);
  const GradientSet gs = backward(net, x, u_sum);
  g1.add(g2);
  Vec a, b;
  g1.flatten(a);
  gs.flatten(b);
  for (size_t k = 0; k < a.size(); ++k)
    CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
}

TEST_CASE("tied input coordinates sum their gradients") {
  // f([t, t]) differentiated in t must equal d_input[0] + d_input[1].
  Rng rng(9);
  const Mlp net = init_params({2, 6, 1}, rng.next_u64());
  const double t = 0.37;
  const Vec upstream = {1.0};
  const GradientSet grads = backward(net, Vec{t, t}, upstream);

  const double h = 1e-6;
  const double fd = (scalar_loss(net, Vec{t + h, t + h}, upstream) -
                     scalar_loss(net, Vec{t - h, t - h}, upstream)) /
                    (2.0 * h);
  CHECK(grads.d_input[0] + grads.d_input[1] ==
        doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("cached backward and accumulation agree with the plain path") {
  Rng rng(13);
  const Mlp net = init_params({3, 4, 2}, rng.next_u64());
  const Vec x = random_vec(rng, 3);
  const Vec upstream = random_vec(rng, 2);

  ForwardCache cache;
  const Vec y_cached = forward(net, x, cache);
  CHECK(bitwise_equal(y_cached, forward(net, x)));

  const GradientSet plain = backward(net, x, upstream);
  const GradientSet cached = backward(net, cache, upstream);
  Vec a, b;
  plain.flatten(a);
  cached.flatten(b);
  CHECK(bitwise_equal(a, b));

  GradientSet acc = GradientSet::zeros_like(net);
  backward_accumulate(net, cache, upstream, acc);
  backward_accumulate(net, cache, upstream, acc);
  Vec doubled;
  acc.flatten(doubled);
  REQUIRE(doubled.size() == a.size());
  for (size_t k = 0; k < a.size(); ++k)
    CHECK(doubled[k] == doctest::Approx(2.0 * a[k]).epsilon(1e-12));
}

TEST_CASE("init_params is deterministic with zero biases and bounded weights") {
  const std::vector<int> sizes = {5, 7, 3};
  const Mlp a = init_params(sizes, 42);
  const Mlp b = init_params(sizes, 42);
  CHECK(bitwise_equal(a, b));

  const Mlp c = init_params(sizes, 43);
  CHECK_FALSE(bitwise_equal(a, c));

  for (size_t l = 0; l < a.n_layers(); ++l) {
    for (double bias : a.biases[l]) CHECK(bias == 0.0);
    const double bound =
        std::sqrt(6.0 / (a.sizes[l] + a.sizes[l + 1]));
    for (double w : a.weights[l]) CHECK(std::fabs(w) <= bound);
  }
}

TEST_CASE("flatten and unflatten round-trip") {
  Rng rng(17);
  Mlp net = init_params({2, 3, 2}, rng.next_u64());
  Vec theta;
  net.flatten(theta);
  CHECK(theta.size() == net.n_params());

  Vec replacement = random_vec(rng, theta.size());
  net.unflatten(replacement);
  Vec back;
  net.flatten(back);
  CHECK(bitwise_equal(back, replacement));
}

TEST_CASE("sgd step matches the spec example") {
  // theta = 1, g = 2, alpha = 0.1 -> 0.8.
  Mlp net = init_params({1, 1}, 0);
  net.weights[0] = {1.0};
  OptimizerState opt = OptimizerState::make(OptimizerKind::sgd, 0.1, net);
  GradientSet grads = GradientSet::zeros_like(net);
  grads.d_weights[0] = {2.0};
  apply_update(net, grads, opt);
  CHECK(net.weights[0][0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(net.biases[0][0] == 0.0);
}

TEST_CASE("adam first step moves by about alpha against the gradient sign") {
  Mlp net = init_params({1, 1}, 0);
  net.weights[0] = {0.5};
  const double alpha = 0.01;
  OptimizerState opt = OptimizerState::make(OptimizerKind::adam, alpha, net);
  GradientSet grads = GradientSet::zeros_like(net);
  grads.d_weights[0] = {1.0};
  apply_update(net, grads, opt);
  // Bias correction makes m_hat = g and v_hat = g^2 on step one, so the
  // update is alpha * g / (|g| + eps) ~= alpha * sign(g).
  CHECK(net.weights[0][0] == doctest::Approx(0.5 - alpha).epsilon(1e-6));
  CHECK(opt.step == 1);

  grads.d_weights[0] = {-1.0};
  net.weights[0] = {0.5};
  opt = OptimizerState::make(OptimizerKind::adam, alpha, net);
  apply_update(net, grads, opt);
  CHECK(net.weights[0][0] == doctest::Approx(0.5 + alpha).epsilon(1e-6));
}

TEST_CASE("zero gradients leave parameters bitwise unchanged") {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Mlp net = init_params({3, 4, 2}, 21);
    const Mlp before = net;
    OptimizerState opt = OptimizerState::make(kind, 0.05, net);
    const GradientSet zeros = GradientSet::zeros_like(net);
    apply_update(net, zeros, opt);
    apply_update(net, zeros, opt);
    CHECK(bitwise_equal(net, before));
  }
}

TEST_CASE("non-finite gradients raise NumericError naming the tensor") {
  Mlp net = init_params({2, 2}, 1);
  OptimizerState opt = OptimizerState::make(OptimizerKind::sgd, 0.1, net);
  GradientSet grads = GradientSet::zeros_like(net);
  grads.d_weights[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apply_update(net, grads, opt), NumericError);

  GradientSet inf_grads = GradientSet::zeros_like(net);
  inf_grads.d_biases[0][0] = std::numeric_limits<double>::infinity();
  bool cited_owner = false;
  try {
    inf_grads.check_finite("critic");
  } catch (const NumericError& e) {
    cited_owner = std::string(e.what()).find("critic") != std::string::npos;
  }
  CHECK(cited_owner);
}

TEST_CASE("mlp serialization round-trips bitwise") {
  Rng rng(31);
  Mlp net = init_params({3, 5, 2}, rng.next_u64(), Activation::relu);
  // Values with no short decimal form; hexfloat must keep every bit.
  net.weights[0][0] = 1.0 / 3.0;
  net.weights[0][1] = 5e-324;  // smallest subnormal
  net.biases[1][0] = -0.1;

  std::stringstream ss;
  write_mlp(ss, net);
  const Mlp back = read_mlp(ss);
  CHECK(bitwise_equal(back, net));
  CHECK(param_checksum(back) == param_checksum(net));
}

TEST_CASE("optimizer serialization keeps moments and step") {
  Mlp net = init_params({2, 3, 1}, 8);
  OptimizerState opt = OptimizerState::make(OptimizerKind::adam, 0.002, net);
  Rng rng(77);
  for (int it = 0; it < 3; ++it) {
    GradientSet grads = GradientSet::zeros_like(net);
    for (auto& layer : grads.d_weights)
      for (auto& g : layer) g = rng.uniform(-1.0, 1.0);
    apply_update(net, grads, opt);
  }

  std::stringstream ss;
  write_optimizer(ss, opt);
  const OptimizerState back = read_optimizer(ss);
  CHECK(back.kind == opt.kind);
  CHECK(back.alpha == opt.alpha);
  CHECK(back.step == opt.step);
  REQUIRE(back.m_weights.size() == opt.m_weights.size());
  for (size_t l = 0; l < opt.m_weights.size(); ++l) {
    CHECK(bitwise_equal(back.m_weights[l], opt.m_weights[l]));
    CHECK(bitwise_equal(back.v_weights[l], opt.v_weights[l]));
    CHECK(bitwise_equal(back.m_biases[l], opt.m_biases[l]));
    CHECK(bitwise_equal(back.v_biases[l], opt.v_biases[l]));
  }
}

TEST_CASE("param_checksum reacts to single-parameter changes") {
  Mlp net = init_params({4, 4, 2}, 55);
  const uint64_t base = param_checksum(net);
  CHECK(param_checksum(net) == base);  // stable

  Mlp tweaked = net;
  tweaked.weights[1][3] += 1e-12;
  CHECK(param_checksum(tweaked) != base);
}

TEST_CASE("tabular lookup defaults to zeros and values inserts") {
  Tabular tab;
  tab.n_actions = 3;
  const Vec empty = tab.lookup("unseen");
  REQUIRE(empty.size() == 3);
  for (double v : empty) CHECK(v == 0.0);
  CHECK(tab.table.empty());  // lookup must not insert

  Vec& row = tab.values("s0");
  REQUIRE(row.size() == 3);
  row[1] = 4.5;
  CHECK(tab.lookup("s0")[1] == 4.5);
  CHECK(tab.table.size() == 1);
}

TEST_CASE("discretize_key rounds to six decimals") {
  const std::string a = discretize_key(Vec{0.1234561, -2.0});
  const std::string b = discretize_key(Vec{0.1234563, -2.0});
  const std::string c = discretize_key(Vec{0.1234571, -2.0});
  CHECK(a == b);
  CHECK(a != c);
  CHECK(discretize_key(Vec{1.0}) == discretize_key(Vec{1.0000001}));
  CHECK(discretize_key(Vec{1.0, 2.0}) != discretize_key(Vec{1.0}));
}
