#include <doctest.h>

#include <cmath>
#include <numeric>

#include "biembed/encoder.hpp"
#include "biembed/gradcheck.hpp"
#include "biembed/optim.hpp"
#include "biembed/rng.hpp"
#include "oracles.hpp"

using namespace biembed;

namespace {

// Random unit rows packed into a flat vector.
std::vector<double> random_unit_rows(std::size_t rows, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> out(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      out[i * d + c] = rng.next_uniform(-1.0, 1.0);
      norm += out[i * d + c] * out[i * d + c];
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] /= norm;
  }
  return out;
}

double naive_mnrl(const std::vector<double>& u, const std::vector<double>& v, std::size_t b,
                  std::size_t d, double scale_factor, bool symmetric) {
  std::vector<double> s(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += u[i * d + c] * v[j * d + c];
      s[i * b + j] = scale_factor * dot;
    }
  }
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  double loss = oracle::naive_softmax_cross_entropy(s, diag, b, b);
  if (symmetric) {
    std::vector<double> st(b * b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) st[j * b + i] = s[i * b + j];
    }
    loss = 0.5 * (loss + oracle::naive_softmax_cross_entropy(st, diag, b, b));
  }
  return loss;
}

}  // namespace

TEST_CASE("mnrl_loss equals ln B when all rows are identical") {
  for (std::size_t b : {std::size_t{2}, std::size_t{4}, std::size_t{32}}) {
    Graph g;
    std::vector<double> rows(b * 4);
    const double unit[4] = {0.5, -0.5, 0.5, -0.5};
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t c = 0; c < 4; ++c) rows[i * 4 + c] = unit[c];
    }
    Tensor u = g.constant({b, 4}, rows);
    Tensor v = g.constant({b, 4}, rows);
    CHECK(mnrl_loss(u, v).item() ==
          doctest::Approx(std::log(static_cast<double>(b))).epsilon(1e-12));
  }
}

TEST_CASE("mnrl_loss is zero for a single pair") {
  Graph g;
  Tensor u = g.constant({1, 2}, {1.0, 0.0});
  Tensor v = g.constant({1, 2}, {0.0, 1.0});
  CHECK(mnrl_loss(u, v).item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("mnrl_loss matches the naive oracle on random batches") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 4;
    const std::size_t d = 3 + trial % 5;
    const auto uv = random_unit_rows(b, d, 100 + trial);
    const auto vv = random_unit_rows(b, d, 200 + trial);
    const bool symmetric = trial % 2 == 0;
    Graph g;
    MnrlConfig cfg;
    cfg.scale = 20.0;
    cfg.symmetric = symmetric;
    const double mine = mnrl_loss(g.constant({b, d}, uv), g.constant({b, d}, vv), cfg).item();
    const double expect = naive_mnrl(uv, vv, b, d, 20.0, symmetric);
    CHECK(mine == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("mnrl_loss rejects malformed input") {
  Graph g;
  Tensor u = g.constant({2, 2}, {1, 0, 0, 1});
  Tensor bad_norm = g.constant({2, 2}, {2, 0, 0, 1});
  CHECK_THROWS_AS(mnrl_loss(u, bad_norm), std::invalid_argument);
  Tensor wrong_shape = g.constant({1, 2}, {1, 0});
  CHECK_THROWS_AS(mnrl_loss(u, wrong_shape), std::invalid_argument);
}

TEST_CASE("mnrl_loss properties: nonnegative, sensitive to the diagonal, symmetric") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.next_index(3);
    const auto uv = random_unit_rows(b, 6, 300 + static_cast<std::uint64_t>(trial));
    const auto vv = random_unit_rows(b, 6, 400 + static_cast<std::uint64_t>(trial));
    Graph g;
    const double loss = mnrl_loss(g.constant({b, 6}, uv), g.constant({b, 6}, vv)).item();
    CHECK(loss >= 0.0);
    // swapping (U,V) leaves the symmetric loss unchanged
    Graph g2;
    const double swapped = mnrl_loss(g2.constant({b, 6}, vv), g2.constant({b, 6}, uv)).item();
    CHECK(loss == doctest::Approx(swapped).epsilon(1e-12));
  }
  // Moving one diagonal similarity up with everything else fixed strictly
  // decreases the loss. u0 rotates in the (e0, e5) plane while every v row
  // lies in span(e0, e2, e4), so only S[0,0] = cos(angle) changes.
  auto build = [&](double angle) {
    std::vector<double> uu(3 * 6, 0.0), vv(3 * 6, 0.0);
    uu[0 * 6 + 0] = std::cos(angle);
    uu[0 * 6 + 5] = std::sin(angle);
    uu[1 * 6 + 2] = 1.0;
    uu[2 * 6 + 4] = 1.0;
    vv[0 * 6 + 0] = 1.0;
    vv[1 * 6 + 2] = 1.0;
    vv[2 * 6 + 4] = 1.0;
    Graph g;
    return mnrl_loss(g.constant({3, 6}, uu), g.constant({3, 6}, vv)).item();
  };
  CHECK(build(0.1) < build(0.4));
}

TEST_CASE("mnrl_loss gradient passes the finite-difference check") {
  for (std::uint64_t pt = 0; pt < 5; ++pt) {
    const std::size_t b = 2 + pt % 3;  // B <= 4
    const std::size_t d = 4 + pt % 5;  // d <= 8
    const auto vv = random_unit_rows(b, d, 700 + pt);
    // Differentiate through raw (unnormalized) parameters so the probe points
    // stay valid unit rows after l2_normalize_rows.
    auto builder = [&, b, d](Graph& g, const Tensor& x) {
      Tensor u = l2_normalize_rows(reshape(x, {b, d}));
      Tensor v = l2_normalize_rows(g.constant({b, d}, vv));
      MnrlConfig cfg;
      cfg.scale = 7.0;
      return mnrl_loss(u, v, cfg);
    };
    SplitMix64 rng(800 + pt);
    std::vector<double> x0(b * d);
    for (double& x : x0) x = rng.next_uniform(-1.0, 1.0);
    CHECK(grad_check(builder, x0) < 1e-4);
  }
}

TEST_CASE("adamw first step has the analytic magnitude") {
  ParamRegistry reg;
  reg.add("w", {2, 2});
  auto& w = reg.at("w");
  w.values = {1.0, -2.0, 3.0, 0.5};
  const std::vector<double> initial = w.values;

  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamState state(reg, cfg);
  GradMap grads{{"w", {0.3, -0.7, 0.001, 2.0}}};
  state.step(reg, grads);
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = grads.at("w")[i];
    const double expected_delta = -cfg.lr * g / (std::fabs(g) + cfg.eps);
    CHECK(w.values[i] - initial[i] == doctest::Approx(expected_delta).epsilon(1e-12));
  }
}

TEST_CASE("adamw zero gradient leaves parameters unchanged") {
  ParamRegistry reg;
  reg.add("w", {3});
  reg.at("w").values = {1.0, 2.0, 3.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamState state(reg, cfg);
  state.step(reg, GradMap{{"w", {0.0, 0.0, 0.0}}});
  CHECK(reg.at("w").values == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("adamw matches the scalar reference over 100 steps to 1e-12") {
  ParamRegistry reg;
  reg.add("w", {1});
  reg.at("w").values = {0.8};
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamState state(reg, cfg);

  oracle::ScalarAdam ref;
  ref.lr = 0.1;
  double theta = 0.8;

  SplitMix64 rng(17);
  for (int step = 0; step < 100; ++step) {
    // Includes the two-step g = 1 then g = -1 pattern plus random continuation.
    const double g = step == 0 ? 1.0 : (step == 1 ? -1.0 : rng.next_uniform(-2.0, 2.0));
    theta = ref.step(theta, g);
    state.step(reg, GradMap{{"w", {g}}});
    CHECK(reg.at("w").values[0] == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("weight decay only touches matrices") {
  ParamRegistry reg;
  reg.add("weights", {2, 2});
  reg.add("ln.gain", {2});
  reg.add("ln.bias", {2});
  reg.at("weights").values = {1.0, 1.0, 1.0, 1.0};
  reg.at("ln.gain").values = {1.0, 1.0};
  reg.at("ln.bias").values = {0.5, 0.5};

  CHECK(AdamState::decays(reg.at("weights")));
  CHECK_FALSE(AdamState::decays(reg.at("ln.gain")));
  CHECK_FALSE(AdamState::decays(reg.at("ln.bias")));

  AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.5;
  AdamState state(reg, cfg);
  GradMap grads{{"weights", {0, 0, 0, 0}}, {"ln.gain", {0, 0}}, {"ln.bias", {0, 0}}};
  state.step(reg, grads);
  // Zero gradient: only the decoupled decay moves anything, and only matrices.
  CHECK(reg.at("weights").values[0] == doctest::Approx(1.0 - 0.05 * 0.5).epsilon(1e-15));
  CHECK(reg.at("ln.gain").values[0] == 1.0);
  CHECK(reg.at("ln.bias").values[0] == 0.5);
}

TEST_CASE("coupled decay mode folds the decay into the gradient") {
  ParamRegistry reg;
  reg.add("w", {1, 1});
  reg.at("w").values = {2.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.decoupled_decay = false;
  AdamState state(reg, cfg);
  state.step(reg, GradMap{{"w", {0.0}}});
  // Effective gradient 0.01*2; first Adam step is -lr * sign within eps.
  const double g = 0.01 * 2.0;
  CHECK(reg.at("w").values[0] ==
        doctest::Approx(2.0 - 0.1 * g / (g + cfg.eps)).epsilon(1e-12));
}

TEST_CASE("adamw aborts on non-finite gradients naming the parameter") {
  ParamRegistry reg;
  reg.add("alpha", {2});
  reg.add("beta", {2});
  reg.at("alpha").values = {1.0, 1.0};
  reg.at("beta").values = {1.0, 1.0};
  AdamState state(reg, AdamConfig{});
  GradMap grads{{"alpha", {0.1, 0.1}},
                {"beta", {std::numeric_limits<double>::quiet_NaN(), 0.0}}};
  CHECK_THROWS_WITH_AS(state.step(reg, grads), doctest::Contains("beta"), std::runtime_error);
  // Nothing was mutated and the step counter did not advance.
  CHECK(reg.at("alpha").values == std::vector<double>{1.0, 1.0});
  CHECK(state.t() == 0);

  GradMap unknown{{"gamma", {0.0}}};
  CHECK_THROWS_AS(state.step(reg, unknown), std::invalid_argument);
}

TEST_CASE("cosine_similarity basics") {
  const std::vector<double> a = {1.0, 1.0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}) ==
        doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 0.0}) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  const std::vector<double> zero = {0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(zero, zero), std::domain_error);
}

TEST_CASE("tiny encoder plus mnrl passes the composed gradient check") {
  EncoderConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.max_len = 8;
  cfg.seed = 12;
  const EncoderParams params = init_params(cfg);

  TokenizedBatch side_a;
  side_a.batch = 2;
  side_a.time = 3;
  side_a.ids = {2, 3, 0, 4, 5, 3};
  side_a.mask = {1, 1, 0, 1, 1, 1};
  TokenizedBatch side_b;
  side_b.batch = 2;
  side_b.time = 3;
  side_b.ids = {5, 2, 0, 3, 3, 0};
  side_b.mask = {1, 1, 0, 1, 1, 0};

  // Flatten every parameter into one vector; the builder slices the flat leaf
  // back into registry-shaped leaves and runs the real encoder forward, so
  // finite differences probe the full composition.
  std::vector<double> flat;
  for (const NamedTensor& t : params.registry.items()) {
    flat.insert(flat.end(), t.values.begin(), t.values.end());
  }
  auto builder = [&](Graph& g, const Tensor& x) {
    Tensor flat2d = reshape(x, {1, x.numel()});
    std::vector<Tensor> leaves;
    std::size_t offset = 0;
    for (const NamedTensor& t : params.registry.items()) {
      const std::size_t count = shape_numel(t.shape);
      leaves.push_back(reshape(slice_cols(flat2d, offset, offset + count), t.shape));
      offset += count;
    }
    EncoderGraph eg(g, cfg, std::move(leaves));
    Tensor u = eg.encode(side_a);
    Tensor v = eg.encode(side_b);
    MnrlConfig mnrl;
    mnrl.scale = 5.0;
    return mnrl_loss(u, v, mnrl);
  };
  CHECK(grad_check(builder, flat) < 1e-3);
}

TEST_CASE("linear warmup scales the first steps") {
  ParamRegistry reg;
  reg.add("w", {1});
  reg.at("w").values = {1.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup_steps = 4;
  AdamState state(reg, cfg);
  state.step(reg, GradMap{{"w", {1.0}}});
  // step 1 of 4: effective lr = 0.025, first-step magnitude lr*|g|/(|g|+eps)
  const double delta = 1.0 - reg.at("w").values[0];
  CHECK(delta == doctest::Approx(0.025 * 1.0 / (1.0 + cfg.eps)).epsilon(1e-12));
}
