#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dsekit/losses.hpp"
#include "dsekit/rng.hpp"
#include "dsekit/uov.hpp"

using namespace dsekit;

TEST_SUITE_BEGIN("losses");

namespace {

// Test-local scalar evaluation of the loss definitions, independent of the
// library path. These are the frozen oracles for the worked examples.
double ref_bce(double u, double q) {
  u = std::clamp(u, 1e-7, 1.0 - 1e-7);
  return -q * std::log(u) - (1.0 - q) * std::log(1.0 - u);
}

double ref_unification(const std::vector<double>& u, const std::vector<double>& q, double alpha,
                       double gamma) {
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i)
    s += q[i] > 0 ? alpha * std::pow(std::abs(q[i] - u[i]), gamma) * ref_bce(u[i], q[i])
                  : (1 - alpha) * std::pow(u[i], gamma) * ref_bce(u[i], q[i]);
  return s;
}

Tensor rand_unit_latents(int b, int d, std::uint64_t seed) {
  Tensor t({b, d});
  SplitMix64 rng(seed);
  for (int i = 0; i < b; ++i) {
    double sq = 0;
    for (int j = 0; j < d; ++j) {
      t.at(i, j) = rng.next_double(-1, 1);
      sq += t.at(i, j) * t.at(i, j);
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (int j = 0; j < d; ++j) t.at(i, j) *= inv;
  }
  return t;
}

}  // namespace

TEST_CASE("bce worked values") {
  const double ln2 = 0.6931471805599453;
  CHECK(std::abs(bce(0.5, 1.0) - ln2) <= 1e-12);
  CHECK(std::abs(bce(0.5, 0.5) - ln2) <= 1e-12);
  CHECK(bce(0.5, 1.0) == ref_bce(0.5, 1.0));
}

TEST_CASE("bce(., q) is minimized at u = q") {
  for (double q : {0.1, 0.37, 0.6, 0.9}) {
    const double at_q = bce(q, q);
    for (int i = 1; i < 200; ++i) {
      const double u = i / 200.0;
      if (std::abs(u - q) < 1e-9) continue;
      CHECK(bce(u, q) > at_q);
    }
  }
}

TEST_CASE("perf_l1") {
  CHECK(perf_l1(1.5, 1.0) == 0.5);
  CHECK(perf_l1(2.0, 2.0) == 0.0);

  // gradient is the sign of the difference (0 at equality)
  Tape tape;
  auto ph = tape.leaf(Tensor({3, 1}, {2.0, 0.5, 1.0}));
  Tensor target({3, 1});
  target[0] = 1.0;
  target[1] = 1.0;
  target[2] = 1.0;
  tape.backward(perf_l1_node(tape, ph, target));
  CHECK(tape.grad(ph)[0] == doctest::Approx(1.0 / 3));
  CHECK(tape.grad(ph)[1] == doctest::Approx(-1.0 / 3));
  CHECK(tape.grad(ph)[2] == 0.0);
}

TEST_CASE("unification loss worked example") {
  const UnificationConfig cfg;  // alpha 0.75, gamma 1
  const std::vector<double> q = {0.6, 0.0};
  const std::vector<double> u = {0.5, 0.2};
  const double expected = ref_unification(u, q, 0.75, 1.0);
  CHECK(std::abs(expected - 0.063143216107706386) <= 1e-12);  // frozen oracle value
  CHECK(std::abs(unification_loss(u, q, cfg) - expected) <= 1e-12);
}

TEST_CASE("unification loss vanishes in the exact-fit limit") {
  const UnificationConfig cfg;
  const BucketSpec spec = make_buckets(2, 128, 8);
  const OrdinalVector q = encode(37.0, spec);
  std::vector<double> u(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) u[i] = q[i] > 0 ? q[i] : 1e-12;
  CHECK(unification_loss(u, q, cfg) <= 1e-9);
  CHECK(unification_loss(u, q, cfg) >= 0.0);
}

TEST_CASE("gamma=0, alpha=0.5 reduces to plain bce sum") {
  UnificationConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 0.0;
  const std::vector<double> q = {0.6, 0.0, 0.3};
  const std::vector<double> u = {0.5, 0.2, 0.9};
  double expect = 0;
  for (std::size_t i = 0; i < q.size(); ++i) expect += 0.5 * ref_bce(u[i], q[i]);
  CHECK(unification_loss(u, q, cfg) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("positive-branch penalty grows with |q - u| at fixed bce") {
  // bce(0.5, q) = ln2 for every q, so the focal factor is isolated.
  const UnificationConfig cfg;
  double prev = -1;
  for (double q : {0.51, 0.6, 0.75, 0.9, 0.99}) {
    const double term = unification_loss({0.5}, {q}, cfg);
    CHECK(term > prev);
    prev = term;
  }
}

TEST_CASE("unification loss is finite on the clamped range") {
  SplitMix64 rng(7);
  const UnificationConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> u(8), q(8);
    for (std::size_t i = 0; i < 8; ++i) {
      u[i] = rng.next_double();              // [0,1)
      q[i] = rng.next_below(2) ? rng.next_double() : 0.0;
    }
    CHECK(std::isfinite(unification_loss(u, q, cfg)));
    CHECK(unification_loss(u, q, cfg) >= 0.0);
  }
}

TEST_CASE("unification length mismatch is a shape error") {
  CHECK_THROWS_AS(unification_loss({0.5}, {0.5, 0.1}, UnificationConfig{}), ContractError);
}

TEST_CASE("contrastive worked examples") {
  const ContrastiveConfig cfg;  // tau 0.4
  // anchor [1,0], positive [1,0], negative [0,1]
  const double expected = std::log1p(std::exp(-1.0 / cfg.tau * (1.0 - 0.0)));  // ln(1+e^-2.5)
  CHECK(std::abs(expected - 0.07888973429254777) <= 1e-12);  // frozen oracle value
  const double got =
      contrastive_loss({{1, 0}, {1, 0}, {0, 1}}, {0, 0, 1}, cfg);
  CHECK(std::abs(got - expected) <= 1e-9);

  // one positive and one negative at equal similarity: exactly ln 2
  // (orthogonal latents, so both valid anchors are symmetric)
  const double sym =
      contrastive_loss({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 0, 1}, cfg);
  CHECK(std::abs(sym - 0.6931471805599453) <= 1e-12);
}

TEST_CASE("contrastive all-same-class batch scores zero") {
  bool skipped = false;
  const double v = contrastive_loss({{1, 0}, {0, 1}, {1, 0}}, {4, 4, 4}, ContrastiveConfig{},
                                    &skipped);
  CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(skipped);
}

TEST_CASE("contrastive with no positives anywhere reports a skip") {
  bool skipped = false;
  const double v =
      contrastive_loss({{1, 0}, {0, 1}}, {0, 1}, ContrastiveConfig{}, &skipped);
  CHECK(v == 0.0);
  CHECK(skipped);
}

TEST_CASE("contrastive is invariant to a common batch permutation") {
  const int b = 12, d = 8;
  const Tensor lat = rand_unit_latents(b, d, 55);
  std::vector<std::vector<double>> rows;
  std::vector<int> classes;
  SplitMix64 rng(56);
  for (int i = 0; i < b; ++i) {
    rows.emplace_back(lat.data() + static_cast<std::size_t>(i) * d,
                      lat.data() + static_cast<std::size_t>(i + 1) * d);
    classes.push_back(static_cast<int>(rng.next_below(3)));
  }
  const double base = contrastive_loss(rows, classes, ContrastiveConfig{});

  std::vector<int> perm(b);
  for (int i = 0; i < b; ++i) perm[static_cast<std::size_t>(i)] = i;
  SplitMix64 prng(57);
  for (int i = b - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(prng.next_below(static_cast<std::uint64_t>(i) + 1))]);
  std::vector<std::vector<double>> prows(rows.size());
  std::vector<int> pclasses(classes.size());
  for (int i = 0; i < b; ++i) {
    prows[static_cast<std::size_t>(i)] = rows[static_cast<std::size_t>(perm[i])];
    pclasses[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(perm[i])];
  }
  CHECK(contrastive_loss(prows, pclasses, ContrastiveConfig{}) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("duplicating the anchor as a positive lowers its per-anchor loss") {
  std::vector<std::vector<double>> rows = {{1, 0}, {0.6, 0.8}, {0, 1}};
  std::vector<int> classes = {0, 0, 1};
  std::vector<double> per_anchor;
  contrastive_loss(rows, classes, ContrastiveConfig{}, nullptr, &per_anchor);
  const double before = per_anchor[0];

  rows.push_back(rows[0]);  // exact duplicate of the anchor, same class
  classes.push_back(0);
  contrastive_loss(rows, classes, ContrastiveConfig{}, nullptr, &per_anchor);
  CHECK(per_anchor[0] < before);
}

TEST_CASE("tape contrastive matches the scalar reference") {
  const int b = 10, d = 6;
  const Tensor lat = rand_unit_latents(b, d, 58);
  std::vector<std::vector<double>> rows;
  std::vector<int> classes;
  SplitMix64 rng(59);
  for (int i = 0; i < b; ++i) {
    rows.emplace_back(lat.data() + static_cast<std::size_t>(i) * d,
                      lat.data() + static_cast<std::size_t>(i + 1) * d);
    classes.push_back(static_cast<int>(rng.next_below(4)));
  }
  Tape tape;
  auto lv = tape.constant(lat);
  auto node = contrastive_loss_node(tape, lv, classes, ContrastiveConfig{});
  CHECK(tape.value(node)[0] ==
        doctest::Approx(contrastive_loss(rows, classes, ContrastiveConfig{})).epsilon(1e-12));
}

TEST_CASE("tape unification matches the scalar reference per sample") {
  const BucketSpec spec = make_buckets(2, 128, 8);
  SplitMix64 rng(60);
  const int b = 5;
  Tensor u({b, 8}), q({b, 8});
  double expect = 0;
  for (int i = 0; i < b; ++i) {
    const double d = std::exp(rng.next_double(std::log(2.0), std::log(128.0)));
    const OrdinalVector qi = encode(d, spec);
    std::vector<double> ui(8);
    for (int j = 0; j < 8; ++j) {
      ui[static_cast<std::size_t>(j)] = rng.next_double(0.05, 0.95);
      u.at(i, j) = ui[static_cast<std::size_t>(j)];
      q.at(i, j) = qi[static_cast<std::size_t>(j)];
    }
    expect += ref_unification(ui, qi, 0.75, 1.0);
  }
  expect /= b;
  Tape tape;
  auto un = unification_loss_node(tape, tape.constant(u), q, UnificationConfig{});
  CHECK(tape.value(un)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("contrastive gradient passes grad_check on batches of 8") {
  const int b = 8, d = 5;
  Tensor raw = rand_unit_latents(b, d, 61);
  std::vector<int> classes = {0, 1, 0, 2, 1, 0, 2, 1};
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    Tape tape;
    auto leaf = tape.leaf(raw);
    // normalize inside the graph so perturbed inputs stay on the sphere
    auto lam = tape.l2_normalize_rows(leaf);
    auto loss = contrastive_loss_node(tape, lam, classes, ContrastiveConfig{});
    const double v = tape.value(loss)[0];
    if (grads) {
      tape.backward(loss);
      *grads = {tape.grad(leaf)};
    }
    return v;
  };
  CHECK(grad_check(fn, {&raw}) <= 1e-5);
}

TEST_CASE("unification gradient passes grad_check") {
  const BucketSpec spec = make_buckets(2, 128, 8);
  Tensor q({4, 8});
  SplitMix64 rng(62);
  for (int i = 0; i < 4; ++i) {
    const OrdinalVector qi =
        encode(std::exp(rng.next_double(std::log(2.0), std::log(128.0))), spec);
    for (int j = 0; j < 8; ++j) q.at(i, j) = qi[static_cast<std::size_t>(j)];
  }
  Tensor z({4, 8});  // pre-sigmoid logits, so u stays inside (0,1)
  for (std::int64_t i = 0; i < z.size(); ++i)
    z[static_cast<std::size_t>(i)] = rng.next_double(-2, 2);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    Tape tape;
    auto leaf = tape.leaf(z);
    auto u = tape.sigmoid(leaf);
    auto loss = unification_loss_node(tape, u, q, UnificationConfig{});
    const double v = tape.value(loss)[0];
    if (grads) {
      tape.backward(loss);
      *grads = {tape.grad(leaf)};
    }
    return v;
  };
  CHECK(grad_check(fn, {&z}) <= 1e-5);
}

TEST_CASE("softmax cross-entropy sanity") {
  Tape tape;
  Tensor logits({2, 3});
  logits.at(0, 0) = 5;  // confident, correct
  logits.at(1, 2) = 5;  // confident, wrong label below
  auto node = softmax_xent_node(tape, tape.constant(logits), {0, 0});
  const double v = tape.value(node)[0];
  CHECK(v > 0);
  // first sample near 0 loss, second ~5 plus log-sum, averaged
  CHECK(v == doctest::Approx(0.5 * (std::log(1 + 2 * std::exp(-5.0)) +
                                    (5 + std::log(std::exp(-5.0) * 2 + 1))))
                 .epsilon(1e-9));
}

TEST_SUITE_END();
