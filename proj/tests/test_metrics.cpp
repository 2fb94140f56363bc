#include <doctest.h>

#include <cmath>
#include <vector>

#include "distfl/metrics.hpp"
#include "distfl/nn.hpp"
#include "distfl/rng.hpp"

using namespace distfl;

namespace {

// Model whose logits are bias-only: prediction is the same class everywhere.
ModelParams constant_model(std::size_t d, std::size_t c, int winner) {
  ModelParams m;
  m.input_dim = d;
  m.num_classes = c;
  BatchNormLayer bn;
  bn.gamma = Tensor::zeros({d});  // kills the features entirely
  bn.beta = Tensor::zeros({d});
  bn.running_mean = Tensor::zeros({d});
  bn.running_var = Tensor::full({d}, 1.0);
  m.layers.emplace_back(std::move(bn));
  LinearLayer head;
  head.weight = Tensor::zeros({c, d});
  head.bias = Tensor::zeros({c});
  head.bias[static_cast<std::size_t>(winner)] = 5.0;
  m.layers.emplace_back(std::move(head));
  m.validate();
  return m;
}

// Predicts class 1 when the first feature is positive, class 0 otherwise
// (ties resolve to the lower index).
ModelParams sign_model(std::size_t d, std::size_t c) {
  ModelParams m;
  m.input_dim = d;
  m.num_classes = c;
  BatchNormLayer bn;
  bn.gamma = Tensor::full({d}, 1.0);
  bn.beta = Tensor::zeros({d});
  bn.running_mean = Tensor::zeros({d});
  bn.running_var = Tensor::full({d}, 1.0);
  m.layers.emplace_back(std::move(bn));
  LinearLayer head;
  head.weight = Tensor::zeros({c, d});
  head.bias = Tensor::zeros({c});
  head.weight.at(1, 0) = 1.0;
  m.layers.emplace_back(std::move(head));
  m.validate();
  return m;
}

ClientShard shard_with(std::vector<double> first_feature, std::vector<int> labels) {
  ClientShard shard;
  const std::size_t n = labels.size();
  shard.features = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) shard.features.at(i, 0) = first_feature[i];
  shard.labels = std::move(labels);
  return shard;
}

}  // namespace

TEST_CASE("accuracy of a constant predictor") {
  const ModelParams m = constant_model(2, 3, 0);
  const ClientShard all_zero = shard_with({1, -1, 2, 0}, {0, 0, 0, 0});
  CHECK(accuracy(m, all_zero) == 1.0);
  const ClientShard half = shard_with({1, -1, 2, 0}, {0, 1, 0, 1});
  CHECK(accuracy(m, half) == 0.5);
}

TEST_CASE("accuracy matches a per-sample argmax oracle") {
  RngStream rng(3, 1);
  const ModelParams m = make_mlp_bn(4, {6}, 3, rng);
  ClientShard test;
  test.features = Tensor::zeros({40, 4});
  for (double& v : test.features.data) v = rng.normal();
  for (std::size_t i = 0; i < 40; ++i) {
    test.labels.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  const ForwardResult r =
      forward(static_cast<const ModelParams&>(m), test.features, ForwardMode::eval);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 3; ++j) {
      if (r.logits.at(i, j) > r.logits.at(i, best)) best = j;
    }
    if (static_cast<int>(best) == test.labels[i]) ++correct;
  }
  CHECK(accuracy(m, test) ==
        doctest::Approx(static_cast<double>(correct) / 40.0).epsilon(1e-12));
}

TEST_CASE("accuracy frequencies are exact sample counts") {
  const ModelParams m = constant_model(2, 3, 1);
  const ClientShard test = shard_with({0, 0, 0, 0, 0, 0, 0}, {1, 1, 0, 2, 1, 0, 1});
  const double acc = accuracy(m, test);
  const double scaled = acc * 7.0;
  CHECK(std::abs(scaled - std::round(scaled)) < 1e-9);
}

TEST_CASE("attack success rate on constructed predictors") {
  MetricsConfig cfg;
  cfg.asr_source_classes = {0};
  cfg.asr_target_map = {{0, 1}};

  SUBCASE("always predicts the target") {
    const ModelParams m = constant_model(2, 3, 1);
    const ClientShard test = shard_with({0, 0, 0, 1}, {0, 0, 0, 2});
    CHECK(attack_success_rate(m, test, cfg) == 1.0);
  }

  SUBCASE("never predicts the target") {
    const ModelParams m = constant_model(2, 3, 2);
    const ClientShard test = shard_with({0, 0, 0}, {0, 0, 0});
    CHECK(attack_success_rate(m, test, cfg) == 0.0);
  }

  SUBCASE("exactly half the source samples perturbed") {
    const ModelParams m = sign_model(2, 3);
    // Four class-0 samples: two on the positive side (predicted 1 = target),
    // two on the negative side (predicted 0).
    const ClientShard test = shard_with({1.0, 2.0, -1.0, -2.0}, {0, 0, 0, 0});
    CHECK(attack_success_rate(m, test, cfg) == 0.5);
  }

  SUBCASE("averaged over source classes") {
    MetricsConfig two;
    two.asr_source_classes = {0, 2};
    two.asr_target_map = {{0, 1}, {2, 1}};
    const ModelParams m = sign_model(2, 3);
    // Class 0: one hit of two. Class 2: two hits of two. Mean 0.75.
    const ClientShard test = shard_with({1.0, -1.0, 0.5, 2.0}, {0, 0, 2, 2});
    CHECK(attack_success_rate(m, test, two) == 0.75);
  }

  SUBCASE("missing source class is an error") {
    const ModelParams m = constant_model(2, 3, 1);
    const ClientShard test = shard_with({0, 0}, {1, 2});
    CHECK_THROWS_AS(attack_success_rate(m, test, cfg), std::invalid_argument);
  }
}

TEST_CASE("adjusted rand index basics") {
  CHECK(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == 1.0);
  CHECK(adjusted_rand_index({0, 1, 2, 3}, {0, 1, 2, 3}) == 1.0);
  // Trivial all-in-one prediction against balanced truth scores zero.
  CHECK(adjusted_rand_index({0, 0, 0, 0}, {0, 0, 1, 1}) == doctest::Approx(0.0));
}

TEST_CASE("adjusted rand index matches brute-force pair counting") {
  RngStream rng(5, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(12);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.uniform_index(4));
      b[i] = static_cast<int>(rng.uniform_index(4));
    }
    // Pair-counting oracle.
    double n11 = 0, n00 = 0, n10 = 0, n01 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const bool same_a = a[i] == a[j];
        const bool same_b = b[i] == b[j];
        if (same_a && same_b) ++n11;
        else if (!same_a && !same_b) ++n00;
        else if (same_a) ++n10;
        else ++n01;
      }
    }
    const double total = n11 + n00 + n10 + n01;
    const double expected_index = (n11 + n10) * (n11 + n01) / total;
    const double max_index = ((n11 + n10) + (n11 + n01)) / 2.0;
    double oracle;
    if (max_index == expected_index) {
      oracle = (n10 == 0 && n01 == 0) ? 1.0 : 0.0;
    } else {
      oracle = (n11 - expected_index) / (max_index - expected_index);
    }
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("cluster recovery is label-permutation invariant and clamped") {
  ClusterAssignment a;
  a.clusters = {{0, 1}, {2, 3}};
  CHECK(cluster_recovery(a, {5, 5, 9, 9}) == 1.0);
  CHECK(cluster_recovery(a, {9, 9, 5, 5}) == 1.0);

  ClusterAssignment one;
  one.clusters = {{0, 1, 2, 3}};
  CHECK(cluster_recovery(one, {0, 0, 1, 1}) == 0.0);  // ARI <= 0 clamps to 0

  CHECK(partitions_equal(a, {7, 7, 3, 3}));
  CHECK_FALSE(partitions_equal(a, {7, 7, 7, 3}));
  CHECK_FALSE(partitions_equal(one, {0, 0, 1, 1}));
}

TEST_CASE("weight divergence summaries") {
  const ModelParams a = constant_model(2, 3, 0);
  CHECK_THROWS_AS(weight_divergence({a}), std::invalid_argument);

  const WeightDivergence same = weight_divergence({a, a});
  CHECK(same.mean == 0.0);
  CHECK(same.max == 0.0);

  // Two models differing in a single parameter by 3.
  ModelParams b = a;
  std::get<LinearLayer>(b.layers.back()).bias[0] += 3.0;
  const WeightDivergence d = weight_divergence({a, b});
  CHECK(d.mean == doctest::Approx(3.0));
  CHECK(d.max == doctest::Approx(3.0));

  // Running statistics are excluded from the distance.
  ModelParams c = a;
  std::get<BatchNormLayer>(c.layers.front()).running_mean[0] += 42.0;
  const WeightDivergence rs = weight_divergence({a, c});
  CHECK(rs.max == 0.0);
}
