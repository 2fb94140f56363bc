#include <doctest.h>

#include <cmath>
#include <vector>

#include "distfl/checkpoint.hpp"
#include "distfl/gradcheck.hpp"
#include "distfl/model.hpp"
#include "distfl/nn.hpp"
#include "distfl/rng.hpp"

using namespace distfl;

namespace {

// [BatchNorm(d) -> Linear(d -> C)] with explicit values everywhere.
ModelParams bn_first_model(std::size_t d, std::size_t c, double eps = 1e-5) {
  ModelParams m;
  m.input_dim = d;
  m.num_classes = c;
  BatchNormLayer bn;
  bn.gamma = Tensor::full({d}, 1.0);
  bn.beta = Tensor::zeros({d});
  bn.running_mean = Tensor::zeros({d});
  bn.running_var = Tensor::full({d}, 1.0);
  bn.eps = eps;
  m.layers.emplace_back(std::move(bn));
  LinearLayer head;
  head.weight = Tensor::zeros({c, d});
  head.bias = Tensor::zeros({c});
  m.layers.emplace_back(std::move(head));
  m.validate();
  return m;
}

ModelParams random_model(std::uint64_t seed, std::size_t d = 4,
                         std::size_t c = 3) {
  RngStream rng(seed, 99);
  ModelParams m = make_mlp_bn(d, {6, 5}, c, rng);
  for (Layer& layer : m.layers) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      for (std::size_t j = 0; j < bn->channels(); ++j) {
        bn->gamma[j] = 0.5 + rng.uniform();
        bn->beta[j] = 0.3 * rng.normal();
        bn->running_mean[j] = 0.4 * rng.normal();
        bn->running_var[j] = 0.5 + rng.uniform();
      }
    }
  }
  return m;
}

Tensor random_batch(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  RngStream rng(seed, 77);
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("softmax of zero logits is uniform") {
  ModelParams m = bn_first_model(2, 4);
  const Tensor batch({1, 2}, {0.3, -0.7});
  const ForwardResult r = forward(static_cast<const ModelParams&>(m), batch,
                                  ForwardMode::eval);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(r.probs.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("eval batchnorm with unit statistics is the identity") {
  ModelParams m = bn_first_model(2, 2, 1e-12);
  // Identity head so the logits expose the batchnorm output directly.
  auto& head = std::get<LinearLayer>(m.layers.back());
  head.weight.at(0, 0) = 1.0;
  head.weight.at(1, 1) = 1.0;
  const Tensor batch({2, 2}, {0.5, -1.25, 2.0, 0.0});
  const ForwardResult r = forward(static_cast<const ModelParams&>(m), batch,
                                  ForwardMode::eval);
  for (std::size_t i = 0; i < batch.numel(); ++i) {
    CHECK(r.logits[i] == doctest::Approx(batch[i]).epsilon(1e-6));
  }
}

TEST_CASE("train-mode batch statistics use the population variance") {
  ModelParams m = bn_first_model(1, 2);
  const Tensor batch({2, 1}, {1.0, 3.0});
  const ForwardResult r = forward(m, batch, ForwardMode::train);
  REQUIRE(r.batch_stats.size() == 1);
  CHECK(r.batch_stats[0].mean[0] == doctest::Approx(2.0));
  CHECK(r.batch_stats[0].var[0] == doctest::Approx(1.0));
  // Exponential moving average with the default momentum 0.1.
  const auto& bn = std::get<BatchNormLayer>(m.layers[0]);
  CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("probe mode measures statistics without touching the model") {
  ModelParams m = random_model(5);
  const std::string before = model_to_json(m);
  const Tensor batch = random_batch(6, 5, 4);
  const ForwardResult r = forward(m, batch, ForwardMode::probe);
  CHECK(r.batch_stats.size() == m.bn_layer_count());
  CHECK(model_to_json(m) == before);
}

TEST_CASE("eval-mode forward is pure and bitwise repeatable") {
  ModelParams m = random_model(7);
  const std::string before = model_to_json(m);
  const Tensor batch = random_batch(8, 3, 4);
  const ForwardResult a = forward(static_cast<const ModelParams&>(m), batch,
                                  ForwardMode::eval);
  const ForwardResult b = forward(static_cast<const ModelParams&>(m), batch,
                                  ForwardMode::eval);
  CHECK(a.logits.data == b.logits.data);
  CHECK(a.probs.data == b.probs.data);
  CHECK(model_to_json(m) == before);
}

TEST_CASE("softmax rows land on the open simplex") {
  RngStream rng(11, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = Tensor::zeros({4, 6});
    for (double& v : logits.data) v = 5.0 * rng.normal();
    const Tensor probs = softmax_rows(logits);
    for (std::size_t n = 0; n < 4; ++n) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        const double p = probs.at(n, j);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("cross-entropy of uniform predictions is ln C") {
  ModelParams m = bn_first_model(2, 4);
  const Tensor batch({2, 2}, {0.1, 0.2, -0.3, 0.4});
  const std::vector<int> labels{0, 3};
  const LossGrads lg = loss_and_grads(m, batch, labels, false);
  CHECK(lg.loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("label out of range is rejected") {
  ModelParams m = bn_first_model(2, 2);
  const Tensor batch({2, 2}, {0.1, 0.2, -0.3, 0.4});
  CHECK_THROWS_AS(loss_and_grads(m, batch, {0, 2}, false), std::invalid_argument);
  CHECK_THROWS_AS(loss_and_grads(m, batch, {0, -1}, false), std::invalid_argument);
}

TEST_CASE("train mode requires two rows for batch statistics") {
  ModelParams m = bn_first_model(2, 2);
  const Tensor one_row({1, 2}, {0.1, 0.2});
  CHECK_THROWS_AS(forward(m, one_row, ForwardMode::train), std::invalid_argument);
  CHECK_NOTHROW(forward(m, one_row, ForwardMode::eval));
}

TEST_CASE("non-finite input is surfaced as an error") {
  ModelParams m = bn_first_model(2, 2);
  const Tensor bad({2, 2}, {0.1, std::numeric_limits<double>::infinity(), 0.0, 1.0});
  CHECK_THROWS_AS(forward(m, bad, ForwardMode::eval), std::runtime_error);
}

TEST_CASE("analytic gradients match central finite differences") {
  // Independent oracle: the checker only evaluates losses, never the
  // backward pass it verifies.
  const GradCheckReport report = run_gradient_checks(2024, 10, nullptr);
  CHECK(report.models_checked == 10);
  CHECK(report.max_param_rel_err < 1e-4);
  CHECK(report.max_input_rel_err < 1e-4);
  CHECK(report.max_bn_match_rel_err < 1e-4);
}

TEST_CASE("feature permutation permutes the gradients") {
  ModelParams m = random_model(13, 4, 3);
  const Tensor batch = random_batch(14, 6, 4);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const std::vector<std::size_t> perm{2, 0, 3, 1};

  ModelParams permuted = m;
  auto& lin = std::get<LinearLayer>(permuted.layers[0]);
  const auto& lin0 = std::get<LinearLayer>(m.layers[0]);
  for (std::size_t o = 0; o < lin.out_features(); ++o) {
    for (std::size_t i = 0; i < 4; ++i) {
      lin.weight.at(o, i) = lin0.weight.at(o, perm[i]);
    }
  }
  Tensor batch_p = batch;
  for (std::size_t n = 0; n < batch.rows(); ++n) {
    for (std::size_t i = 0; i < 4; ++i) {
      batch_p.at(n, i) = batch.at(n, perm[i]);
    }
  }

  const LossGrads a = loss_and_grads(m, batch, labels, true);
  const LossGrads b = loss_and_grads(permuted, batch_p, labels, true);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  // First-layer weight gradients follow the column permutation.
  for (std::size_t o = 0; o < lin.out_features(); ++o) {
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(b.grads.tensors[0].at(o, i) ==
            doctest::Approx(a.grads.tensors[0].at(o, perm[i])).epsilon(1e-10));
    }
  }
  // Input gradients follow the same permutation.
  for (std::size_t n = 0; n < batch.rows(); ++n) {
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(b.grads.input_grad->at(n, i) ==
            doctest::Approx(a.grads.input_grad->at(n, perm[i])).epsilon(1e-10));
    }
  }
}

TEST_CASE("statistics-matching loss vanishes exactly on matched batches") {
  ModelParams m = bn_first_model(2, 2);
  // Columns with mean 0 and population variance 1 exactly.
  const Tensor batch({2, 2}, {1.0, -1.0, -1.0, 1.0});
  const ChannelSelection sel = all_channels(m);
  CHECK(bn_match_loss(m, batch, sel) == 0.0);
  // Any statistics offset makes it positive.
  const Tensor off({2, 2}, {2.0, -1.0, 0.0, 1.0});
  CHECK(bn_match_loss(m, off, sel) > 0.0);
}

TEST_CASE("full selection reproduces the unselected objective") {
  ModelParams m = random_model(21);
  const Tensor batch = random_batch(22, 8, 4);
  ChannelSelection everything = all_channels(m);
  const double full = bn_match_loss(m, batch, everything);
  // Selecting 100% through the importance path must match to the bit.
  ChannelSelection sel;
  sel.per_layer = everything.per_layer;
  CHECK(bn_match_loss(m, batch, sel) == full);
}

TEST_CASE("statistics-matching rejects degenerate inputs") {
  ModelParams m = bn_first_model(2, 2);
  ChannelSelection empty;
  empty.per_layer = {{}};
  const Tensor batch({2, 2}, {1.0, -1.0, -1.0, 1.0});
  CHECK_THROWS_AS(bn_match_loss(m, batch, empty), std::invalid_argument);
  const Tensor one_row({1, 2}, {1.0, -1.0});
  CHECK_THROWS_AS(bn_match_loss(m, one_row, all_channels(m)), std::invalid_argument);
}

TEST_CASE("sgd step: plain gradient update") {
  ModelParams m = bn_first_model(1, 2);
  auto& head = std::get<LinearLayer>(m.layers.back());
  head.weight.at(0, 0) = 1.0;
  GradientSet g = GradientSet::zeros_like(m);
  GradientSet v = GradientSet::zeros_like(m);
  g.tensors[2].at(0, 0) = 2.0;  // head weight slot (bn gamma, beta come first)
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.momentum = 0.0;
  sgd_step(m, g, v, cfg);
  CHECK(head.weight.at(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("sgd step: zero gradient is a fixed point") {
  ModelParams m = random_model(31);
  const std::string before = model_to_json(m);
  GradientSet g = GradientSet::zeros_like(m);
  GradientSet v = GradientSet::zeros_like(m);
  TrainConfig cfg;
  sgd_step(m, g, v, cfg);
  CHECK(model_to_json(m) == before);
}

TEST_CASE("sgd step: hand-unrolled momentum recurrence") {
  // v1 = 0.9*0 + 1 = 1,   p1 = 0 - 1 = -1
  // v2 = 0.9*1 + 1 = 1.9, p2 = -1 - 1.9 = -2.9
  ModelParams m = bn_first_model(1, 2);
  GradientSet g = GradientSet::zeros_like(m);
  GradientSet v = GradientSet::zeros_like(m);
  g.tensors[2].at(0, 0) = 1.0;
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.momentum = 0.9;
  auto& head = std::get<LinearLayer>(m.layers.back());
  sgd_step(m, g, v, cfg);
  CHECK(head.weight.at(0, 0) == doctest::Approx(-1.0));
  sgd_step(m, g, v, cfg);
  CHECK(head.weight.at(0, 0) == doctest::Approx(-2.9));
}

TEST_CASE("sgd leaves running statistics alone") {
  ModelParams m = random_model(41);
  GradientSet g = GradientSet::zeros_like(m);
  for (Tensor& t : g.tensors) {
    for (double& x : t.data) x = 0.1;
  }
  GradientSet v = GradientSet::zeros_like(m);
  std::vector<double> before;
  for (const Layer& layer : m.layers) {
    if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      before.insert(before.end(), bn->running_mean.data.begin(), bn->running_mean.data.end());
      before.insert(before.end(), bn->running_var.data.begin(), bn->running_var.data.end());
    }
  }
  TrainConfig cfg;
  sgd_step(m, g, v, cfg);
  std::vector<double> after;
  for (const Layer& layer : m.layers) {
    if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      after.insert(after.end(), bn->running_mean.data.begin(), bn->running_mean.data.end());
      after.insert(after.end(), bn->running_var.data.begin(), bn->running_var.data.end());
    }
  }
  CHECK(before == after);
}

TEST_CASE("running statistics follow the moving-average identity") {
  ModelParams m = random_model(51);
  const Tensor batch = random_batch(52, 6, 4);
  std::vector<double> prior_mean;
  std::vector<double> prior_var;
  for (const Layer& layer : m.layers) {
    if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      prior_mean.insert(prior_mean.end(), bn->running_mean.data.begin(),
                        bn->running_mean.data.end());
      prior_var.insert(prior_var.end(), bn->running_var.data.begin(),
                       bn->running_var.data.end());
    }
  }
  const ForwardResult r = forward(m, batch, ForwardMode::train);
  std::size_t k = 0;
  std::size_t idx = 0;
  for (const Layer& layer : m.layers) {
    if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      for (std::size_t j = 0; j < bn->channels(); ++j, ++idx) {
        CHECK(bn->running_mean[j] ==
              doctest::Approx((1.0 - bn->momentum) * prior_mean[idx] +
                              bn->momentum * r.batch_stats[k].mean[j])
                  .epsilon(1e-14));
        CHECK(bn->running_var[j] ==
              doctest::Approx((1.0 - bn->momentum) * prior_var[idx] +
                              bn->momentum * r.batch_stats[k].var[j])
                  .epsilon(1e-14));
      }
      ++k;
    }
  }
}

TEST_CASE("checkpoint text round-trips bit-for-bit") {
  ModelParams m = random_model(61);
  const std::string text = model_to_json(m);
  const ModelParams back = model_from_json(text);
  CHECK(model_to_json(back) == text);
  CHECK(model_hash(back) == model_hash(m));
}

TEST_CASE("model validation catches structural mistakes") {
  ModelParams m;
  m.input_dim = 2;
  m.num_classes = 2;
  LinearLayer head;
  head.weight = Tensor::zeros({2, 2});
  head.bias = Tensor::zeros({2});
  m.layers.emplace_back(std::move(head));
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // no batchnorm

  ModelParams bad = bn_first_model(3, 2);
  std::get<LinearLayer>(bad.layers.back()).weight = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);  // width mismatch
}
