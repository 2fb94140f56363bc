#pragma once

#include <cstddef>
#include <optional>
#include <variant>
#include <vector>

#include "distfl/rng.hpp"
#include "distfl/tensor.hpp"

namespace distfl {

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
};

struct BatchNormLayer {
  Tensor gamma;         // scaling factor, [c]
  Tensor beta;          // [c]
  Tensor running_mean;  // [c]
  Tensor running_var;   // [c], nonnegative
  double eps = 1e-5;
  double momentum = 0.1;

  std::size_t channels() const { return gamma.numel(); }
};

struct ReluLayer {};

using Layer = std::variant<LinearLayer, BatchNormLayer, ReluLayer>;

// A small sequential network: Linear / BatchNorm / ReLU layers ending in a
// Linear head whose width equals num_classes. At least one BatchNorm layer
// is required; the statistics it carries drive knowledge extraction.
struct ModelParams {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Layer> layers;

  void validate() const;
  std::size_t bn_layer_count() const;
};

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int local_epochs = 5;
  std::size_t batch_size = 16;

  void validate() const;
};

// One tensor per trainable parameter, in model traversal order
// (Linear: weight, bias; BatchNorm: gamma, beta). Running statistics are
// not trainable and never appear here.
struct GradientSet {
  std::vector<Tensor> tensors;
  std::optional<Tensor> input_grad;

  static GradientSet zeros_like(const ModelParams& model);
};

// Input(d) -> [Linear -> BatchNorm -> ReLU] x L -> Linear(C).
ModelParams make_mlp_bn(std::size_t input_dim,
                        const std::vector<std::size_t>& hidden,
                        std::size_t num_classes, RngStream& rng);

// Trainable parameters in fixed traversal order.
std::vector<Tensor*> trainable_tensors(ModelParams& model);
std::vector<const Tensor*> trainable_tensors(const ModelParams& model);

// Trainables plus BatchNorm running statistics; the full averaged state.
std::vector<Tensor*> state_tensors(ModelParams& model);
std::vector<const Tensor*> state_tensors(const ModelParams& model);

}  // namespace distfl
