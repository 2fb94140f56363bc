#include "distfl/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace distfl {

void ModelParams::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model: input_dim must be positive");
  if (num_classes == 0) throw std::invalid_argument("model: num_classes must be positive");
  if (layers.empty()) throw std::invalid_argument("model: no layers");

  std::size_t width = input_dim;
  std::size_t bn_layers = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->weight.shape.size() != 2 || lin->bias.shape.size() != 1) {
        throw std::invalid_argument("model: linear layer needs 2-D weight and 1-D bias");
      }
      if (lin->in_features() != width) {
        throw std::invalid_argument("model: linear input width mismatch at layer " +
                                    std::to_string(i));
      }
      if (lin->bias.numel() != lin->out_features()) {
        throw std::invalid_argument("model: linear bias length mismatch at layer " +
                                    std::to_string(i));
      }
      width = lin->out_features();
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const std::size_t c = bn->gamma.numel();
      if (c != width) {
        throw std::invalid_argument("model: batchnorm width mismatch at layer " +
                                    std::to_string(i));
      }
      if (bn->beta.numel() != c || bn->running_mean.numel() != c ||
          bn->running_var.numel() != c) {
        throw std::invalid_argument("model: batchnorm vector length mismatch at layer " +
                                    std::to_string(i));
      }
      for (double v : bn->running_var.data) {
        if (v < 0.0) throw std::invalid_argument("model: negative running variance");
      }
      if (!(bn->eps > 0.0) || !(bn->momentum > 0.0) || !(bn->momentum < 1.0)) {
        throw std::invalid_argument("model: batchnorm eps/momentum out of range");
      }
      ++bn_layers;
    }
  }
  if (bn_layers == 0) {
    throw std::invalid_argument("model: at least one batchnorm layer required");
  }
  const auto* head = std::get_if<LinearLayer>(&layers.back());
  if (head == nullptr || head->out_features() != num_classes) {
    throw std::invalid_argument("model: last layer must be linear with num_classes outputs");
  }
}

std::size_t ModelParams::bn_layer_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers) {
    if (std::holds_alternative<BatchNormLayer>(layer)) ++n;
  }
  return n;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (!(momentum >= 0.0) || !(momentum < 1.0)) {
    throw std::invalid_argument("train: momentum must be in [0, 1)");
  }
  if (local_epochs < 1) throw std::invalid_argument("train: local_epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
}

GradientSet GradientSet::zeros_like(const ModelParams& model) {
  GradientSet g;
  for (const Tensor* t : trainable_tensors(model)) {
    g.tensors.push_back(Tensor::zeros(t->shape));
  }
  return g;
}

ModelParams make_mlp_bn(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                        std::size_t num_classes, RngStream& rng) {
  ModelParams model;
  model.input_dim = input_dim;
  model.num_classes = num_classes;

  std::size_t width = input_dim;
  auto make_linear = [&rng](std::size_t in, std::size_t out) {
    LinearLayer lin;
    lin.weight = Tensor::zeros({out, in});
    lin.bias = Tensor::zeros({out});
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : lin.weight.data) w = scale * rng.normal();
    return lin;
  };

  for (std::size_t h : hidden) {
    model.layers.emplace_back(make_linear(width, h));
    BatchNormLayer bn;
    bn.gamma = Tensor::full({h}, 1.0);
    bn.beta = Tensor::zeros({h});
    bn.running_mean = Tensor::zeros({h});
    bn.running_var = Tensor::full({h}, 1.0);
    model.layers.emplace_back(std::move(bn));
    model.layers.emplace_back(ReluLayer{});
    width = h;
  }
  model.layers.emplace_back(make_linear(width, num_classes));
  model.validate();
  return model;
}

namespace {

template <typename Model, typename TensorPtr>
std::vector<TensorPtr> collect_tensors(Model& model, bool include_running) {
  std::vector<TensorPtr> out;
  for (auto& layer : model.layers) {
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      out.push_back(&lin->weight);
      out.push_back(&lin->bias);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      out.push_back(&bn->gamma);
      out.push_back(&bn->beta);
      if (include_running) {
        out.push_back(&bn->running_mean);
        out.push_back(&bn->running_var);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Tensor*> trainable_tensors(ModelParams& model) {
  return collect_tensors<ModelParams, Tensor*>(model, false);
}

std::vector<const Tensor*> trainable_tensors(const ModelParams& model) {
  return collect_tensors<const ModelParams, const Tensor*>(model, false);
}

std::vector<Tensor*> state_tensors(ModelParams& model) {
  return collect_tensors<ModelParams, Tensor*>(model, true);
}

std::vector<const Tensor*> state_tensors(const ModelParams& model) {
  return collect_tensors<const ModelParams, const Tensor*>(model, true);
}

}  // namespace distfl
