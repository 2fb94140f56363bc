#pragma once

#include <cstddef>
#include <vector>

#include "distfl/model.hpp"
#include "distfl/tensor.hpp"

namespace distfl {

// train: normalize by batch statistics and update running statistics.
// eval:  normalize by running statistics, mutate nothing.
// probe: normalize by running statistics (an inference pass) while also
//        measuring the batch statistics of the features entering each
//        BatchNorm layer; mutates nothing. Used by knowledge extraction.
enum class ForwardMode { train, eval, probe };

struct BatchStats {
  Tensor mean;  // [c]
  Tensor var;   // [c], population form
};

struct ForwardResult {
  Tensor logits;  // [b x C]
  Tensor probs;   // [b x C], rows on the simplex
  std::vector<BatchStats> batch_stats;  // per BN layer; empty in eval mode
};

ForwardResult forward(ModelParams& model, const Tensor& batch, ForwardMode mode);
// Const overload for the non-mutating modes; throws if mode == train.
ForwardResult forward(const ModelParams& model, const Tensor& batch, ForwardMode mode);

Tensor softmax_rows(const Tensor& logits);

struct LossGrads {
  double loss = 0.0;
  GradientSet grads;
};

// Mean cross-entropy plus gradients for every trainable tensor (and the
// input batch when requested). Runs the train-mode forward, so BatchNorm
// running statistics advance exactly as they do during training.
LossGrads loss_and_grads(ModelParams& model, const Tensor& batch,
                         const std::vector<int>& labels, bool want_input_grad);

// Loss value only, no mutation. Finite-difference checks probe this.
double cross_entropy_loss(const ModelParams& model, const Tensor& batch,
                          const std::vector<int>& labels);

// Per BN layer, the sorted channel indices that enter the matching loss.
struct ChannelSelection {
  std::vector<std::vector<std::size_t>> per_layer;

  bool all_empty() const {
    for (const auto& s : per_layer) {
      if (!s.empty()) return false;
    }
    return true;
  }
};

ChannelSelection all_channels(const ModelParams& model);

struct BnMatchResult {
  double loss = 0.0;
  Tensor input_grad;  // same shape as the batch
};

// Statistics-matching objective: per BN layer, the Euclidean distance of
// the probed batch mean and variance to the stored running statistics over
// the selected channels. squared_norms switches both terms to squared
// Euclidean distances.
double bn_match_loss(const ModelParams& model, const Tensor& batch,
                     const ChannelSelection& selection, bool squared_norms = false);

BnMatchResult bn_match_loss_and_input_grad(const ModelParams& model,
                                           const Tensor& batch,
                                           const ChannelSelection& selection,
                                           bool squared_norms = false);

// v <- momentum * v + g;  p <- p - lr * v. Running statistics untouched.
void sgd_step(ModelParams& model, const GradientSet& grads, GradientSet& velocity,
              const TrainConfig& cfg);

}  // namespace distfl
