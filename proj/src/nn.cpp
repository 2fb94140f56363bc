#include "distfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace distfl {

namespace {

struct Trace {
  std::vector<Tensor> layer_inputs;     // activation entering each layer
  std::vector<BatchStats> bn_stats;     // per BN layer, train/probe only
  Tensor logits;
  Tensor probs;
};

Tensor linear_forward(const LinearLayer& lin, const Tensor& x) {
  const std::size_t b = x.rows();
  const std::size_t in = lin.in_features();
  const std::size_t out = lin.out_features();
  Tensor y = Tensor::zeros({b, out});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = lin.bias[o];
      for (std::size_t i = 0; i < in; ++i) {
        acc += lin.weight.at(o, i) * x.at(n, i);
      }
      y.at(n, o) = acc;
    }
  }
  return y;
}

BatchStats column_stats(const Tensor& x) {
  const std::size_t b = x.rows();
  const std::size_t c = x.cols();
  BatchStats stats{Tensor::zeros({c}), Tensor::zeros({c})};
  for (std::size_t j = 0; j < c; ++j) {
    double sum = 0.0;
    for (std::size_t n = 0; n < b; ++n) sum += x.at(n, j);
    const double mean = sum / static_cast<double>(b);
    double sq = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      const double d = x.at(n, j) - mean;
      sq += d * d;
    }
    stats.mean[j] = mean;
    stats.var[j] = sq / static_cast<double>(b);  // population variance
  }
  return stats;
}

Trace run_forward(const ModelParams& model, const Tensor& batch, ForwardMode mode) {
  if (batch.shape.size() != 2 || batch.cols() != model.input_dim) {
    throw std::invalid_argument("forward: batch must be [b x input_dim]");
  }
  const std::size_t b = batch.rows();
  if (b < 1) throw std::invalid_argument("forward: empty batch");
  if (mode != ForwardMode::eval && b < 2) {
    throw std::invalid_argument("forward: batch statistics need at least 2 rows");
  }
  batch.require_finite("forward input");

  Trace trace;
  trace.layer_inputs.reserve(model.layers.size());
  Tensor h = batch;

  for (const Layer& layer : model.layers) {
    trace.layer_inputs.push_back(h);
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      h = linear_forward(*lin, h);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const std::size_t c = bn->channels();
      const bool use_batch_stats = (mode == ForwardMode::train);
      BatchStats stats;
      if (mode != ForwardMode::eval) {
        stats = column_stats(h);
      }
      Tensor y = Tensor::zeros(h.shape);
      for (std::size_t j = 0; j < c; ++j) {
        const double mean = use_batch_stats ? stats.mean[j] : bn->running_mean[j];
        const double var = use_batch_stats ? stats.var[j] : bn->running_var[j];
        const double inv = 1.0 / std::sqrt(var + bn->eps);
        const double g = bn->gamma[j];
        const double base = bn->beta[j];
        for (std::size_t n = 0; n < h.rows(); ++n) {
          y.at(n, j) = g * (h.at(n, j) - mean) * inv + base;
        }
      }
      if (mode != ForwardMode::eval) {
        trace.bn_stats.push_back(std::move(stats));
      }
      h = std::move(y);
    } else {
      Tensor y = h;
      for (double& v : y.data) v = v > 0.0 ? v : 0.0;
      h = std::move(y);
    }
  }

  h.require_finite("forward activation");
  trace.logits = std::move(h);
  trace.probs = softmax_rows(trace.logits);
  return trace;
}

void apply_running_update(ModelParams& model, const Trace& trace) {
  std::size_t k = 0;
  for (Layer& layer : model.layers) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const BatchStats& stats = trace.bn_stats[k++];
      const double m = bn->momentum;
      for (std::size_t j = 0; j < bn->channels(); ++j) {
        bn->running_mean[j] = (1.0 - m) * bn->running_mean[j] + m * stats.mean[j];
        bn->running_var[j] = (1.0 - m) * bn->running_var[j] + m * stats.var[j];
      }
    }
  }
}

ForwardResult to_result(Trace&& trace) {
  ForwardResult r;
  r.logits = std::move(trace.logits);
  r.probs = std::move(trace.probs);
  r.batch_stats = std::move(trace.bn_stats);
  return r;
}

void check_labels(const std::vector<int>& labels, std::size_t b, std::size_t num_classes) {
  if (labels.size() != b) {
    throw std::invalid_argument("labels: length must match batch rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("labels: label out of range");
    }
  }
}

// Computed from the logits via log-sum-exp, so the loss stays finite even
// when the softmax itself underflows on extreme models.
double mean_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.rows();
  const std::size_t c = logits.cols();
  double loss = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    double mx = logits.at(n, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(n, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits.at(n, j) - mx);
    loss += mx + std::log(sum) - logits.at(n, static_cast<std::size_t>(labels[n]));
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite cross-entropy loss");
  return loss;
}

// Shared backward walk. `grad` holds d(loss)/d(current activation) and is
// carried from the logits back to the input. bn_hook lets the caller add
// per-layer contributions (the statistics-matching terms) and decides how a
// BatchNorm layer propagates (batch-statistics vs running-statistics form).
struct BackwardOptions {
  bool train_mode_bn = false;      // true: batch-stat normalization backward
  GradientSet* param_grads = nullptr;  // filled when non-null
};

Tensor backward_walk(const ModelParams& model, const Trace& trace, Tensor grad,
                     const BackwardOptions& opt,
                     const ChannelSelection* selection, bool squared_norms,
                     const std::vector<double>* mu_coeff,
                     const std::vector<double>* var_coeff) {
  // mu_coeff/var_coeff: per BN layer, per channel d(loss)/d(mean) and
  // d(loss)/d(var) of the direct statistics terms; null when absent.
  const std::size_t b = grad.rows();
  std::size_t grad_index = opt.param_grads ? opt.param_grads->tensors.size() : 0;
  std::size_t bn_index = trace.bn_stats.size();

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& layer = model.layers[li];
    const Tensor& x_in = trace.layer_inputs[li];
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      const std::size_t in = lin->in_features();
      const std::size_t out = lin->out_features();
      if (opt.param_grads) {
        Tensor& db = opt.param_grads->tensors[--grad_index];
        Tensor& dw = opt.param_grads->tensors[--grad_index];
        for (std::size_t o = 0; o < out; ++o) {
          double acc_b = 0.0;
          for (std::size_t n = 0; n < b; ++n) acc_b += grad.at(n, o);
          db[o] = acc_b;
          for (std::size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::size_t n = 0; n < b; ++n) acc += grad.at(n, o) * x_in.at(n, i);
            dw.at(o, i) = acc;
          }
        }
      }
      Tensor next = Tensor::zeros({b, in});
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t i = 0; i < in; ++i) {
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) {
            acc += grad.at(n, o) * lin->weight.at(o, i);
          }
          next.at(n, i) = acc;
        }
      }
      grad = std::move(next);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const std::size_t c = bn->channels();
      const BatchStats* stats = nullptr;
      if (!trace.bn_stats.empty()) {
        stats = &trace.bn_stats[--bn_index];
      }
      Tensor next = Tensor::zeros({b, c});
      if (opt.train_mode_bn) {
        // Batch-statistics normalization backward.
        for (std::size_t j = 0; j < c; ++j) {
          const double inv = 1.0 / std::sqrt(stats->var[j] + bn->eps);
          const double g = bn->gamma[j];
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t n = 0; n < b; ++n) {
            const double xhat = (x_in.at(n, j) - stats->mean[j]) * inv;
            sum_g += grad.at(n, j);
            sum_gx += grad.at(n, j) * xhat;
          }
          const double m1 = sum_g / static_cast<double>(b);
          const double m2 = sum_gx / static_cast<double>(b);
          if (opt.param_grads) {
            Tensor& dbeta = opt.param_grads->tensors[grad_index - 1];
            Tensor& dgamma = opt.param_grads->tensors[grad_index - 2];
            dbeta[j] = sum_g;
            dgamma[j] = sum_gx;
          }
          for (std::size_t n = 0; n < b; ++n) {
            const double xhat = (x_in.at(n, j) - stats->mean[j]) * inv;
            next.at(n, j) = g * inv * (grad.at(n, j) - m1 - xhat * m2);
          }
        }
        if (opt.param_grads) grad_index -= 2;
      } else {
        // Running-statistics normalization is a fixed per-channel affine map.
        for (std::size_t j = 0; j < c; ++j) {
          const double scale = bn->gamma[j] / std::sqrt(bn->running_var[j] + bn->eps);
          for (std::size_t n = 0; n < b; ++n) {
            next.at(n, j) = grad.at(n, j) * scale;
          }
        }
      }
      // Direct statistics-term contributions at this layer's input.
      if (mu_coeff != nullptr) {
        const std::vector<double>& mc = mu_coeff[bn_index];
        const std::vector<double>& vc = var_coeff[bn_index];
        (void)selection;
        (void)squared_norms;
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t j = 0; j < c; ++j) {
          if (mc[j] == 0.0 && vc[j] == 0.0) continue;
          for (std::size_t n = 0; n < b; ++n) {
            next.at(n, j) += mc[j] * inv_b +
                             vc[j] * 2.0 * (x_in.at(n, j) - stats->mean[j]) * inv_b;
          }
        }
      }
      grad = std::move(next);
    } else {
      for (std::size_t idx = 0; idx < grad.numel(); ++idx) {
        if (!(x_in.data[idx] > 0.0)) grad.data[idx] = 0.0;  // subgradient 0 at 0
      }
    }
  }
  return grad;
}

// Per-layer selected-channel statistics residuals and the resulting
// d(loss)/d(mean), d(loss)/d(var) coefficients.
double stat_terms(const ModelParams& model, const Trace& trace,
                  const ChannelSelection& selection, bool squared_norms,
                  std::vector<std::vector<double>>* mu_coeff,
                  std::vector<std::vector<double>>* var_coeff) {
  double loss = 0.0;
  std::size_t bn_index = 0;
  for (const Layer& layer : model.layers) {
    const auto* bn = std::get_if<BatchNormLayer>(&layer);
    if (bn == nullptr) continue;
    const BatchStats& stats = trace.bn_stats[bn_index];
    const std::vector<std::size_t>& sel = selection.per_layer[bn_index];
    double mu_sq = 0.0;
    double var_sq = 0.0;
    for (std::size_t j : sel) {
      if (j >= bn->channels()) {
        throw std::invalid_argument("channel selection: index out of range");
      }
      const double dm = stats.mean[j] - bn->running_mean[j];
      const double dv = stats.var[j] - bn->running_var[j];
      mu_sq += dm * dm;
      var_sq += dv * dv;
    }
    const double mu_norm = std::sqrt(mu_sq);
    const double var_norm = std::sqrt(var_sq);
    loss += squared_norms ? (mu_sq + var_sq) : (mu_norm + var_norm);

    if (mu_coeff != nullptr) {
      std::vector<double> mc(bn->channels(), 0.0);
      std::vector<double> vc(bn->channels(), 0.0);
      for (std::size_t j : sel) {
        const double dm = stats.mean[j] - bn->running_mean[j];
        const double dv = stats.var[j] - bn->running_var[j];
        if (squared_norms) {
          mc[j] = 2.0 * dm;
          vc[j] = 2.0 * dv;
        } else {
          // Subgradient 0 when a term vanishes exactly.
          mc[j] = mu_norm > 0.0 ? dm / mu_norm : 0.0;
          vc[j] = var_norm > 0.0 ? dv / var_norm : 0.0;
        }
      }
      (*mu_coeff)[bn_index] = std::move(mc);
      (*var_coeff)[bn_index] = std::move(vc);
    }
    ++bn_index;
  }
  return loss;
}

void check_selection(const ModelParams& model, const ChannelSelection& selection) {
  const std::size_t bn_layers = model.bn_layer_count();
  if (bn_layers == 0) {
    throw std::invalid_argument("bn_match: model has no batchnorm layers");
  }
  if (selection.per_layer.size() != bn_layers) {
    throw std::invalid_argument("bn_match: selection must cover every batchnorm layer");
  }
  if (selection.all_empty()) {
    throw std::invalid_argument("bn_match: selection empty in every layer");
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t b = logits.rows();
  const std::size_t c = logits.cols();
  Tensor probs = Tensor::zeros(logits.shape);
  for (std::size_t n = 0; n < b; ++n) {
    double mx = logits.at(n, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(n, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(logits.at(n, j) - mx);
      probs.at(n, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(n, j) /= sum;
  }
  return probs;
}

ForwardResult forward(ModelParams& model, const Tensor& batch, ForwardMode mode) {
  Trace trace = run_forward(model, batch, mode);
  if (mode == ForwardMode::train) {
    apply_running_update(model, trace);
  }
  return to_result(std::move(trace));
}

ForwardResult forward(const ModelParams& model, const Tensor& batch, ForwardMode mode) {
  if (mode == ForwardMode::train) {
    throw std::invalid_argument("forward: train mode mutates the model; use the non-const overload");
  }
  return to_result(run_forward(model, batch, mode));
}

LossGrads loss_and_grads(ModelParams& model, const Tensor& batch,
                         const std::vector<int>& labels, bool want_input_grad) {
  Trace trace = run_forward(model, batch, ForwardMode::train);
  check_labels(labels, batch.rows(), model.num_classes);

  LossGrads out;
  out.loss = mean_cross_entropy(trace.logits, labels);
  out.grads = GradientSet::zeros_like(model);

  const std::size_t b = batch.rows();
  Tensor grad = trace.probs;
  for (std::size_t n = 0; n < b; ++n) {
    grad.at(n, static_cast<std::size_t>(labels[n])) -= 1.0;
  }
  for (double& v : grad.data) v /= static_cast<double>(b);

  BackwardOptions opt;
  opt.train_mode_bn = true;
  opt.param_grads = &out.grads;
  Tensor input_grad = backward_walk(model, trace, std::move(grad), opt,
                                    nullptr, false, nullptr, nullptr);
  if (want_input_grad) {
    out.grads.input_grad = std::move(input_grad);
  }
  apply_running_update(model, trace);
  return out;
}

double cross_entropy_loss(const ModelParams& model, const Tensor& batch,
                          const std::vector<int>& labels) {
  Trace trace = run_forward(model, batch, ForwardMode::train);
  check_labels(labels, batch.rows(), model.num_classes);
  return mean_cross_entropy(trace.logits, labels);
}

ChannelSelection all_channels(const ModelParams& model) {
  ChannelSelection sel;
  for (const Layer& layer : model.layers) {
    if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      std::vector<std::size_t> idx(bn->channels());
      for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
      sel.per_layer.push_back(std::move(idx));
    }
  }
  return sel;
}

double bn_match_loss(const ModelParams& model, const Tensor& batch,
                     const ChannelSelection& selection, bool squared_norms) {
  check_selection(model, selection);
  Trace trace = run_forward(model, batch, ForwardMode::probe);
  return stat_terms(model, trace, selection, squared_norms, nullptr, nullptr);
}

BnMatchResult bn_match_loss_and_input_grad(const ModelParams& model,
                                           const Tensor& batch,
                                           const ChannelSelection& selection,
                                           bool squared_norms) {
  check_selection(model, selection);
  Trace trace = run_forward(model, batch, ForwardMode::probe);

  const std::size_t bn_layers = trace.bn_stats.size();
  std::vector<std::vector<double>> mu_coeff(bn_layers);
  std::vector<std::vector<double>> var_coeff(bn_layers);
  BnMatchResult out;
  out.loss = stat_terms(model, trace, selection, squared_norms, &mu_coeff, &var_coeff);

  Tensor grad = Tensor::zeros(trace.logits.shape);
  BackwardOptions opt;  // running-statistics propagation, no parameter grads
  out.input_grad = backward_walk(model, trace, std::move(grad), opt, &selection,
                                 squared_norms, mu_coeff.data(), var_coeff.data());
  return out;
}

void sgd_step(ModelParams& model, const GradientSet& grads, GradientSet& velocity,
              const TrainConfig& cfg) {
  std::vector<Tensor*> params = trainable_tensors(model);
  if (grads.tensors.size() != params.size() || velocity.tensors.size() != params.size()) {
    throw std::invalid_argument("sgd_step: gradient/velocity tensor count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads.tensors[k];
    Tensor& v = velocity.tensors[k];
    if (!p.same_shape(g) || !p.same_shape(v)) {
      throw std::invalid_argument("sgd_step: shape mismatch");
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i];
      p[i] -= cfg.learning_rate * v[i];
    }
  }
}

}  // namespace distfl
