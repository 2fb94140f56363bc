#include "distfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "distfl/extraction.hpp"
#include "distfl/nn.hpp"
#include "distfl/rng.hpp"

namespace distfl {

namespace {

constexpr double kStep = 1e-5;

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, int num_models,
                                    std::ostream* log) {
  GradCheckReport report;
  for (int m = 0; m < num_models; ++m) {
    RngStream rng(seed, 0xEC, static_cast<std::uint64_t>(m));
    const std::size_t input_dim = 3 + rng.uniform_index(4);   // 3..6
    const std::size_t num_classes = 2 + rng.uniform_index(4); // 2..5
    const std::size_t w1 = 4 + rng.uniform_index(13);         // 4..16
    const std::size_t w2 = 4 + rng.uniform_index(13);
    ModelParams model = make_mlp_bn(input_dim, {w1, w2}, num_classes, rng);
    // Wiggle the batchnorm parameters and running statistics so the check
    // exercises generic values, not the fresh-initialization fixed point.
    for (Layer& layer : model.layers) {
      if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
        for (std::size_t j = 0; j < bn->channels(); ++j) {
          bn->gamma[j] = 0.5 + rng.uniform();
          bn->beta[j] = 0.5 * rng.normal();
          bn->running_mean[j] = 0.5 * rng.normal();
          bn->running_var[j] = 0.5 + rng.uniform();
        }
      }
    }

    const std::size_t batch_rows = 4 + rng.uniform_index(5);  // 4..8
    Tensor batch = Tensor::zeros({batch_rows, input_dim});
    for (double& v : batch.data) v = rng.normal();
    std::vector<int> labels(batch_rows);
    for (int& y : labels) {
      y = static_cast<int>(rng.uniform_index(num_classes));
    }

    // Cross-entropy: parameter gradients.
    {
      ModelParams work = model;
      const LossGrads lg = loss_and_grads(work, batch, labels, true);
      ModelParams probe = model;
      const auto params = trainable_tensors(probe);
      std::size_t cursor = 0;
      for (Tensor* t : params) {
        const Tensor& analytic = lg.grads.tensors[cursor++];
        for (std::size_t i = 0; i < t->numel(); ++i) {
          const double saved = (*t)[i];
          (*t)[i] = saved + kStep;
          const double up = cross_entropy_loss(probe, batch, labels);
          (*t)[i] = saved - kStep;
          const double down = cross_entropy_loss(probe, batch, labels);
          (*t)[i] = saved;
          const double numeric = (up - down) / (2.0 * kStep);
          report.max_param_rel_err =
              std::max(report.max_param_rel_err, rel_err(analytic[i], numeric));
        }
      }
      // Cross-entropy: input gradients.
      const Tensor& input_grad = *lg.grads.input_grad;
      Tensor perturbed = batch;
      for (std::size_t i = 0; i < perturbed.numel(); ++i) {
        const double saved = perturbed[i];
        perturbed[i] = saved + kStep;
        const double up = cross_entropy_loss(model, perturbed, labels);
        perturbed[i] = saved - kStep;
        const double down = cross_entropy_loss(model, perturbed, labels);
        perturbed[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        report.max_input_rel_err =
            std::max(report.max_input_rel_err, rel_err(input_grad[i], numeric));
      }
    }

    // Statistics-matching loss: input gradients, half the channels selected.
    {
      const ChannelSelection sel = select_channels(model, 50.0);
      const BnMatchResult r = bn_match_loss_and_input_grad(model, batch, sel);
      Tensor perturbed = batch;
      for (std::size_t i = 0; i < perturbed.numel(); ++i) {
        const double saved = perturbed[i];
        perturbed[i] = saved + kStep;
        const double up = bn_match_loss(model, perturbed, sel);
        perturbed[i] = saved - kStep;
        const double down = bn_match_loss(model, perturbed, sel);
        perturbed[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        report.max_bn_match_rel_err =
            std::max(report.max_bn_match_rel_err, rel_err(r.input_grad[i], numeric));
      }
    }
    ++report.models_checked;
    if (log != nullptr) {
      *log << "model " << m << ": param " << report.max_param_rel_err
           << "  input " << report.max_input_rel_err << "  bn-match "
           << report.max_bn_match_rel_err << "\n";
    }
  }

  report.pass = report.max_param_rel_err < report.tolerance &&
                report.max_input_rel_err < report.tolerance &&
                report.max_bn_match_rel_err < report.tolerance;
  return report;
}

}  // namespace distfl
