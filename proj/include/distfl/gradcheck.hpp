#pragma once

#include <cstdint>
#include <ostream>

#include "distfl/model.hpp"

namespace distfl {

// Central finite differences, step 1e-5. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
struct GradCheckReport {
  int models_checked = 0;
  double max_param_rel_err = 0.0;     // cross-entropy, trainable parameters
  double max_input_rel_err = 0.0;     // cross-entropy, input batch
  double max_bn_match_rel_err = 0.0;  // statistics-matching loss, input batch
  double tolerance = 1e-4;
  bool pass = false;
};

// Checks num_models random MLP-BN models (two hidden layers, widths <= 16)
// against random batches. log may be null.
GradCheckReport run_gradient_checks(std::uint64_t seed, int num_models,
                                    std::ostream* log);

}  // namespace distfl
