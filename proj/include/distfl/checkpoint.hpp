#pragma once

#include <string>

#include "distfl/model.hpp"

namespace distfl {

// Canonical checkpoint document. Numbers carry 17 significant digits so a
// load/save cycle reproduces every double bit-for-bit.
std::string model_to_json(const ModelParams& model);
ModelParams model_from_json(const std::string& text);

void save_model(const ModelParams& model, const std::string& path);
ModelParams load_model(const std::string& path);

// FNV-1a over the canonical checkpoint text; stable model identifier.
std::string model_hash(const ModelParams& model);

// Shared numeric formatting for every text artifact (CSV, checkpoints).
std::string format_double(double v);

}  // namespace distfl
