#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distfl/model.hpp"
#include "distfl/nn.hpp"
#include "distfl/tensor.hpp"

namespace distfl {

struct ExtractionConfig {
  std::size_t z = 200;           // number of synthesized inputs
  double extract_ratio = 50.0;   // E, percent of channels kept per BN layer
  int synth_steps = 500;
  double synth_lr = 0.1;
  std::size_t synth_batch = 0;   // 0: optimize the whole set as one batch
  bool squared_norms = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KnowledgeSet {
  Tensor items;  // [z x input_dim]
  std::string source_model_hash;
  double final_loss = 0.0;

  std::size_t count() const { return items.rows(); }
  std::size_t dim() const { return items.cols(); }
};

struct SynthesisResult {
  KnowledgeSet knowledge;
  double initial_loss = 0.0;
};

// Unweighted mean of every parameter and every running statistic, summed in
// input order.
ModelParams pre_aggregate(const std::vector<ModelParams>& models);

// Per BN layer, the ceil(E% * c) channels (at least one) with the largest
// |gamma|; ties go to the lower channel index. Returned sorted ascending.
ChannelSelection select_channels(const ModelParams& model, double extract_ratio);

// Initializes z standard-normal inputs and runs synth_steps plain
// gradient-descent updates against the statistics-matching loss restricted
// to the selected channels. The model is read-only throughout.
SynthesisResult synthesize(const ModelParams& model, const ExtractionConfig& cfg);

std::string knowledge_to_json(const KnowledgeSet& k);
KnowledgeSet knowledge_from_json(const std::string& text);
void save_knowledge(const KnowledgeSet& k, const std::string& path);
KnowledgeSet load_knowledge(const std::string& path);

}  // namespace distfl
