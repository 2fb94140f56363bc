#pragma once

#include <string>
#include <vector>

#include "distfl/clustering.hpp"
#include "distfl/model.hpp"
#include "distfl/scenario.hpp"

namespace distfl {

// Argmax class per row; ties break to the lowest class index.
std::vector<int> predict(const ModelParams& model, const Tensor& features);

// Fraction of argmax-correct predictions.
double accuracy(const ModelParams& model, const ClientShard& test);

struct MetricsConfig {
  enum class EvaluateOn { normal_cluster_model, per_client_model };
  std::vector<int> asr_source_classes;
  FlipMap asr_target_map;
  EvaluateOn evaluate_on = EvaluateOn::normal_cluster_model;

  static MetricsConfig from_attack(const AttackConfig& attack);
};

// Per source class, the fraction of that class's test samples predicted as
// its mapped target class; averaged over source classes.
double attack_success_rate(const ModelParams& model, const ClientShard& test,
                           const MetricsConfig& cfg);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// max(0, ARI) between the discovered partition and the ground-truth types.
double cluster_recovery(const ClusterAssignment& assignment,
                        const std::vector<int>& truth);

// Partition equality up to cluster relabeling.
bool partitions_equal(const ClusterAssignment& assignment,
                      const std::vector<int>& truth);

struct WeightDivergence {
  double mean = 0.0;
  double max = 0.0;
};

// Pairwise Euclidean distance over flattened trainable parameters
// (running statistics excluded).
WeightDivergence weight_divergence(const std::vector<ModelParams>& models);

}  // namespace distfl
