#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "distfl/extraction.hpp"
#include "distfl/model.hpp"

namespace distfl {

// Concatenation of a model's softmax outputs over every knowledge item:
// z blocks of num_classes probabilities.
struct ResponseVector {
  int client_id = 0;
  std::size_t z = 0;
  std::size_t num_classes = 0;
  std::vector<double> values;  // z * num_classes, block-major

  double at(std::size_t block, std::size_t j) const {
    return values[block * num_classes + j];
  }
};

ResponseVector response_vector(const ModelParams& model, const KnowledgeSet& knowledge,
                               int client_id = 0);

// Sum over blocks of sum_j p_j ln(p_j / q_j); probabilities floor-clamped
// at 1e-12 before the logs.
double kl_divergence(const ResponseVector& p, const ResponseVector& q);

struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<double> div;  // n x n row-major, zero diagonal
  bool symmetrized = false;

  double& at(std::size_t p, std::size_t q) { return div[p * n + q]; }
  double at(std::size_t p, std::size_t q) const { return div[p * n + q]; }

  static SimilarityMatrix zeros(std::size_t n) {
    return SimilarityMatrix{n, std::vector<double>(n * n, 0.0), false};
  }
};

SimilarityMatrix build_sim(const std::vector<ModelParams>& models,
                           const KnowledgeSet& knowledge, bool symmetrize);
SimilarityMatrix build_sim(const std::vector<ResponseVector>& responses,
                           bool symmetrize);

struct ClusterAssignment {
  std::vector<std::vector<std::size_t>> clusters;  // disjoint, covering
  double threshold_used = 0.0;

  std::size_t num_clients() const;
  // Cluster index per client id.
  std::vector<std::size_t> membership() const;
};

// Greedy anchor partition: repeatedly take the lowest-indexed unassigned
// client and group every unassigned client within the divergence threshold.
// Without an explicit threshold the cut is auto-detected as the first
// significant gap in the sorted off-diagonal divergences (the boundary
// between the within-cluster band and the lowest cross-cluster level); when
// no gap is significant everything lands in one cluster.
ClusterAssignment threshold_cluster(const SimilarityMatrix& sim,
                                    std::optional<double> threshold = std::nullopt);

// n rows of n comma-separated values, 17 significant digits.
std::string sim_to_csv(const SimilarityMatrix& sim);
// {"threshold": x, "clusters": [[ids...], ...]}
std::string clusters_to_json(const ClusterAssignment& assignment);
ClusterAssignment clusters_from_json(const std::string& text);

}  // namespace distfl
