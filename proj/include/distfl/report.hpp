#pragma once

#include <optional>
#include <string>
#include <vector>

#include "distfl/clustering.hpp"
#include "distfl/metrics.hpp"

namespace distfl {

struct PhaseDurations {
  double train_s = 0.0;
  double synthesis_s = 0.0;
  double clustering_s = 0.0;
  double aggregation_s = 0.0;
  double evaluation_s = 0.0;
};

struct ClusterMetrics {
  double accuracy = 0.0;
  std::optional<double> asr;
};

struct RoundReport {
  int round = 0;
  std::string strategy;
  std::vector<double> per_client_accuracy;
  std::vector<double> per_type_accuracy;
  double overall_accuracy = 0.0;
  std::optional<double> asr;  // normal-cluster model, attack runs only
  ClusterAssignment assignment;
  int normal_cluster = -1;    // index into assignment.clusters, attack runs only
  double cluster_recovery_score = 0.0;
  bool exact_recovery = false;
  WeightDivergence divergence;
  std::optional<double> synthesis_final_loss;
  std::vector<ClusterMetrics> per_cluster;

  // Retained for export; not part of the canonical report document.
  PhaseDurations durations;
  SimilarityMatrix sim_raw;
  SimilarityMatrix sim_used;
  bool has_sim = false;
};

// Canonical report document. Deterministic for a fixed config/seed; phase
// durations and similarity matrices live in side files instead.
std::string round_report_to_json(const RoundReport& report);
std::string reports_to_json(const std::vector<RoundReport>& reports);
std::vector<RoundReport> reports_from_json(const std::string& text);

// round,client_id,dist_type,cluster,accuracy rows, one per round per client.
std::string metrics_csv(const std::vector<RoundReport>& reports,
                        const std::vector<int>& dist_types);

std::string timings_json(const std::vector<RoundReport>& reports);

}  // namespace distfl
