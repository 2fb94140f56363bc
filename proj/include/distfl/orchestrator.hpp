#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distfl/clustering.hpp"
#include "distfl/extraction.hpp"
#include "distfl/metrics.hpp"
#include "distfl/report.hpp"
#include "distfl/scenario.hpp"
#include "distfl/toml.hpp"

namespace distfl {

enum class Strategy { distfl, fedavg_global, local_only, oracle_cluster };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy strategy);

struct ExperimentConfig {
  ScenarioConfig scenario;
  AttackConfig attack;
  std::optional<DPConfig> dp;
  TrainConfig train;
  ExtractionConfig extraction;
  Strategy strategy = Strategy::distfl;
  int rounds = 50;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {16, 16};
  std::optional<double> cluster_threshold;  // override; absent = auto-detect
  bool symmetrize = true;

  void validate() const;
};

ExperimentConfig experiment_config_from_toml(const toml::Table& table);
ExperimentConfig experiment_config_from_toml_text(const std::string& text);
ExperimentConfig experiment_config_from_toml_file(const std::string& path);

// Server-side state between rounds. Client velocity is intentionally absent:
// clients are stateless across rounds apart from their shard.
struct FLState {
  int round = 0;  // rounds completed
  std::vector<ModelParams> cluster_models;
  std::vector<std::size_t> client_model;  // client id -> cluster_models index
  ModelParams prev_global;                // pre-aggregated global of the last round
  std::vector<ClusterAssignment> assignment_history;
};

std::string state_to_json(const FLState& state);
FLState state_from_json(const std::string& text);

// local_epochs passes of mini-batch SGD with momentum over a seeded
// shuffle. Velocity starts at zero; batches smaller than 2 are skipped
// (batch statistics need two rows). Returns the trained snapshot.
ModelParams local_train(const ClientShard& shard, ModelParams model,
                        const TrainConfig& cfg, RngStream rng);

// Per-cluster unweighted averaging, running statistics included. Cluster
// members are averaged in ascending client order.
std::vector<ModelParams> cluster_aggregate(const std::vector<ModelParams>& models,
                                           const ClusterAssignment& assignment);

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  // One full round: distribute, train (with attacks/noise), run the server
  // pipeline for the configured strategy, aggregate, evaluate.
  RoundReport step();

  int rounds_done() const { return state_.round; }
  const ExperimentConfig& config() const { return cfg_; }
  const Scenario& scenario() const { return scenario_; }
  const FLState& state() const { return state_; }
  void restore_state(FLState state);

 private:
  ExperimentConfig cfg_;
  Scenario scenario_;
  std::vector<ClientShard> train_shards_;  // attacker shards already flipped
  std::vector<int> dist_types_;
  std::vector<bool> is_attacker_;
  ClientShard combined_test_;
  MetricsConfig metrics_cfg_;
  bool asr_enabled_ = false;
  FLState state_;

  RoundReport evaluate(const std::vector<ModelParams>& uploads, RoundReport report);
};

std::vector<RoundReport> run_experiment(const ExperimentConfig& cfg);

}  // namespace distfl
