#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "distfl/model.hpp"
#include "distfl/rng.hpp"
#include "distfl/tensor.hpp"

namespace distfl {

// One client's private data. dist_type and is_malicious are ground-truth
// evaluation tags; the server pipeline never reads them.
struct ClientShard {
  int client_id = 0;
  Tensor features;  // [n x d]
  std::vector<int> labels;
  int dist_type = 0;
  bool is_malicious = false;

  std::size_t size() const { return labels.size(); }
};

enum class ScenarioKind {
  category_imbalance,
  environment_shift,
  attack_injection,
  privacy_protection,
  mixed,
};

ScenarioKind scenario_kind_from_string(const std::string& name);
std::string to_string(ScenarioKind kind);

struct ScenarioConfig {
  ScenarioKind scenario = ScenarioKind::category_imbalance;
  int num_types = 1;
  int clients_per_type = 1;
  int samples_per_client = 32;
  int num_classes = 2;
  int feature_dim = 2;
  double class_separation = 4.0;
  double shift_magnitude = 2.0;
  std::uint64_t seed = 0;

  int num_clients() const { return num_types * clients_per_type; }
  void validate() const;
};

struct Scenario {
  std::vector<ClientShard> shards;     // num_types * clients_per_type entries
  std::vector<ClientShard> test_sets;  // one held-out shard per type
};

// Class-conditional Gaussian blobs partitioned into non-iid client shards.
// category_imbalance assigns each type a disjoint class subset;
// environment_shift (and privacy_protection) shift each type's features by
// t * shift_magnitude along a type-specific unit direction; mixed applies
// both; attack_injection draws every client from one shared distribution.
Scenario generate_scenario(const ScenarioConfig& cfg);

using FlipMap = std::vector<std::pair<int, int>>;

struct AttackConfig {
  enum class Kind { none, label_flip, model_replace };
  Kind kind = Kind::none;
  FlipMap flip_map;
  std::vector<int> attacker_ids;
  double boost_factor = 0.0;  // model replacement scale; 0 means "number of clients"

  void validate(int num_classes, int num_clients) const;
};

AttackConfig::Kind attack_kind_from_string(const std::string& name);
std::string to_string(AttackConfig::Kind kind);

// Remaps labels per flip_map (features untouched) and tags the shard.
ClientShard flip_labels(const ClientShard& shard, const FlipMap& flip_map);

// Scales the malicious parameters against the previous global model so that
// averaging the result with (scale - 1) copies of the global model lands
// exactly on the malicious parameters. Running statistics come from the
// malicious model unchanged.
ModelParams model_replacement(const ModelParams& local_malicious,
                              const ModelParams& global_prev, double scale);

struct DPConfig {
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip_norm = 1.0;

  void validate() const;
};

// Per-coordinate noise scale of the Gaussian mechanism.
double dp_noise_sigma(const DPConfig& dp);

// Clips the delta to L2 norm <= clip_norm, then adds N(0, sigma^2) noise to
// every coordinate.
void add_dp_noise(GradientSet& delta, const DPConfig& dp, RngStream& rng);

// {"client_id", "dist_type", "features", "labels"} interchange document.
std::string shard_to_json(const ClientShard& shard);
ClientShard shard_from_json(const std::string& text);

}  // namespace distfl
