#include "distfl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "distfl/checkpoint.hpp"

namespace distfl {

namespace {

// Class means sit on a scaled standard basis, so every pair of classes is
// exactly class_separation apart. Requires feature_dim >= num_classes.
std::vector<double> class_mean(int label, int feature_dim, double separation) {
  std::vector<double> mean(static_cast<std::size_t>(feature_dim), 0.0);
  mean[static_cast<std::size_t>(label)] = separation / std::sqrt(2.0);
  return mean;
}

std::vector<double> unit_direction(int feature_dim, RngStream& rng) {
  std::vector<double> dir(static_cast<std::size_t>(feature_dim));
  double norm_sq = 0.0;
  for (double& v : dir) {
    v = rng.normal();
    norm_sq += v * v;
  }
  const double norm = std::sqrt(norm_sq);
  for (double& v : dir) v /= norm > 0.0 ? norm : 1.0;
  return dir;
}

// Classes owned by a distribution type. Disjoint under category imbalance
// and mixed; everything otherwise.
std::vector<int> classes_of_type(const ScenarioConfig& cfg, int type) {
  const bool disjoint = cfg.scenario == ScenarioKind::category_imbalance ||
                        cfg.scenario == ScenarioKind::mixed;
  std::vector<int> classes;
  if (!disjoint) {
    for (int k = 0; k < cfg.num_classes; ++k) classes.push_back(k);
    return classes;
  }
  // Split classes as evenly as possible: the first (num_classes % num_types)
  // types get one extra class.
  const int base = cfg.num_classes / cfg.num_types;
  const int extra = cfg.num_classes % cfg.num_types;
  const int start = type * base + std::min(type, extra);
  const int count = base + (type < extra ? 1 : 0);
  for (int k = 0; k < count; ++k) classes.push_back(start + k);
  return classes;
}

bool type_shift_enabled(ScenarioKind kind) {
  return kind == ScenarioKind::environment_shift ||
         kind == ScenarioKind::privacy_protection || kind == ScenarioKind::mixed;
}

ClientShard draw_shard(const ScenarioConfig& cfg, int client_id, int type,
                       const std::vector<int>& classes,
                       const std::vector<std::vector<double>>& offsets,
                       int n, RngStream& rng) {
  ClientShard shard;
  shard.client_id = client_id;
  shard.dist_type = type;
  shard.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    shard.labels[static_cast<std::size_t>(i)] =
        classes[static_cast<std::size_t>(i) % classes.size()];
  }
  rng.shuffle(shard.labels);

  const int d = cfg.feature_dim;
  shard.features = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(d)});
  for (int i = 0; i < n; ++i) {
    const auto mean = class_mean(shard.labels[static_cast<std::size_t>(i)], d,
                                 cfg.class_separation);
    const auto& offset = offsets[static_cast<std::size_t>(type)];
    for (int j = 0; j < d; ++j) {
      shard.features.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          mean[static_cast<std::size_t>(j)] + offset[static_cast<std::size_t>(j)] +
          rng.normal();
    }
  }
  return shard;
}

}  // namespace

ScenarioKind scenario_kind_from_string(const std::string& name) {
  if (name == "category_imbalance") return ScenarioKind::category_imbalance;
  if (name == "environment_shift") return ScenarioKind::environment_shift;
  if (name == "attack_injection") return ScenarioKind::attack_injection;
  if (name == "privacy_protection") return ScenarioKind::privacy_protection;
  if (name == "mixed") return ScenarioKind::mixed;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::category_imbalance: return "category_imbalance";
    case ScenarioKind::environment_shift: return "environment_shift";
    case ScenarioKind::attack_injection: return "attack_injection";
    case ScenarioKind::privacy_protection: return "privacy_protection";
    case ScenarioKind::mixed: return "mixed";
  }
  return "?";
}

void ScenarioConfig::validate() const {
  if (num_types < 1) throw std::invalid_argument("scenario: num_types must be >= 1");
  if (clients_per_type < 1) throw std::invalid_argument("scenario: clients_per_type must be >= 1");
  if (samples_per_client < 1) throw std::invalid_argument("scenario: samples_per_client must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("scenario: num_classes must be >= 2");
  if (feature_dim < num_classes) {
    throw std::invalid_argument("scenario: feature_dim must be >= num_classes (blob geometry)");
  }
  if (!(class_separation > 0.0)) throw std::invalid_argument("scenario: class_separation must be > 0");
  const bool disjoint = scenario == ScenarioKind::category_imbalance ||
                        scenario == ScenarioKind::mixed;
  if (disjoint && num_classes < num_types) {
    throw std::invalid_argument(
        "scenario: category imbalance needs num_classes >= num_types");
  }
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario out;

  std::vector<std::vector<double>> offsets;
  offsets.reserve(static_cast<std::size_t>(cfg.num_types));
  const bool shifted = type_shift_enabled(cfg.scenario);
  for (int t = 0; t < cfg.num_types; ++t) {
    std::vector<double> offset(static_cast<std::size_t>(cfg.feature_dim), 0.0);
    if (shifted && t > 0) {
      RngStream dir_rng(cfg.seed, purpose::type_direction, static_cast<std::uint64_t>(t));
      offset = unit_direction(cfg.feature_dim, dir_rng);
      for (double& v : offset) v *= cfg.shift_magnitude * static_cast<double>(t);
    }
    offsets.push_back(std::move(offset));
  }

  const bool pooled = cfg.scenario == ScenarioKind::attack_injection;
  for (int t = 0; t < cfg.num_types; ++t) {
    const std::vector<int> classes = classes_of_type(cfg, t);
    for (int k = 0; k < cfg.clients_per_type; ++k) {
      const int client_id = t * cfg.clients_per_type + k;
      RngStream rng(cfg.seed, purpose::shard, static_cast<std::uint64_t>(client_id));
      ClientShard shard = draw_shard(cfg, client_id, t, classes, offsets,
                                     cfg.samples_per_client, rng);
      if (pooled) shard.dist_type = 0;  // one shared distribution
      out.shards.push_back(std::move(shard));
    }
  }

  const int test_n = std::max(100, cfg.samples_per_client);
  const int test_types = pooled ? 1 : cfg.num_types;
  for (int t = 0; t < test_types; ++t) {
    const std::vector<int> classes = classes_of_type(cfg, t);
    RngStream rng(cfg.seed, purpose::test_set, static_cast<std::uint64_t>(t));
    ClientShard test = draw_shard(cfg, -1, t, classes, offsets, test_n, rng);
    out.test_sets.push_back(std::move(test));
  }
  return out;
}

AttackConfig::Kind attack_kind_from_string(const std::string& name) {
  if (name == "none") return AttackConfig::Kind::none;
  if (name == "label_flip") return AttackConfig::Kind::label_flip;
  if (name == "model_replace") return AttackConfig::Kind::model_replace;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

std::string to_string(AttackConfig::Kind kind) {
  switch (kind) {
    case AttackConfig::Kind::none: return "none";
    case AttackConfig::Kind::label_flip: return "label_flip";
    case AttackConfig::Kind::model_replace: return "model_replace";
  }
  return "?";
}

void AttackConfig::validate(int num_classes, int num_clients) const {
  if (kind == Kind::none) return;
  for (const auto& [from, to] : flip_map) {
    if (from == to) throw std::invalid_argument("attack: flip_map must have no fixed points");
    if (from < 0 || from >= num_classes || to < 0 || to >= num_classes) {
      throw std::invalid_argument("attack: flip_map label out of range");
    }
  }
  for (std::size_t i = 0; i < flip_map.size(); ++i) {
    for (std::size_t j = i + 1; j < flip_map.size(); ++j) {
      if (flip_map[i].first == flip_map[j].first) {
        throw std::invalid_argument("attack: duplicate flip_map source class");
      }
    }
  }
  for (int id : attacker_ids) {
    if (id < 0 || id >= num_clients) {
      throw std::invalid_argument("attack: attacker id out of range");
    }
  }
  if (boost_factor < 0.0) throw std::invalid_argument("attack: boost_factor must be >= 0");
}

ClientShard flip_labels(const ClientShard& shard, const FlipMap& flip_map) {
  ClientShard out = shard;
  out.is_malicious = true;
  for (int& label : out.labels) {
    for (const auto& [from, to] : flip_map) {
      if (label == from) {
        label = to;
        break;
      }
    }
  }
  return out;
}

ModelParams model_replacement(const ModelParams& local_malicious,
                              const ModelParams& global_prev, double scale) {
  if (!(scale >= 1.0)) {
    throw std::invalid_argument("model_replacement: scale must be >= 1");
  }
  ModelParams out = local_malicious;  // running statistics kept as-is
  const auto dst = trainable_tensors(out);
  const auto glob = trainable_tensors(global_prev);
  if (dst.size() != glob.size()) {
    throw std::invalid_argument("model_replacement: model shape mismatch");
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (!dst[k]->same_shape(*glob[k])) {
      throw std::invalid_argument("model_replacement: tensor shape mismatch");
    }
    for (std::size_t i = 0; i < dst[k]->numel(); ++i) {
      const double mal = (*dst[k])[i];
      const double prev = (*glob[k])[i];
      (*dst[k])[i] = scale * (mal - prev) + prev;
    }
  }
  return out;
}

void DPConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("dp: epsilon must be > 0");
  if (!(delta > 0.0) || !(delta < 1.0)) throw std::invalid_argument("dp: delta must be in (0, 1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("dp: clip_norm must be > 0");
}

double dp_noise_sigma(const DPConfig& dp) {
  dp.validate();
  return dp.clip_norm * std::sqrt(2.0 * std::log(1.25 / dp.delta)) / dp.epsilon;
}

void add_dp_noise(GradientSet& delta, const DPConfig& dp, RngStream& rng) {
  dp.validate();
  double norm_sq = 0.0;
  for (const Tensor& t : delta.tensors) {
    for (double v : t.data) norm_sq += v * v;
  }
  const double norm = std::sqrt(norm_sq);
  const double scale = norm > dp.clip_norm ? dp.clip_norm / norm : 1.0;
  const double sigma = dp_noise_sigma(dp);
  for (Tensor& t : delta.tensors) {
    for (double& v : t.data) {
      v = v * scale + sigma * rng.normal();
    }
  }
}

std::string shard_to_json(const ClientShard& shard) {
  std::string out;
  out += "{\"client_id\":" + std::to_string(shard.client_id);
  out += ",\"dist_type\":" + std::to_string(shard.dist_type);
  out += ",\"features\":[";
  for (std::size_t r = 0; r < shard.features.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (std::size_t c = 0; c < shard.features.cols(); ++c) {
      if (c) out += ',';
      out += format_double(shard.features.at(r, c));
    }
    out += ']';
  }
  out += "],\"labels\":[";
  for (std::size_t i = 0; i < shard.labels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(shard.labels[i]);
  }
  out += "]}";
  return out;
}

ClientShard shard_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ClientShard shard;
  shard.client_id = j.at("client_id").get<int>();
  shard.dist_type = j.at("dist_type").get<int>();
  const auto& feats = j.at("features");
  const std::size_t rows = feats.size();
  if (rows == 0) throw std::invalid_argument("shard: empty features");
  const std::size_t cols = feats[0].size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : feats) {
    if (row.size() != cols) throw std::invalid_argument("shard: ragged features");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  shard.features = Tensor({rows, cols}, std::move(data));
  for (const auto& v : j.at("labels")) shard.labels.push_back(v.get<int>());
  if (shard.labels.size() != rows) {
    throw std::invalid_argument("shard: features/labels length mismatch");
  }
  return shard;
}

}  // namespace distfl
