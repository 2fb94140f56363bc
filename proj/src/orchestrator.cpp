#include "distfl/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "distfl/checkpoint.hpp"
#include "distfl/nn.hpp"

namespace distfl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ClusterAssignment singleton_assignment(std::size_t n) {
  ClusterAssignment a;
  a.threshold_used = 0.0;
  for (std::size_t i = 0; i < n; ++i) a.clusters.push_back({i});
  return a;
}

ClusterAssignment all_in_one(std::size_t n) {
  ClusterAssignment a;
  a.threshold_used = std::numeric_limits<double>::infinity();
  a.clusters.emplace_back();
  for (std::size_t i = 0; i < n; ++i) a.clusters.back().push_back(i);
  return a;
}

ClusterAssignment oracle_assignment(const std::vector<int>& dist_types) {
  ClusterAssignment a;
  a.threshold_used = 0.0;
  std::vector<int> seen;
  for (std::size_t i = 0; i < dist_types.size(); ++i) {
    const int t = dist_types[i];
    std::size_t k = 0;
    for (; k < seen.size(); ++k) {
      if (seen[k] == t) break;
    }
    if (k == seen.size()) {
      seen.push_back(t);
      a.clusters.emplace_back();
    }
    a.clusters[k].push_back(i);
  }
  return a;
}

}  // namespace

Strategy strategy_from_string(const std::string& name) {
  if (name == "distfl") return Strategy::distfl;
  if (name == "fedavg_global") return Strategy::fedavg_global;
  if (name == "local_only") return Strategy::local_only;
  if (name == "oracle_cluster") return Strategy::oracle_cluster;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::distfl: return "distfl";
    case Strategy::fedavg_global: return "fedavg_global";
    case Strategy::local_only: return "local_only";
    case Strategy::oracle_cluster: return "oracle_cluster";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  scenario.validate();
  attack.validate(scenario.num_classes, scenario.num_clients());
  if (dp.has_value()) dp->validate();
  train.validate();
  extraction.validate();
  if (rounds < 1) throw std::invalid_argument("experiment: rounds must be >= 1");
  if (hidden.empty()) {
    throw std::invalid_argument("experiment: hidden must name at least one layer width");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("experiment: hidden widths must be positive");
  }
}

ExperimentConfig experiment_config_from_toml(const toml::Table& t) {
  ExperimentConfig cfg;

  cfg.strategy = strategy_from_string(t.get_string("strategy", "distfl"));
  cfg.rounds = static_cast<int>(t.get_int("rounds", 50));
  cfg.seed = static_cast<std::uint64_t>(t.get_int("seed", 0));
  if (t.contains("hidden")) {
    cfg.hidden.clear();
    for (const auto& v : t.at("hidden").as_array()) {
      cfg.hidden.push_back(static_cast<std::size_t>(v.as_int()));
    }
  }
  if (t.contains("threshold")) cfg.cluster_threshold = t.at("threshold").as_double();
  cfg.symmetrize = t.get_bool("symmetrize", true);

  ScenarioConfig& s = cfg.scenario;
  s.scenario = scenario_kind_from_string(
      t.get_string("scenario.scenario", "category_imbalance"));
  s.num_types = static_cast<int>(t.get_int("scenario.num_types", s.num_types));
  s.clients_per_type =
      static_cast<int>(t.get_int("scenario.clients_per_type", s.clients_per_type));
  s.samples_per_client =
      static_cast<int>(t.get_int("scenario.samples_per_client", s.samples_per_client));
  s.num_classes = static_cast<int>(t.get_int("scenario.num_classes", s.num_classes));
  s.feature_dim = static_cast<int>(t.get_int("scenario.feature_dim", s.feature_dim));
  s.class_separation = t.get_double("scenario.class_separation", s.class_separation);
  s.shift_magnitude = t.get_double("scenario.shift_magnitude", s.shift_magnitude);
  s.seed = static_cast<std::uint64_t>(
      t.get_int("scenario.seed", static_cast<std::int64_t>(cfg.seed)));

  AttackConfig& a = cfg.attack;
  a.kind = attack_kind_from_string(t.get_string("attack.kind", "none"));
  if (t.contains("attack.flip_map")) {
    for (const auto& pair : t.at("attack.flip_map").as_array()) {
      const auto& p = pair.as_array();
      if (p.size() != 2) {
        throw std::invalid_argument("attack.flip_map entries must be [from, to] pairs");
      }
      a.flip_map.emplace_back(static_cast<int>(p[0].as_int()),
                              static_cast<int>(p[1].as_int()));
    }
  }
  if (t.contains("attack.attacker_ids")) {
    for (const auto& v : t.at("attack.attacker_ids").as_array()) {
      a.attacker_ids.push_back(static_cast<int>(v.as_int()));
    }
  }
  a.boost_factor = t.get_double("attack.boost_factor", 0.0);

  if (t.has_section("dp")) {
    DPConfig dp;
    dp.epsilon = t.get_double("dp.epsilon", dp.epsilon);
    dp.delta = t.get_double("dp.delta", dp.delta);
    dp.clip_norm = t.get_double("dp.clip_norm", dp.clip_norm);
    cfg.dp = dp;
  }

  TrainConfig& tr = cfg.train;
  tr.learning_rate = t.get_double("train.learning_rate", tr.learning_rate);
  tr.momentum = t.get_double("train.momentum", tr.momentum);
  tr.local_epochs = static_cast<int>(t.get_int("train.local_epochs", tr.local_epochs));
  tr.batch_size = static_cast<std::size_t>(t.get_int("train.batch_size",
                                                     static_cast<std::int64_t>(tr.batch_size)));

  ExtractionConfig& e = cfg.extraction;
  e.z = static_cast<std::size_t>(t.get_int("extraction.z", static_cast<std::int64_t>(e.z)));
  e.extract_ratio = t.get_double("extraction.extract_ratio", e.extract_ratio);
  e.synth_steps = static_cast<int>(t.get_int("extraction.synth_steps", e.synth_steps));
  e.synth_lr = t.get_double("extraction.synth_lr", e.synth_lr);
  e.synth_batch = static_cast<std::size_t>(
      t.get_int("extraction.synth_batch", static_cast<std::int64_t>(e.synth_batch)));
  e.squared_norms = t.get_bool("extraction.squared_norms", e.squared_norms);
  e.seed = static_cast<std::uint64_t>(
      t.get_int("extraction.seed", static_cast<std::int64_t>(e.seed)));

  cfg.validate();
  return cfg;
}

ExperimentConfig experiment_config_from_toml_text(const std::string& text) {
  return experiment_config_from_toml(toml::parse(text));
}

ExperimentConfig experiment_config_from_toml_file(const std::string& path) {
  return experiment_config_from_toml(toml::parse_file(path));
}

ModelParams local_train(const ClientShard& shard, ModelParams model,
                        const TrainConfig& cfg, RngStream rng) {
  cfg.validate();
  const std::size_t n = shard.size();
  if (n == 0) throw std::invalid_argument("local_train: empty shard");

  GradientSet velocity = GradientSet::zeros_like(model);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t d = shard.features.cols();
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      if (count < 2) continue;  // batch statistics need two rows
      Tensor batch = Tensor::zeros({count, d});
      std::vector<int> labels(count);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order[start + k];
        for (std::size_t j = 0; j < d; ++j) {
          batch.at(k, j) = shard.features.at(idx, j);
        }
        labels[k] = shard.labels[idx];
      }
      const LossGrads lg = loss_and_grads(model, batch, labels, false);
      sgd_step(model, lg.grads, velocity, cfg);
    }
  }
  return model;
}

std::vector<ModelParams> cluster_aggregate(const std::vector<ModelParams>& models,
                                           const ClusterAssignment& assignment) {
  std::vector<bool> seen(models.size(), false);
  std::vector<ModelParams> out;
  out.reserve(assignment.clusters.size());
  for (const auto& cluster : assignment.clusters) {
    if (cluster.empty()) throw std::invalid_argument("cluster_aggregate: empty cluster");
    std::vector<std::size_t> ids = cluster;
    std::sort(ids.begin(), ids.end());
    std::vector<ModelParams> members;
    members.reserve(ids.size());
    for (std::size_t id : ids) {
      if (id >= models.size() || seen[id]) {
        throw std::invalid_argument("cluster_aggregate: assignment is not a partition");
      }
      seen[id] = true;
      members.push_back(models[id]);
    }
    out.push_back(pre_aggregate(members));
  }
  for (bool s : seen) {
    if (!s) throw std::invalid_argument("cluster_aggregate: assignment misses a model");
  }
  return out;
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  scenario_ = generate_scenario(cfg_.scenario);

  const std::size_t n = scenario_.shards.size();
  is_attacker_.assign(n, false);
  if (cfg_.attack.kind != AttackConfig::Kind::none) {
    for (int id : cfg_.attack.attacker_ids) {
      is_attacker_[static_cast<std::size_t>(id)] = true;
      scenario_.shards[static_cast<std::size_t>(id)].is_malicious = true;
    }
  }

  train_shards_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_attacker_[i]) {
      // Both attacks train on flipped labels; model replacement additionally
      // rescales the upload afterwards.
      train_shards_.push_back(flip_labels(scenario_.shards[i], cfg_.attack.flip_map));
    } else {
      train_shards_.push_back(scenario_.shards[i]);
    }
    dist_types_.push_back(scenario_.shards[i].dist_type);
  }

  // Union of the per-type test sets, used for attack metrics.
  const std::size_t d = static_cast<std::size_t>(cfg_.scenario.feature_dim);
  std::size_t total = 0;
  for (const auto& ts : scenario_.test_sets) total += ts.size();
  combined_test_.client_id = -1;
  combined_test_.features = Tensor::zeros({total, d});
  combined_test_.labels.reserve(total);
  std::size_t row = 0;
  for (const auto& ts : scenario_.test_sets) {
    for (std::size_t i = 0; i < ts.size(); ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) {
        combined_test_.features.at(row, j) = ts.features.at(i, j);
      }
      combined_test_.labels.push_back(ts.labels[i]);
    }
  }

  asr_enabled_ =
      cfg_.attack.kind != AttackConfig::Kind::none && !cfg_.attack.flip_map.empty();
  if (asr_enabled_) {
    metrics_cfg_ = MetricsConfig::from_attack(cfg_.attack);
  }

  RngStream init_rng(cfg_.seed, purpose::model_init);
  ModelParams init = make_mlp_bn(d, cfg_.hidden,
                                 static_cast<std::size_t>(cfg_.scenario.num_classes),
                                 init_rng);
  state_.round = 0;
  state_.cluster_models = {init};
  state_.client_model.assign(n, 0);
  state_.prev_global = std::move(init);
}

void Experiment::restore_state(FLState state) { state_ = std::move(state); }

RoundReport Experiment::step() {
  const std::size_t n = train_shards_.size();
  const int round = state_.round;
  RoundReport report;
  report.round = round;
  report.strategy = to_string(cfg_.strategy);

  // 1) Distribute: every client receives its cluster's model from the most
  // recent assignment (round 0: the shared initialization). A replacement
  // attacker instead anchors at the previous pre-aggregated global model --
  // the same model its upload is scaled against. Training from its own
  // returned cluster model would re-boost an already boosted model and blow
  // up the weights exponentially across rounds.
  std::vector<const ModelParams*> received(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg_.attack.kind == AttackConfig::Kind::model_replace && is_attacker_[i]) {
      received[i] = &state_.prev_global;
    } else {
      received[i] = &state_.cluster_models[state_.client_model[i]];
    }
  }

  // 2) Local training, with attacks and optional DP noise on uploads.
  auto t0 = Clock::now();
  std::vector<ModelParams> uploads;
  uploads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream stream(cfg_.seed, purpose::shuffle, static_cast<std::uint64_t>(i),
                     static_cast<std::uint64_t>(round));
    uploads.push_back(local_train(train_shards_[i], *received[i], cfg_.train, stream));
  }
  if (cfg_.attack.kind == AttackConfig::Kind::model_replace) {
    const double scale = cfg_.attack.boost_factor > 0.0
                             ? cfg_.attack.boost_factor
                             : static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (is_attacker_[i]) {
        uploads[i] = model_replacement(uploads[i], state_.prev_global, scale);
      }
    }
  }
  if (cfg_.dp.has_value()) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto params = trainable_tensors(uploads[i]);
      const auto base = trainable_tensors(*received[i]);
      GradientSet delta;
      delta.tensors.reserve(params.size());
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor d = *params[k];
        for (std::size_t idx = 0; idx < d.numel(); ++idx) {
          d[idx] -= (*base[k])[idx];
        }
        delta.tensors.push_back(std::move(d));
      }
      RngStream stream(cfg_.seed, purpose::dp_noise, static_cast<std::uint64_t>(i),
                       static_cast<std::uint64_t>(round));
      add_dp_noise(delta, *cfg_.dp, stream);
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t idx = 0; idx < params[k]->numel(); ++idx) {
          (*params[k])[idx] = (*base[k])[idx] + delta.tensors[k][idx];
        }
      }
    }
  }
  report.durations.train_s = seconds_since(t0);

  // 3) Server pipeline.
  ClusterAssignment assignment;
  std::vector<ModelParams> new_models;
  ModelParams global = pre_aggregate(uploads);

  switch (cfg_.strategy) {
    case Strategy::distfl: {
      t0 = Clock::now();
      ExtractionConfig ec = cfg_.extraction;
      ec.seed = RngStream(cfg_.seed, purpose::synthesis, ec.seed,
                          static_cast<std::uint64_t>(round))
                    .next_u64();
      const SynthesisResult synth = synthesize(global, ec);
      report.synthesis_final_loss = synth.knowledge.final_loss;
      report.durations.synthesis_s = seconds_since(t0);

      t0 = Clock::now();
      std::vector<ResponseVector> responses;
      responses.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        responses.push_back(
            response_vector(uploads[i], synth.knowledge, static_cast<int>(i)));
      }
      report.sim_raw = build_sim(responses, false);
      report.sim_used = cfg_.symmetrize ? build_sim(responses, true) : report.sim_raw;
      report.has_sim = true;
      assignment = threshold_cluster(report.sim_used, cfg_.cluster_threshold);
      report.durations.clustering_s = seconds_since(t0);

      t0 = Clock::now();
      new_models = cluster_aggregate(uploads, assignment);
      report.durations.aggregation_s = seconds_since(t0);
      break;
    }
    case Strategy::fedavg_global: {
      t0 = Clock::now();
      assignment = all_in_one(n);
      new_models = {global};
      report.durations.aggregation_s = seconds_since(t0);
      break;
    }
    case Strategy::local_only: {
      assignment = singleton_assignment(n);
      new_models = uploads;
      break;
    }
    case Strategy::oracle_cluster: {
      t0 = Clock::now();
      assignment = oracle_assignment(dist_types_);
      new_models = cluster_aggregate(uploads, assignment);
      report.durations.aggregation_s = seconds_since(t0);
      break;
    }
  }

  report.assignment = assignment;

  // 4) Advance state.
  state_.prev_global = std::move(global);
  state_.cluster_models = std::move(new_models);
  state_.client_model = assignment.membership();
  state_.assignment_history.push_back(assignment);
  state_.round = round + 1;

  return evaluate(uploads, std::move(report));
}

RoundReport Experiment::evaluate(const std::vector<ModelParams>& uploads,
                                 RoundReport report) {
  const auto t0 = Clock::now();
  const std::size_t n = uploads.size();

  report.per_client_accuracy.resize(n, 0.0);
  std::vector<double> type_sum(scenario_.test_sets.size(), 0.0);
  std::vector<std::size_t> type_count(scenario_.test_sets.size(), 0);
  double overall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const ModelParams& model = state_.cluster_models[state_.client_model[i]];
    const std::size_t type = static_cast<std::size_t>(dist_types_[i]);
    const double acc = accuracy(model, scenario_.test_sets[type]);
    report.per_client_accuracy[i] = acc;
    type_sum[type] += acc;
    type_count[type] += 1;
    overall += acc;
  }
  report.overall_accuracy = overall / static_cast<double>(n);
  report.per_type_accuracy.resize(type_sum.size(), 0.0);
  for (std::size_t t = 0; t < type_sum.size(); ++t) {
    report.per_type_accuracy[t] =
        type_count[t] > 0 ? type_sum[t] / static_cast<double>(type_count[t]) : 0.0;
  }

  report.cluster_recovery_score = cluster_recovery(report.assignment, dist_types_);
  report.exact_recovery = partitions_equal(report.assignment, dist_types_);
  if (n >= 2) {
    report.divergence = weight_divergence(uploads);
  }

  if (cfg_.attack.kind != AttackConfig::Kind::none) {
    // Normal cluster: the one holding the most non-malicious clients
    // (ground-truth knowledge, evaluation only). Ties go to the lower index.
    std::size_t best = 0;
    std::size_t best_count = 0;
    for (std::size_t c = 0; c < report.assignment.clusters.size(); ++c) {
      std::size_t count = 0;
      for (std::size_t id : report.assignment.clusters[c]) {
        if (!is_attacker_[id]) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best = c;
      }
    }
    report.normal_cluster = static_cast<int>(best);
    for (std::size_t c = 0; c < state_.cluster_models.size(); ++c) {
      ClusterMetrics cm;
      cm.accuracy = accuracy(state_.cluster_models[c], combined_test_);
      if (asr_enabled_) {
        cm.asr = attack_success_rate(state_.cluster_models[c], combined_test_,
                                     metrics_cfg_);
      }
      report.per_cluster.push_back(cm);
    }
    if (asr_enabled_) {
      report.asr = report.per_cluster[best].asr;
    }
  }

  report.durations.evaluation_s = seconds_since(t0);
  return report;
}

std::vector<RoundReport> run_experiment(const ExperimentConfig& cfg) {
  Experiment experiment(cfg);
  std::vector<RoundReport> reports;
  reports.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int r = 0; r < cfg.rounds; ++r) {
    reports.push_back(experiment.step());
  }
  return reports;
}

std::string state_to_json(const FLState& state) {
  std::string out = "{\"round\":" + std::to_string(state.round);
  out += ",\"cluster_models\":[";
  for (std::size_t i = 0; i < state.cluster_models.size(); ++i) {
    if (i) out += ',';
    out += model_to_json(state.cluster_models[i]);
  }
  out += "],\"client_model\":[";
  for (std::size_t i = 0; i < state.client_model.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(state.client_model[i]);
  }
  out += "],\"prev_global\":" + model_to_json(state.prev_global);
  out += ",\"assignment_history\":[";
  for (std::size_t i = 0; i < state.assignment_history.size(); ++i) {
    if (i) out += ',';
    out += clusters_to_json(state.assignment_history[i]);
  }
  out += "]}";
  return out;
}

FLState state_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  FLState state;
  state.round = j.at("round").get<int>();
  for (const auto& m : j.at("cluster_models")) {
    state.cluster_models.push_back(model_from_json(m.dump()));
  }
  for (const auto& v : j.at("client_model")) {
    state.client_model.push_back(v.get<std::size_t>());
  }
  state.prev_global = model_from_json(j.at("prev_global").dump());
  for (const auto& a : j.at("assignment_history")) {
    state.assignment_history.push_back(clusters_from_json(a.dump()));
  }
  return state;
}

}  // namespace distfl
