#include "distfl/report.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "distfl/checkpoint.hpp"

namespace distfl {

namespace {

using nlohmann::json;

json assignment_to_json_obj(const ClusterAssignment& a) {
  json j;
  if (std::isfinite(a.threshold_used)) {
    j["threshold"] = a.threshold_used;
  } else {
    j["threshold"] = "inf";
  }
  j["clusters"] = json::array();
  for (const auto& cluster : a.clusters) {
    j["clusters"].push_back(cluster);
  }
  return j;
}

ClusterAssignment assignment_from_json_obj(const json& j) {
  ClusterAssignment a;
  if (j.at("threshold").is_string()) {
    a.threshold_used = std::numeric_limits<double>::infinity();
  } else {
    a.threshold_used = j.at("threshold").get<double>();
  }
  for (const auto& cluster : j.at("clusters")) {
    std::vector<std::size_t> ids;
    for (const auto& v : cluster) ids.push_back(v.get<std::size_t>());
    a.clusters.push_back(std::move(ids));
  }
  return a;
}

json report_to_json_obj(const RoundReport& r) {
  json j;
  j["round"] = r.round;
  j["strategy"] = r.strategy;
  j["per_client_accuracy"] = r.per_client_accuracy;
  j["per_type_accuracy"] = r.per_type_accuracy;
  j["overall_accuracy"] = r.overall_accuracy;
  if (r.asr.has_value()) j["asr"] = *r.asr;
  j["assignment"] = assignment_to_json_obj(r.assignment);
  if (r.normal_cluster >= 0) j["normal_cluster"] = r.normal_cluster;
  j["cluster_recovery"] = r.cluster_recovery_score;
  j["exact_recovery"] = r.exact_recovery;
  j["weight_divergence"] = {{"mean", r.divergence.mean}, {"max", r.divergence.max}};
  if (r.synthesis_final_loss.has_value()) {
    j["synthesis_final_loss"] = *r.synthesis_final_loss;
  }
  if (!r.per_cluster.empty()) {
    json spans = json::array();
    for (const auto& cm : r.per_cluster) {
      json c;
      c["accuracy"] = cm.accuracy;
      if (cm.asr.has_value()) c["asr"] = *cm.asr;
      spans.push_back(c);
    }
    j["per_cluster"] = spans;
  }
  return j;
}

RoundReport report_from_json_obj(const json& j) {
  RoundReport r;
  r.round = j.at("round").get<int>();
  r.strategy = j.at("strategy").get<std::string>();
  r.per_client_accuracy = j.at("per_client_accuracy").get<std::vector<double>>();
  r.per_type_accuracy = j.at("per_type_accuracy").get<std::vector<double>>();
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  if (j.contains("asr")) r.asr = j.at("asr").get<double>();
  r.assignment = assignment_from_json_obj(j.at("assignment"));
  if (j.contains("normal_cluster")) r.normal_cluster = j.at("normal_cluster").get<int>();
  r.cluster_recovery_score = j.at("cluster_recovery").get<double>();
  r.exact_recovery = j.at("exact_recovery").get<bool>();
  r.divergence.mean = j.at("weight_divergence").at("mean").get<double>();
  r.divergence.max = j.at("weight_divergence").at("max").get<double>();
  if (j.contains("synthesis_final_loss")) {
    r.synthesis_final_loss = j.at("synthesis_final_loss").get<double>();
  }
  if (j.contains("per_cluster")) {
    for (const auto& c : j.at("per_cluster")) {
      ClusterMetrics cm;
      cm.accuracy = c.at("accuracy").get<double>();
      if (c.contains("asr")) cm.asr = c.at("asr").get<double>();
      r.per_cluster.push_back(cm);
    }
  }
  return r;
}

}  // namespace

std::string round_report_to_json(const RoundReport& report) {
  return report_to_json_obj(report).dump();
}

std::string reports_to_json(const std::vector<RoundReport>& reports) {
  json j;
  j["rounds"] = json::array();
  for (const auto& r : reports) {
    j["rounds"].push_back(report_to_json_obj(r));
  }
  return j.dump(2);
}

std::vector<RoundReport> reports_from_json(const std::string& text) {
  const json j = json::parse(text);
  std::vector<RoundReport> out;
  for (const auto& r : j.at("rounds")) {
    out.push_back(report_from_json_obj(r));
  }
  return out;
}

std::string metrics_csv(const std::vector<RoundReport>& reports,
                        const std::vector<int>& dist_types) {
  std::string out = "round,client_id,dist_type,cluster,accuracy\n";
  for (const auto& r : reports) {
    const auto member = r.assignment.membership();
    for (std::size_t i = 0; i < r.per_client_accuracy.size(); ++i) {
      out += std::to_string(r.round);
      out += ',' + std::to_string(i);
      out += ',' + std::to_string(i < dist_types.size() ? dist_types[i] : -1);
      out += ',' + std::to_string(member[i]);
      out += ',' + format_double(r.per_client_accuracy[i]);
      out += '\n';
    }
  }
  return out;
}

std::string timings_json(const std::vector<RoundReport>& reports) {
  json j;
  j["rounds"] = json::array();
  for (const auto& r : reports) {
    json t;
    t["round"] = r.round;
    t["train_s"] = r.durations.train_s;
    t["synthesis_s"] = r.durations.synthesis_s;
    t["clustering_s"] = r.durations.clustering_s;
    t["aggregation_s"] = r.durations.aggregation_s;
    t["evaluation_s"] = r.durations.evaluation_s;
    j["rounds"].push_back(t);
  }
  return j.dump(2);
}

}  // namespace distfl
