#include "distfl/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "distfl/checkpoint.hpp"
#include "distfl/nn.hpp"

namespace distfl {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr double kDegenerateSpread = 1e-9;
}  // namespace

ResponseVector response_vector(const ModelParams& model, const KnowledgeSet& knowledge,
                               int client_id) {
  if (knowledge.dim() != model.input_dim) {
    throw std::invalid_argument("response_vector: knowledge dimension mismatch");
  }
  // Eval-mode rows are independent, so one batched forward equals feeding
  // the items one by one.
  const ForwardResult r = forward(model, knowledge.items, ForwardMode::eval);
  ResponseVector v;
  v.client_id = client_id;
  v.z = knowledge.count();
  v.num_classes = model.num_classes;
  v.values = r.probs.data;
  return v;
}

double kl_divergence(const ResponseVector& p, const ResponseVector& q) {
  if (p.z != q.z || p.num_classes != q.num_classes) {
    throw std::invalid_argument("kl_divergence: response length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double pc = std::max(p.values[i], kProbFloor);
    const double qc = std::max(q.values[i], kProbFloor);
    total += pc * std::log(pc / qc);
  }
  return total;
}

SimilarityMatrix build_sim(const std::vector<ResponseVector>& responses,
                           bool symmetrize) {
  const std::size_t n = responses.size();
  if (n == 0) throw std::invalid_argument("build_sim: no responses");
  SimilarityMatrix sim = SimilarityMatrix::zeros(n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;  // diagonal stays exactly zero
      sim.at(p, q) = kl_divergence(responses[p], responses[q]);
    }
  }
  if (symmetrize) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double m = (sim.at(p, q) + sim.at(q, p)) / 2.0;
        sim.at(p, q) = m;
        sim.at(q, p) = m;
      }
    }
    sim.symmetrized = true;
  }
  return sim;
}

SimilarityMatrix build_sim(const std::vector<ModelParams>& models,
                           const KnowledgeSet& knowledge, bool symmetrize) {
  if (models.empty()) throw std::invalid_argument("build_sim: no models");
  std::vector<ResponseVector> responses;
  responses.reserve(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    responses.push_back(response_vector(models[i], knowledge, static_cast<int>(i)));
  }
  return build_sim(responses, symmetrize);
}

std::size_t ClusterAssignment::num_clients() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.size();
  return n;
}

std::vector<std::size_t> ClusterAssignment::membership() const {
  std::vector<std::size_t> member(num_clients(), 0);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (std::size_t id : clusters[c]) {
      if (id >= member.size()) {
        throw std::invalid_argument("assignment: client id out of range");
      }
      member[id] = c;
    }
  }
  return member;
}

namespace {

ClusterAssignment greedy_partition(const SimilarityMatrix& sim, double threshold) {
  const std::size_t n = sim.n;
  ClusterAssignment out;
  out.threshold_used = threshold;
  std::vector<bool> assigned(n, false);
  for (std::size_t anchor = 0; anchor < n; ++anchor) {
    if (assigned[anchor]) continue;
    std::vector<std::size_t> cluster{anchor};
    assigned[anchor] = true;
    for (std::size_t q = anchor + 1; q < n; ++q) {
      if (!assigned[q] && sim.at(anchor, q) <= threshold) {
        cluster.push_back(q);
        assigned[q] = true;
      }
    }
    out.clusters.push_back(std::move(cluster));
  }
  return out;
}

ClusterAssignment single_cluster(std::size_t n) {
  ClusterAssignment out;
  out.threshold_used = std::numeric_limits<double>::infinity();
  out.clusters.emplace_back();
  for (std::size_t i = 0; i < n; ++i) out.clusters.back().push_back(i);
  return out;
}

}  // namespace

ClusterAssignment threshold_cluster(const SimilarityMatrix& sim,
                                    std::optional<double> threshold) {
  const std::size_t n = sim.n;
  if (n == 0) return ClusterAssignment{};
  if (threshold.has_value()) {
    return greedy_partition(sim, *threshold);
  }
  if (n == 1) return single_cluster(1);

  std::vector<double> values;
  values.reserve(n * (n - 1));
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p != q) values.push_back(sim.at(p, q));
    }
  }
  std::sort(values.begin(), values.end());
  if (values.back() - values.front() <= kDegenerateSpread) {
    return single_cluster(n);
  }
  values.erase(std::unique(values.begin(), values.end()), values.end());

  // Cut at the strongest relative jump in the sorted unique values: the
  // boundary between the within-cluster band and the lowest cross-cluster
  // level. Cross-cluster divergences often spread over several levels, so
  // the largest absolute gap can sit between levels, far above the boundary
  // of interest; the boundary is instead where the values jump by the
  // largest multiple. A jump qualifies only if its gap dominates the spread
  // of everything below it and the multiple is at least 2; a jump right
  // after the smallest value needs a much stronger multiple, since a single
  // pair carries little evidence. Unstructured matrices produce no
  // qualifying jump and collapse to one cluster.
  double best_ratio = 0.0;
  std::size_t cut = 0;
  bool found = false;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double gap = values[i + 1] - values[i];
    const double spread_below = values[i] - values.front();
    const double floor = i == 0 ? 50.0 : 2.0;
    const double ratio = values[i] > 0.0
                             ? values[i + 1] / values[i]
                             : std::numeric_limits<double>::infinity();
    if (gap >= spread_below && ratio >= floor && ratio > best_ratio) {
      best_ratio = ratio;
      cut = i;
      found = true;
    }
  }
  if (!found) {
    return single_cluster(n);
  }
  return greedy_partition(sim, (values[cut] + values[cut + 1]) / 2.0);
}

std::string sim_to_csv(const SimilarityMatrix& sim) {
  std::string out;
  for (std::size_t p = 0; p < sim.n; ++p) {
    for (std::size_t q = 0; q < sim.n; ++q) {
      if (q) out += ',';
      out += format_double(sim.at(p, q));
    }
    out += '\n';
  }
  return out;
}

std::string clusters_to_json(const ClusterAssignment& assignment) {
  std::string out = "{\"threshold\":";
  if (std::isfinite(assignment.threshold_used)) {
    out += format_double(assignment.threshold_used);
  } else {
    out += "\"inf\"";
  }
  out += ",\"clusters\":[";
  for (std::size_t c = 0; c < assignment.clusters.size(); ++c) {
    if (c) out += ',';
    out += '[';
    for (std::size_t i = 0; i < assignment.clusters[c].size(); ++i) {
      if (i) out += ',';
      out += std::to_string(assignment.clusters[c][i]);
    }
    out += ']';
  }
  out += "]}";
  return out;
}

ClusterAssignment clusters_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ClusterAssignment a;
  const auto& thr = j.at("threshold");
  a.threshold_used = thr.is_string() ? std::numeric_limits<double>::infinity()
                                     : thr.get<double>();
  for (const auto& cluster : j.at("clusters")) {
    std::vector<std::size_t> ids;
    for (const auto& v : cluster) ids.push_back(v.get<std::size_t>());
    a.clusters.push_back(std::move(ids));
  }
  return a;
}

}  // namespace distfl
