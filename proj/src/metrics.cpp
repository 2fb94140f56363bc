#include "distfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "distfl/nn.hpp"

namespace distfl {

std::vector<int> predict(const ModelParams& model, const Tensor& features) {
  const ForwardResult r = forward(model, features, ForwardMode::eval);
  const std::size_t b = r.logits.rows();
  const std::size_t c = r.logits.cols();
  std::vector<int> out(b, 0);
  for (std::size_t n = 0; n < b; ++n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (r.logits.at(n, j) > r.logits.at(n, best)) best = j;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const ModelParams& model, const ClientShard& test) {
  if (test.size() == 0) throw std::invalid_argument("accuracy: empty test set");
  const std::vector<int> pred = predict(model, test.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

MetricsConfig MetricsConfig::from_attack(const AttackConfig& attack) {
  MetricsConfig cfg;
  cfg.asr_target_map = attack.flip_map;
  for (const auto& [from, to] : attack.flip_map) {
    (void)to;
    cfg.asr_source_classes.push_back(from);
  }
  std::sort(cfg.asr_source_classes.begin(), cfg.asr_source_classes.end());
  return cfg;
}

double attack_success_rate(const ModelParams& model, const ClientShard& test,
                           const MetricsConfig& cfg) {
  if (cfg.asr_source_classes.empty()) {
    throw std::invalid_argument("asr: no source classes configured");
  }
  const std::vector<int> pred = predict(model, test.features);
  double sum = 0.0;
  for (int source : cfg.asr_source_classes) {
    int target = -1;
    for (const auto& [from, to] : cfg.asr_target_map) {
      if (from == source) target = to;
    }
    if (target < 0) throw std::invalid_argument("asr: source class missing from target map");
    std::size_t total = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (test.labels[i] != source) continue;
      ++total;
      if (pred[i] == target) ++hits;
    }
    if (total == 0) {
      throw std::invalid_argument("asr: test set has no samples of a source class");
    }
    sum += static_cast<double>(hits) / static_cast<double>(total);
  }
  return sum / static_cast<double>(cfg.asr_source_classes.size());
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("ari: label length mismatch");
  const std::size_t n = a.size();
  if (n == 0) return 1.0;

  std::map<std::pair<int, int>, std::size_t> contingency;
  std::map<int, std::size_t> row_sum;
  std::map<int, std::size_t> col_sum;
  for (std::size_t i = 0; i < n; ++i) {
    ++contingency[{a[i], b[i]}];
    ++row_sum[a[i]];
    ++col_sum[b[i]];
  }
  auto comb2 = [](std::size_t k) {
    return static_cast<double>(k) * static_cast<double>(k > 0 ? k - 1 : 0) / 2.0;
  };
  double index = 0.0;
  for (const auto& [key, count] : contingency) index += comb2(count);
  double sum_a = 0.0;
  for (const auto& [key, count] : row_sum) sum_a += comb2(count);
  double sum_b = 0.0;
  for (const auto& [key, count] : col_sum) sum_b += comb2(count);
  const double total = comb2(n);
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = (sum_a + sum_b) / 2.0;
  const double denom = max_index - expected;
  if (denom == 0.0) {
    // Both partitions trivial; identical means perfect agreement.
    return a == b || (sum_a == total && sum_b == total) ||
                   (sum_a == 0.0 && sum_b == 0.0)
               ? 1.0
               : 0.0;
  }
  return (index - expected) / denom;
}

double cluster_recovery(const ClusterAssignment& assignment,
                        const std::vector<int>& truth) {
  const std::vector<std::size_t> member = assignment.membership();
  if (member.size() != truth.size()) {
    throw std::invalid_argument("cluster_recovery: client count mismatch");
  }
  std::vector<int> pred(member.size());
  for (std::size_t i = 0; i < member.size(); ++i) pred[i] = static_cast<int>(member[i]);
  return std::max(0.0, adjusted_rand_index(pred, truth));
}

bool partitions_equal(const ClusterAssignment& assignment,
                      const std::vector<int>& truth) {
  const std::vector<std::size_t> member = assignment.membership();
  if (member.size() != truth.size()) return false;
  std::map<std::size_t, int> fwd;
  std::map<int, std::size_t> bwd;
  for (std::size_t i = 0; i < member.size(); ++i) {
    const auto f = fwd.emplace(member[i], truth[i]);
    if (!f.second && f.first->second != truth[i]) return false;
    const auto g = bwd.emplace(truth[i], member[i]);
    if (!g.second && g.first->second != member[i]) return false;
  }
  return true;
}

WeightDivergence weight_divergence(const std::vector<ModelParams>& models) {
  if (models.size() < 2) {
    throw std::invalid_argument("weight_divergence: need at least 2 models");
  }
  WeightDivergence out;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < models.size(); ++p) {
    const auto tp = trainable_tensors(models[p]);
    for (std::size_t q = p + 1; q < models.size(); ++q) {
      const auto tq = trainable_tensors(models[q]);
      if (tq.size() != tp.size()) {
        throw std::invalid_argument("weight_divergence: model layout mismatch");
      }
      double dist_sq = 0.0;
      for (std::size_t k = 0; k < tp.size(); ++k) {
        for (std::size_t i = 0; i < tp[k]->numel(); ++i) {
          const double d = (*tp[k])[i] - (*tq[k])[i];
          dist_sq += d * d;
        }
      }
      const double dist = std::sqrt(dist_sq);
      sum += dist;
      out.max = std::max(out.max, dist);
      ++pairs;
    }
  }
  out.mean = sum / static_cast<double>(pairs);
  return out;
}

}  // namespace distfl
