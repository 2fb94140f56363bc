#include "distfl/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "distfl/checkpoint.hpp"
#include "distfl/rng.hpp"

namespace distfl {

void ExtractionConfig::validate() const {
  if (z < 2) throw std::invalid_argument("extraction: z must be >= 2 (batch variance)");
  if (!(extract_ratio > 0.0) || extract_ratio > 100.0) {
    throw std::invalid_argument("extraction: extract_ratio must be in (0, 100]");
  }
  if (synth_steps < 1) throw std::invalid_argument("extraction: synth_steps must be >= 1");
  if (!(synth_lr > 0.0)) throw std::invalid_argument("extraction: synth_lr must be > 0");
}

ModelParams pre_aggregate(const std::vector<ModelParams>& models) {
  if (models.empty()) throw std::invalid_argument("pre_aggregate: no models");
  ModelParams out = models.front();
  auto acc = state_tensors(out);
  for (std::size_t m = 1; m < models.size(); ++m) {
    const auto src = state_tensors(models[m]);
    if (src.size() != acc.size()) {
      throw std::invalid_argument("pre_aggregate: model layout mismatch");
    }
    for (std::size_t k = 0; k < acc.size(); ++k) {
      if (!acc[k]->same_shape(*src[k])) {
        throw std::invalid_argument("pre_aggregate: tensor shape mismatch");
      }
      for (std::size_t i = 0; i < acc[k]->numel(); ++i) {
        (*acc[k])[i] += (*src[k])[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (Tensor* t : acc) {
    for (double& v : t->data) v *= inv;
  }
  return out;
}

ChannelSelection select_channels(const ModelParams& model, double extract_ratio) {
  if (!(extract_ratio > 0.0) || extract_ratio > 100.0) {
    throw std::invalid_argument("select_channels: extract_ratio must be in (0, 100]");
  }
  if (model.bn_layer_count() == 0) {
    throw std::invalid_argument("select_channels: model has no batchnorm layers");
  }
  ChannelSelection sel;
  for (const Layer& layer : model.layers) {
    const auto* bn = std::get_if<BatchNormLayer>(&layer);
    if (bn == nullptr) continue;
    const std::size_t c = bn->channels();
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(extract_ratio / 100.0 * static_cast<double>(c))));
    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ga = std::abs(bn->gamma[a]);
      const double gb = std::abs(bn->gamma[b]);
      if (ga != gb) return ga > gb;
      return a < b;  // ties: lower channel index wins
    });
    order.resize(std::min(keep, c));
    std::sort(order.begin(), order.end());
    sel.per_layer.push_back(std::move(order));
  }
  return sel;
}

SynthesisResult synthesize(const ModelParams& model, const ExtractionConfig& cfg) {
  cfg.validate();
  model.validate();
  const ChannelSelection selection = select_channels(model, cfg.extract_ratio);

  RngStream rng(cfg.seed, purpose::synthesis);
  Tensor items = Tensor::zeros({cfg.z, model.input_dim});
  for (double& v : items.data) v = rng.normal();

  SynthesisResult out;
  out.initial_loss =
      bn_match_loss(model, items, selection, cfg.squared_norms);

  double loss = out.initial_loss;
  for (int step = 0; step < cfg.synth_steps; ++step) {
    const BnMatchResult r =
        bn_match_loss_and_input_grad(model, items, selection, cfg.squared_norms);
    loss = r.loss;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("synthesize: loss diverged at step " +
                               std::to_string(step));
    }
    for (std::size_t i = 0; i < items.numel(); ++i) {
      items[i] -= cfg.synth_lr * r.input_grad[i];
    }
  }
  loss = bn_match_loss(model, items, selection, cfg.squared_norms);
  if (!std::isfinite(loss) || !items.all_finite()) {
    throw std::runtime_error("synthesize: loss diverged at step " +
                             std::to_string(cfg.synth_steps));
  }

  out.knowledge.items = std::move(items);
  out.knowledge.final_loss = loss;
  out.knowledge.source_model_hash = model_hash(model);
  return out;
}

std::string knowledge_to_json(const KnowledgeSet& k) {
  std::string out = "{\"items\":[";
  for (std::size_t r = 0; r < k.items.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (std::size_t c = 0; c < k.items.cols(); ++c) {
      if (c) out += ',';
      out += format_double(k.items.at(r, c));
    }
    out += ']';
  }
  out += "],\"source_model_hash\":\"" + k.source_model_hash + "\"";
  out += ",\"final_loss\":" + format_double(k.final_loss) + "}";
  return out;
}

KnowledgeSet knowledge_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  KnowledgeSet k;
  const auto& items = j.at("items");
  const std::size_t rows = items.size();
  if (rows == 0) throw std::invalid_argument("knowledge: empty items");
  const std::size_t cols = items[0].size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : items) {
    if (row.size() != cols) throw std::invalid_argument("knowledge: ragged items");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  k.items = Tensor({rows, cols}, std::move(data));
  k.source_model_hash = j.value("source_model_hash", std::string{});
  k.final_loss = j.at("final_loss").get<double>();
  return k;
}

void save_knowledge(const KnowledgeSet& k, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << knowledge_to_json(k);
}

KnowledgeSet load_knowledge(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return knowledge_from_json(ss.str());
}

}  // namespace distfl
