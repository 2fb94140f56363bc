#include "distfl/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace distfl {

namespace {

using nlohmann::json;

void append_vector(std::string& out, const Tensor& t) {
  out += '[';
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (i) out += ',';
    out += format_double(t[i]);
  }
  out += ']';
}

void append_matrix(std::string& out, const Tensor& t) {
  out += '[';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (c) out += ',';
      out += format_double(t.at(r, c));
    }
    out += ']';
  }
  out += ']';
}

Tensor vector_from_json(const json& j) {
  std::vector<double> data;
  data.reserve(j.size());
  for (const auto& v : j) data.push_back(v.get<double>());
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor matrix_from_json(const json& j) {
  const std::size_t rows = j.size();
  if (rows == 0) throw std::invalid_argument("checkpoint: empty weight matrix");
  const std::size_t cols = j[0].size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : j) {
    if (row.size() != cols) throw std::invalid_argument("checkpoint: ragged weight matrix");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string model_to_json(const ModelParams& model) {
  std::string out;
  out += "{\"input_dim\":" + std::to_string(model.input_dim);
  out += ",\"num_classes\":" + std::to_string(model.num_classes);
  out += ",\"layers\":[";
  bool first = true;
  for (const Layer& layer : model.layers) {
    if (!first) out += ',';
    first = false;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      out += "{\"kind\":\"linear\",\"weight\":";
      append_matrix(out, lin->weight);
      out += ",\"bias\":";
      append_vector(out, lin->bias);
      out += '}';
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      out += "{\"kind\":\"batchnorm\",\"gamma\":";
      append_vector(out, bn->gamma);
      out += ",\"beta\":";
      append_vector(out, bn->beta);
      out += ",\"running_mean\":";
      append_vector(out, bn->running_mean);
      out += ",\"running_var\":";
      append_vector(out, bn->running_var);
      out += ",\"eps\":" + format_double(bn->eps);
      out += ",\"momentum\":" + format_double(bn->momentum);
      out += '}';
    } else {
      out += "{\"kind\":\"relu\"}";
    }
  }
  out += "]}";
  return out;
}

ModelParams model_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelParams model;
  model.input_dim = j.at("input_dim").get<std::size_t>();
  model.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    const std::string kind = lj.at("kind").get<std::string>();
    if (kind == "linear") {
      LinearLayer lin;
      lin.weight = matrix_from_json(lj.at("weight"));
      lin.bias = vector_from_json(lj.at("bias"));
      model.layers.emplace_back(std::move(lin));
    } else if (kind == "batchnorm") {
      BatchNormLayer bn;
      bn.gamma = vector_from_json(lj.at("gamma"));
      bn.beta = vector_from_json(lj.at("beta"));
      bn.running_mean = vector_from_json(lj.at("running_mean"));
      bn.running_var = vector_from_json(lj.at("running_var"));
      bn.eps = lj.at("eps").get<double>();
      bn.momentum = lj.at("momentum").get<double>();
      model.layers.emplace_back(std::move(bn));
    } else if (kind == "relu") {
      model.layers.emplace_back(ReluLayer{});
    } else {
      throw std::invalid_argument("checkpoint: unknown layer kind '" + kind + "'");
    }
  }
  model.validate();
  return model;
}

void save_model(const ModelParams& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << model_to_json(model);
}

ModelParams load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return model_from_json(ss.str());
}

std::string model_hash(const ModelParams& model) {
  const std::string text = model_to_json(model);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace distfl
