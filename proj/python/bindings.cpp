#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distfl/checkpoint.hpp"
#include "distfl/clustering.hpp"
#include "distfl/extraction.hpp"
#include "distfl/gradcheck.hpp"
#include "distfl/metrics.hpp"
#include "distfl/nn.hpp"
#include "distfl/orchestrator.hpp"
#include "distfl/scenario.hpp"

namespace py = pybind11;
using namespace distfl;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  const py::buffer_info info = arr.request();
  std::vector<std::size_t> shape;
  for (py::ssize_t e : info.shape) shape.push_back(static_cast<std::size_t>(e));
  const double* ptr = static_cast<const double*>(info.ptr);
  return Tensor(std::move(shape),
                std::vector<double>(ptr, ptr + static_cast<std::size_t>(info.size)));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> out(shape);
  std::copy(t.data.begin(), t.data.end(), static_cast<double*>(out.request().ptr));
  return out;
}

SimilarityMatrix sim_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  const Tensor t = tensor_from_array(arr);
  if (t.shape.size() != 2 || t.rows() != t.cols()) {
    throw std::invalid_argument("similarity matrix must be square");
  }
  SimilarityMatrix sim = SimilarityMatrix::zeros(t.rows());
  sim.div = t.data;
  return sim;
}

ClusterAssignment assignment_from_lists(const std::vector<std::vector<std::size_t>>& clusters) {
  ClusterAssignment a;
  a.clusters = clusters;
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distribution-aware federated learning simulator core";

  py::class_<ModelParams>(m, "Model")
      .def_readonly("input_dim", &ModelParams::input_dim)
      .def_readonly("num_classes", &ModelParams::num_classes)
      .def("to_json", &model_to_json)
      .def("hash", &model_hash)
      .def("__repr__", [](const ModelParams& mp) {
        return "<distfl.Model input_dim=" + std::to_string(mp.input_dim) +
               " num_classes=" + std::to_string(mp.num_classes) + ">";
      });

  m.def(
      "make_mlp_bn",
      [](std::size_t input_dim, const std::vector<std::size_t>& hidden,
         std::size_t num_classes, std::uint64_t seed) {
        RngStream rng(seed, purpose::model_init);
        return make_mlp_bn(input_dim, hidden, num_classes, rng);
      },
      py::arg("input_dim"), py::arg("hidden"), py::arg("num_classes"),
      py::arg("seed") = 0,
      "Build a randomly initialized Linear-BatchNorm-ReLU stack.");

  m.def("model_from_json", &model_from_json, py::arg("text"));

  m.def(
      "eval_probs",
      [](const ModelParams& model, const py::array_t<double>& batch) {
        const ForwardResult r = forward(model, tensor_from_array(batch), ForwardMode::eval);
        return array_from_tensor(r.probs);
      },
      py::arg("model"), py::arg("batch"),
      "Eval-mode softmax probabilities, one row per input row.");

  m.def(
      "train_local",
      [](const ModelParams& model, const py::array_t<double>& features,
         const std::vector<int>& labels, double learning_rate, double momentum,
         int epochs, std::size_t batch_size, std::uint64_t seed) {
        ClientShard shard;
        shard.features = tensor_from_array(features);
        shard.labels = labels;
        TrainConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.momentum = momentum;
        cfg.local_epochs = epochs;
        cfg.batch_size = batch_size;
        return local_train(shard, model, cfg, RngStream(seed, purpose::shuffle));
      },
      py::arg("model"), py::arg("features"), py::arg("labels"),
      py::arg("learning_rate") = 0.05, py::arg("momentum") = 0.9,
      py::arg("epochs") = 5, py::arg("batch_size") = 16, py::arg("seed") = 0);

  m.def("pre_aggregate", &pre_aggregate, py::arg("models"));

  m.def(
      "select_channels",
      [](const ModelParams& model, double ratio) {
        return select_channels(model, ratio).per_layer;
      },
      py::arg("model"), py::arg("extract_ratio") = 50.0);

  m.def(
      "synthesize",
      [](const ModelParams& model, std::size_t z, double ratio, int steps, double lr,
         std::uint64_t seed) {
        ExtractionConfig cfg;
        cfg.z = z;
        cfg.extract_ratio = ratio;
        cfg.synth_steps = steps;
        cfg.synth_lr = lr;
        cfg.seed = seed;
        const SynthesisResult r = synthesize(model, cfg);
        return py::make_tuple(array_from_tensor(r.knowledge.items),
                              r.knowledge.final_loss, r.initial_loss);
      },
      py::arg("model"), py::arg("z") = 200, py::arg("extract_ratio") = 50.0,
      py::arg("steps") = 500, py::arg("lr") = 0.1, py::arg("seed") = 0,
      "Returns (items, final_loss, initial_loss).");

  m.def(
      "build_sim",
      [](const std::vector<ModelParams>& models, const py::array_t<double>& knowledge,
         bool symmetrize) {
        KnowledgeSet k;
        k.items = tensor_from_array(knowledge);
        const SimilarityMatrix sim = build_sim(models, k, symmetrize);
        Tensor t({sim.n, sim.n}, sim.div);
        return array_from_tensor(t);
      },
      py::arg("models"), py::arg("knowledge"), py::arg("symmetrize") = true);

  m.def(
      "threshold_cluster",
      [](const py::array_t<double>& sim, std::optional<double> threshold) {
        const ClusterAssignment a = threshold_cluster(sim_from_array(sim), threshold);
        return py::make_tuple(a.clusters, a.threshold_used);
      },
      py::arg("sim"), py::arg("threshold") = py::none(),
      "Returns (clusters, threshold_used).");

  m.def(
      "cluster_aggregate",
      [](const std::vector<ModelParams>& models,
         const std::vector<std::vector<std::size_t>>& clusters) {
        return cluster_aggregate(models, assignment_from_lists(clusters));
      },
      py::arg("models"), py::arg("clusters"));

  m.def(
      "accuracy",
      [](const ModelParams& model, const py::array_t<double>& features,
         const std::vector<int>& labels) {
        ClientShard shard;
        shard.features = tensor_from_array(features);
        shard.labels = labels;
        return accuracy(model, shard);
      },
      py::arg("model"), py::arg("features"), py::arg("labels"));

  m.def("adjusted_rand_index", &adjusted_rand_index, py::arg("a"), py::arg("b"));

  m.def(
      "cluster_recovery",
      [](const std::vector<std::vector<std::size_t>>& clusters,
         const std::vector<int>& truth) {
        return cluster_recovery(assignment_from_lists(clusters), truth);
      },
      py::arg("clusters"), py::arg("truth"));

  m.def(
      "weight_divergence",
      [](const std::vector<ModelParams>& models) {
        const WeightDivergence d = weight_divergence(models);
        return py::make_tuple(d.mean, d.max);
      },
      py::arg("models"));

  py::class_<ClientShard>(m, "Shard")
      .def_property_readonly("features",
                             [](const ClientShard& s) { return array_from_tensor(s.features); })
      .def_readonly("labels", &ClientShard::labels)
      .def_readonly("client_id", &ClientShard::client_id)
      .def_readonly("dist_type", &ClientShard::dist_type)
      .def("to_json", &shard_to_json)
      .def("__len__", [](const ClientShard& s) { return s.size(); });

  m.def(
      "generate_scenario",
      [](const std::string& scenario, int num_types, int clients_per_type,
         int samples_per_client, int num_classes, int feature_dim,
         double class_separation, double shift_magnitude, std::uint64_t seed) {
        ScenarioConfig cfg;
        cfg.scenario = scenario_kind_from_string(scenario);
        cfg.num_types = num_types;
        cfg.clients_per_type = clients_per_type;
        cfg.samples_per_client = samples_per_client;
        cfg.num_classes = num_classes;
        cfg.feature_dim = feature_dim;
        cfg.class_separation = class_separation;
        cfg.shift_magnitude = shift_magnitude;
        cfg.seed = seed;
        const Scenario s = generate_scenario(cfg);
        return py::make_tuple(s.shards, s.test_sets);
      },
      py::arg("scenario") = "category_imbalance", py::arg("num_types") = 2,
      py::arg("clients_per_type") = 2, py::arg("samples_per_client") = 32,
      py::arg("num_classes") = 4, py::arg("feature_dim") = 8,
      py::arg("class_separation") = 4.0, py::arg("shift_magnitude") = 2.0,
      py::arg("seed") = 0,
      "Returns (shards, per-type test sets).");

  m.def(
      "run_experiment",
      [](const std::string& config_toml) {
        const ExperimentConfig cfg = experiment_config_from_toml_text(config_toml);
        return reports_to_json(run_experiment(cfg));
      },
      py::arg("config_toml"),
      "Run a full experiment from TOML text; returns the report JSON.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int num_models) {
        const GradCheckReport r = run_gradient_checks(seed, num_models, nullptr);
        py::dict out;
        out["pass"] = r.pass;
        out["max_param_rel_err"] = r.max_param_rel_err;
        out["max_input_rel_err"] = r.max_input_rel_err;
        out["max_bn_match_rel_err"] = r.max_bn_match_rel_err;
        return out;
      },
      py::arg("seed") = 0, py::arg("num_models") = 3);
}
