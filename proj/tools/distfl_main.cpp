#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distfl/checkpoint.hpp"
#include "distfl/extraction.hpp"
#include "distfl/gradcheck.hpp"
#include "distfl/orchestrator.hpp"
#include "distfl/report.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << content;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<double> threshold) {
  distfl::ExperimentConfig cfg = distfl::experiment_config_from_toml_file(config_path);
  if (const char* env_seed = std::getenv("DISTFL_SEED")) {
    cfg.seed = std::strtoull(env_seed, nullptr, 10);
    cfg.scenario.seed = cfg.seed;
  }
  if (threshold.has_value()) cfg.cluster_threshold = threshold;

  fs::create_directories(out_dir);
  distfl::Experiment experiment(cfg);
  std::vector<distfl::RoundReport> reports;
  for (int r = 0; r < cfg.rounds; ++r) {
    reports.push_back(experiment.step());
    const distfl::RoundReport& rep = reports.back();
    std::cout << "round " << rep.round << "  acc " << rep.overall_accuracy
              << "  clusters " << rep.assignment.clusters.size();
    if (rep.asr.has_value()) std::cout << "  asr " << *rep.asr;
    std::cout << "\n";
    if (rep.has_sim) {
      write_file(fs::path(out_dir) / ("sim_round_" + std::to_string(rep.round) + ".csv"),
                 distfl::sim_to_csv(rep.sim_used));
      write_file(fs::path(out_dir) /
                     ("sim_raw_round_" + std::to_string(rep.round) + ".csv"),
                 distfl::sim_to_csv(rep.sim_raw));
    }
    write_file(fs::path(out_dir) /
                   ("clusters_round_" + std::to_string(rep.round) + ".json"),
               distfl::clusters_to_json(rep.assignment));
  }

  std::vector<int> dist_types;
  for (const auto& shard : experiment.scenario().shards) {
    dist_types.push_back(shard.dist_type);
  }
  write_file(fs::path(out_dir) / "report.json", distfl::reports_to_json(reports));
  write_file(fs::path(out_dir) / "metrics.csv", distfl::metrics_csv(reports, dist_types));
  write_file(fs::path(out_dir) / "timings.json", distfl::timings_json(reports));
  const auto& models = experiment.state().cluster_models;
  for (std::size_t c = 0; c < models.size(); ++c) {
    distfl::save_model(models[c],
                       (fs::path(out_dir) / ("cluster_" + std::to_string(c) + ".json"))
                           .string());
  }
  std::cout << "wrote " << out_dir << "/report.json\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const distfl::GradCheckReport report =
      distfl::run_gradient_checks(seed, 10, &std::cout);
  std::cout << (report.pass ? "gradcheck PASS" : "gradcheck FAIL")
            << "  (max rel err: param " << report.max_param_rel_err << ", input "
            << report.max_input_rel_err << ", bn-match " << report.max_bn_match_rel_err
            << ", tolerance " << report.tolerance << ")\n";
  return report.pass ? 0 : 1;
}

int cmd_synth(const std::string& model_path, std::size_t z, double ratio, int steps,
              double lr, std::uint64_t seed, const std::string& out_path) {
  const distfl::ModelParams model = distfl::load_model(model_path);
  distfl::ExtractionConfig cfg;
  cfg.z = z;
  cfg.extract_ratio = ratio;
  cfg.synth_steps = steps;
  cfg.synth_lr = lr;
  cfg.seed = seed;
  const distfl::SynthesisResult result = distfl::synthesize(model, cfg);
  distfl::save_knowledge(result.knowledge, out_path);
  std::cout << "loss " << result.initial_loss << " -> " << result.knowledge.final_loss
            << ", wrote " << out_path << "\n";
  return 0;
}

int cmd_sim(const std::vector<std::string>& model_paths,
            const std::string& knowledge_path, bool raw) {
  const distfl::KnowledgeSet knowledge = distfl::load_knowledge(knowledge_path);
  std::vector<distfl::ModelParams> models;
  models.reserve(model_paths.size());
  for (const auto& path : model_paths) {
    models.push_back(distfl::load_model(path));
  }
  const distfl::SimilarityMatrix sim = distfl::build_sim(models, knowledge, !raw);
  std::cout << distfl::sim_to_csv(sim);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DistFL simulator: distribution-aware federated learning at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  double threshold_value = 0.0;
  auto* run = app.add_subcommand("run", "run a full experiment from a TOML config");
  run->add_option("config", config_path, "experiment config (TOML)")->required();
  run->add_option("--out", out_dir, "output directory");
  auto* threshold_opt =
      run->add_option("--threshold", threshold_value,
                      "force the clustering threshold instead of auto-detecting");

  std::uint64_t seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--seed", seed, "base seed");

  std::string model_path;
  std::string knowledge_out = "knowledge.json";
  std::size_t z = 200;
  double ratio = 50.0;
  int steps = 500;
  double lr = 0.1;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "standalone knowledge extraction from a checkpoint");
  synth->add_option("model", model_path, "model checkpoint (JSON)")->required();
  synth->add_option("--z", z, "number of synthesized inputs");
  synth->add_option("--ratio", ratio, "percent of BN channels to match");
  synth->add_option("--steps", steps, "gradient-descent steps");
  synth->add_option("--lr", lr, "step size");
  synth->add_option("--seed", synth_seed, "noise seed");
  synth->add_option("--out", knowledge_out, "output path");

  std::vector<std::string> model_paths;
  std::string knowledge_path;
  bool raw = false;
  auto* sim = app.add_subcommand("sim", "pairwise divergence matrix for checkpoints");
  sim->add_option("models", model_paths, "model checkpoints (JSON)")->required();
  sim->add_option("--knowledge", knowledge_path, "knowledge set (JSON)")->required();
  sim->add_flag("--raw", raw, "emit the one-directional matrix unsymmetrized");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      std::optional<double> threshold;
      if (threshold_opt->count() > 0) threshold = threshold_value;
      return cmd_run(config_path, out_dir, threshold);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(seed);
    if (synth->parsed()) {
      return cmd_synth(model_path, z, ratio, steps, lr, synth_seed, knowledge_out);
    }
    if (sim->parsed()) return cmd_sim(model_paths, knowledge_path, raw);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
