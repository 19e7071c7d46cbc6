// Command-line entry point: one subcommand per pipeline stage plus the
// generation service.

#include "infoscc/pipeline.hpp"
#include "infoscc/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

using namespace infoscc;
namespace fs = std::filesystem;

namespace {

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

struct Common {
  fs::path config;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool force = false;
  bool allow_hash_mismatch = false;
  std::string log_level = "info";
};

PipelineConfig load(const Common& c) {
  PipelineConfig cfg = load_config(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  return cfg;
}

RunOptions run_options(const Common& c) { return {c.force, c.allow_hash_mismatch}; }

void print_plan(const PipelineConfig& cfg, const std::string& command) {
  std::cout << "config:\n" << config_to_json(cfg).dump(2) << "\nplan:\n";
  for (const auto& step : execution_plan(cfg, command)) std::cout << "  " << step << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive-conditioned GAN pipeline: encoder, classifier, generator, metrics, service"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error")->capture_default_str();

  auto stage = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", common.config, "pipeline config (YAML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_flag("--dry-run", common.dry_run, "validate the config and print the plan");
    sub->add_flag("--force", common.force, "recompute outputs that already exist");
    sub->add_flag("--allow-hash-mismatch", common.allow_hash_mismatch,
                  "continue when checkpoint hashes disagree");
    return sub;
  };

  CLI::App* synth = stage("synth-data", "render the synthetic dataset");
  CLI::App* enc = stage("train-encoder", "stage 1: contrastive encoder");
  CLI::App* cls = stage("train-classifier", "stage 2: attribute classifier on frozen embeddings");
  CLI::App* gan = stage("train-gan", "stage 3: conditional generator (resumes from gan_last.ckpt)");
  CLI::App* pipeline = stage("pipeline", "every stage in order, then evaluate");
  CLI::App* ablation = stage("ablation", "all discriminator x loss combinations");

  std::optional<fs::path> checkpoint;
  CLI::App* evaluate = stage("evaluate", "metric report for a generator checkpoint");
  evaluate->add_option("--checkpoint", checkpoint, "generator checkpoint (default: gan/gan_final.ckpt)");

  fs::path out_dir = "samples";
  int count = 8;
  std::optional<int> label;
  CLI::App* generate = stage("generate", "write generated samples as PNG");
  generate->add_option("--checkpoint", checkpoint, "generator checkpoint (default: gan/gan_final.ckpt)");
  generate->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
  generate->add_option("-n,--count", count, "samples per class")->capture_default_str()->check(CLI::PositiveNumber);
  generate->add_option("--label", label, "only this class");

  int k = 3;
  fs::path pseudo_out;
  CLI::App* pseudo = stage("pseudo-label", "k-means pseudo-labels from encoder embeddings");
  pseudo->add_option("-k,--clusters", k, "number of clusters")->capture_default_str();
  pseudo->add_option("-o,--out", pseudo_out, "root of the relabelled dataset")->required();

  ServiceOptions service;
  bool no_cors = false;
  std::optional<fs::path> serve_config;
  CLI::App* serve = app.add_subcommand("serve", "HTTP generation service");
  serve->add_option("--checkpoint", checkpoint, "generator checkpoint; without one every endpoint answers 503");
  serve->add_option("-c,--config", serve_config, "take host/port/cors defaults from a pipeline config");
  serve->add_option("--host", service.host);
  serve->add_option("--port", service.port);
  serve->add_flag("--no-cors", no_cors, "do not send CORS headers");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(common.log_level));

  try {
    if (serve->parsed()) {
      ServiceOptions opt;
      if (serve_config) {
        const PipelineConfig cfg = load_config(*serve_config);
        opt = {cfg.service.host, cfg.service.port, cfg.service.cors};
      }
      if (serve->count("--host")) opt.host = service.host;
      if (serve->count("--port")) opt.port = service.port;
      if (no_cors) opt.cors = false;
      GenerationModel model = checkpoint ? GenerationModel::load(*checkpoint) : GenerationModel();
      if (!model.loaded()) spdlog::warn("no checkpoint given; endpoints will answer 503");
      Service server(std::move(model), opt);
      const int port = server.bind();
      g_service = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("serving on http://{}:{}", opt.host, port);
      server.listen();
      g_service = nullptr;
      return 0;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const PipelineConfig cfg = load(common);
    if (common.dry_run) {
      print_plan(cfg, command);
      return 0;
    }
    const RunOptions opt = run_options(common);
    if (synth->parsed()) {
      run_synth_data(cfg, opt);
    } else if (enc->parsed()) {
      run_train_encoder(cfg, opt);
    } else if (cls->parsed()) {
      run_train_classifier(cfg, opt);
    } else if (gan->parsed()) {
      run_train_gan(cfg, opt);
    } else if (pipeline->parsed()) {
      if (cfg.synthetic) run_synth_data(cfg, opt);
      run_train_encoder(cfg, opt);
      run_train_classifier(cfg, opt);
      run_train_gan(cfg, opt);
      const MetricReport report = run_evaluate(cfg);
      std::cout << render_table({{"final", report}});
    } else if (evaluate->parsed()) {
      const MetricReport report = run_evaluate(cfg, checkpoint);
      std::cout << report.to_json().dump(2) << "\n" << render_table({{"model", report}});
    } else if (generate->parsed()) {
      for (const auto& p : run_generate(cfg, out_dir, count, label, checkpoint)) std::cout << p.string() << "\n";
    } else if (pseudo->parsed()) {
      run_pseudo_label(cfg, k, pseudo_out);
    } else if (ablation->parsed()) {
      std::cout << ablation_table(run_ablation(cfg, opt));
    }
    return 0;
  } catch (const MissingPrerequisite& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
