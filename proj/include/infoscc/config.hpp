#pragma once

// Pipeline configuration: one YAML file with a section per stage. Unknown
// keys are rejected, relative paths resolve against the file's directory and
// INFOSCC_<SECTION>_<KEY> environment variables override file values.

#include "infoscc/archive.hpp"
#include "infoscc/classifier.hpp"
#include "infoscc/data.hpp"
#include "infoscc/encoder.hpp"
#include "infoscc/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace infoscc {

struct SyntheticSpec {
  int count = 3000;
  int classes = 3;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool cors = true;
};

struct AblationConfig {
  std::int64_t iterations = 1000;
};

struct PipelineConfig {
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  /// When set, `synth-data` renders this dataset into dataset.root.
  std::optional<SyntheticSpec> synthetic;
  EncoderConfig encoder;
  ClassifierConfig classifier;
  TrainConfig train;
  EvalConfig metrics;
  ServiceConfig service;
  AblationConfig ablation;

  /// Propagates the top-level seed into every stage.
  void apply_seed(std::uint64_t s);
  void validate() const;

  std::filesystem::path encoder_path() const { return output_dir / "encoder.ckpt"; }
  std::filesystem::path classifier_path() const { return output_dir / "classifier.ckpt"; }
  std::filesystem::path gan_dir() const { return output_dir / "gan"; }
};

using Environment = std::map<std::string, std::string>;

/// Current process environment restricted to INFOSCC_* variables.
Environment infoscc_environment();

/// Parses YAML text; `base_dir` anchors relative paths.
PipelineConfig parse_config(const std::string& yaml, const std::filesystem::path& base_dir,
                            const Environment& env = {});

PipelineConfig load_config(const std::filesystem::path& path, const Environment& env = infoscc_environment());

/// Effective configuration as JSON (used for --dry-run and report echoes).
Json config_to_json(const PipelineConfig& cfg);

}  // namespace infoscc
