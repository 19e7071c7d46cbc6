#pragma once

// Stage runners behind the CLI. Every runner is idempotent with respect to
// its outputs under the configured output directory: finished artifacts are
// loaded instead of recomputed, and stage 3 resumes from its last checkpoint.

#include "infoscc/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace infoscc {

/// A stage was run before the stage that produces its inputs.
class MissingPrerequisite : public Error {
 public:
  using Error::Error;
};

struct RunOptions {
  /// Recompute even when the output already exists.
  bool force = false;
  bool allow_hash_mismatch = false;
};

/// Renders the configured synthetic dataset into dataset.root.
void run_synth_data(const PipelineConfig& cfg, const RunOptions& opt = {});

Dataset prepare_dataset(const PipelineConfig& cfg);

EncoderCheckpoint run_train_encoder(const PipelineConfig& cfg, const RunOptions& opt = {});
ClassifierCheckpoint run_train_classifier(const PipelineConfig& cfg, const RunOptions& opt = {});
GanState run_train_gan(const PipelineConfig& cfg, const RunOptions& opt = {});

/// Evaluates `checkpoint` (default: the final stage-3 checkpoint) and writes
/// the report next to it.
MetricReport run_evaluate(const PipelineConfig& cfg, std::optional<std::filesystem::path> checkpoint = {});

/// Writes `count` samples per requested class as PNGs into `out_dir`.
std::vector<std::filesystem::path> run_generate(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                                                int count, std::optional<int> label = {},
                                                std::optional<std::filesystem::path> checkpoint = {});

/// Clusters encoder embeddings of the whole dataset into k groups and writes
/// a relabelled copy of the dataset to `out_root`.
ClusterResult run_pseudo_label(const PipelineConfig& cfg, int k, const std::filesystem::path& out_root);

struct AblationRow {
  DiscriminatorKind discriminator;
  LossKind loss;
  MetricReport report;
};

/// Trains and evaluates every (discriminator x loss) combination for
/// ablation.iterations iterations; writes ablation.json and ablation.txt.
std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const RunOptions& opt = {});

std::string ablation_table(const std::vector<AblationRow>& rows);

/// Human-readable steps `command` would execute, without side effects.
std::vector<std::string> execution_plan(const PipelineConfig& cfg, const std::string& command);

}  // namespace infoscc
