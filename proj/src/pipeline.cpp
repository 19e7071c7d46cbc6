#include "infoscc/pipeline.hpp"

#include "infoscc/image_io.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <sstream>

namespace infoscc {

namespace fs = std::filesystem;

namespace {

constexpr DiscriminatorKind kDiscriminators[] = {DiscriminatorKind::global, DiscriminatorKind::patch};
constexpr LossKind kLosses[] = {LossKind::hinge, LossKind::non_saturating, LossKind::lsgan};

bool dataset_present(const DatasetSpec& spec) { return fs::exists(spec.root / "labels.csv"); }

EncoderCheckpoint require_encoder(const PipelineConfig& cfg) {
  if (!fs::exists(cfg.encoder_path())) {
    throw MissingPrerequisite("encoder checkpoint " + cfg.encoder_path().string() +
                              " not found: run train-encoder first");
  }
  return load_encoder(cfg.encoder_path(), cfg.dataset.image_size);
}

ClassifierCheckpoint require_classifier(const PipelineConfig& cfg, const EncoderCheckpoint& enc, bool allow_mismatch) {
  if (!fs::exists(cfg.classifier_path())) {
    throw MissingPrerequisite("classifier checkpoint " + cfg.classifier_path().string() +
                              " not found: run train-classifier first");
  }
  return load_classifier(cfg.classifier_path(), enc.hash(), allow_mismatch);
}

fs::path final_checkpoint(const fs::path& dir) { return dir / "gan_final.ckpt"; }
fs::path last_checkpoint(const fs::path& dir) { return dir / "gan_last.ckpt"; }

// Training-relevant part of a train config: everything except schedule
// bookkeeping, which may change between a run and its resumption.
Json resume_key(TrainConfig c) {
  c.iterations = 1;
  c.eval_every = 0;
  c.checkpoint_every = 0;
  return to_json(c);
}

// Drops log lines written after the checkpoint we resume from.
void truncate_log(const fs::path& log, std::int64_t iteration) {
  std::ifstream in(log);
  if (!in) return;
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const Json j = Json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("iter", std::int64_t(0)) <= iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& line : keep) out << line << '\n';
}

GanState train_gan_in(const fs::path& dir, const TrainConfig& tc, const Dataset& data, const EncoderCheckpoint& enc,
                      const ClassifierCheckpoint& cls, const RunOptions& opt) {
  if (opt.force && fs::exists(dir)) {
    for (const char* name : {"gan_final.ckpt", "gan_last.ckpt", "gan_best.ckpt", "train_log.jsonl"}) {
      fs::remove(dir / name);
    }
  }
  std::optional<GanState> state;
  for (const fs::path& p : {final_checkpoint(dir), last_checkpoint(dir)}) {
    if (!fs::exists(p)) continue;
    GanState loaded = load_gan_state(p);
    if (resume_key(loaded.config) != resume_key(tc)) {
      throw ConfigError(p.string() + " was trained with a different train/generator configuration; rerun with --force");
    }
    if (p == final_checkpoint(dir) && loaded.iteration >= tc.iterations) {
      spdlog::info("stage 3: {} is complete ({} iterations), skipping", p.string(), loaded.iteration);
      return loaded;
    }
    spdlog::info("stage 3: resuming from {} at iteration {}", p.string(), loaded.iteration);
    truncate_log(dir / "train_log.jsonl", loaded.iteration);
    state = std::move(loaded);
    break;
  }
  if (!state) {
    state = init_gan_state(tc, data.image_size(), data.channels(), data.num_classes(), data.label_kind(), enc.hash(),
                           cls.hash(), data.attribute_names());
  }
  state->config.iterations = tc.iterations;
  state->config.eval_every = tc.eval_every;
  state->config.checkpoint_every = tc.checkpoint_every;

  TrainOptions options;
  options.output_dir = dir;
  options.allow_hash_mismatch = opt.allow_hash_mismatch;
  const std::int64_t report_every = std::max<std::int64_t>(1, tc.iterations / 20);
  options.on_iteration = [report_every](const GanState& s, const LossRecord&) {
    if (s.iteration % report_every == 0 || s.iteration == s.config.iterations) {
      spdlog::info("stage 3: iteration {}/{}: d {:.4f} g {:.4f} cls {:.4f} orth {:.4g}", s.iteration,
                   s.config.iterations, s.rolling.d_loss, s.rolling.g_loss, s.rolling.cls_loss,
                   s.rolling.orth_penalty);
    }
  };
  GanTrainer trainer(data, enc, cls, std::move(*state), options);
  trainer.run();
  return std::move(trainer.state());
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

MetricReport evaluate_state(const PipelineConfig& cfg, const GanState& s, const Dataset& data,
                            const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls) {
  if (s.encoder_hash != enc.hash() || s.classifier_hash != cls.hash()) {
    throw CheckpointError("generator checkpoint was trained against a different encoder/classifier");
  }
  MetricReport report =
      evaluate_generator(s.generator, enc.model, cls.model, data, cfg.metrics, s.attribute_names, s.config.conditional);
  report.config["checkpoint_hash"] = s.generator_hash();
  report.config["iteration"] = s.iteration;
  report.config["discriminator"] = to_string(s.config.discriminator);
  report.config["loss"] = to_string(s.config.loss);
  return report;
}

}  // namespace

void run_synth_data(const PipelineConfig& cfg, const RunOptions& opt) {
  if (!cfg.synthetic) throw ConfigError("the config has no synthetic section");
  if (dataset_present(cfg.dataset) && !opt.force) {
    spdlog::info("synth-data: {} already exists, skipping", cfg.dataset.root.string());
    return;
  }
  const Dataset data = make_synthetic_dataset(cfg.synthetic->count, cfg.synthetic->classes, cfg.dataset.image_size,
                                              cfg.seed, cfg.dataset.channels, cfg.dataset.split);
  write_dataset(data, cfg.dataset.root);
  spdlog::info("synth-data: wrote {} images ({} classes) to {}", data.size(), data.num_classes(),
               cfg.dataset.root.string());
}

Dataset prepare_dataset(const PipelineConfig& cfg) {
  if (!dataset_present(cfg.dataset) && cfg.synthetic) {
    throw MissingPrerequisite("dataset " + cfg.dataset.root.string() + " not found: run synth-data first");
  }
  Dataset data = load_dataset(cfg.dataset);
  if (data.skipped() > 0) spdlog::warn("dataset: skipped {} undecodable images", data.skipped());
  return data;
}

EncoderCheckpoint run_train_encoder(const PipelineConfig& cfg, const RunOptions& opt) {
  if (fs::exists(cfg.encoder_path()) && !opt.force) {
    spdlog::info("train-encoder: {} exists, skipping", cfg.encoder_path().string());
    return load_encoder(cfg.encoder_path(), cfg.dataset.image_size);
  }
  const Dataset data = prepare_dataset(cfg);
  EncoderCheckpoint ckpt = train_encoder(data, cfg.encoder, [&](int epoch, double loss) {
    spdlog::info("train-encoder: epoch {}/{} loss {:.4f}", epoch, cfg.encoder.epochs, loss);
  });
  fs::create_directories(cfg.output_dir);
  save_encoder(ckpt, cfg.encoder_path());
  spdlog::info("train-encoder: wrote {} (hash {})", cfg.encoder_path().string(), ckpt.hash());
  return ckpt;
}

ClassifierCheckpoint run_train_classifier(const PipelineConfig& cfg, const RunOptions& opt) {
  const EncoderCheckpoint enc = require_encoder(cfg);
  if (fs::exists(cfg.classifier_path()) && !opt.force) {
    spdlog::info("train-classifier: {} exists, skipping", cfg.classifier_path().string());
    return load_classifier(cfg.classifier_path(), enc.hash(), opt.allow_hash_mismatch);
  }
  const Dataset data = prepare_dataset(cfg);
  ClassifierCheckpoint ckpt = train_classifier(data, enc, cfg.classifier, [&](int epoch, double loss) {
    spdlog::info("train-classifier: epoch {}/{} loss {:.4f}", epoch, cfg.classifier.epochs, loss);
  });
  save_classifier(ckpt, cfg.classifier_path());
  spdlog::info("train-classifier: validation accuracy {:.2f}%, wrote {}", 100.0 * ckpt.val_accuracy,
               cfg.classifier_path().string());
  return ckpt;
}

GanState run_train_gan(const PipelineConfig& cfg, const RunOptions& opt) {
  const EncoderCheckpoint enc = require_encoder(cfg);
  const ClassifierCheckpoint cls = require_classifier(cfg, enc, opt.allow_hash_mismatch);
  const Dataset data = prepare_dataset(cfg);
  return train_gan_in(cfg.gan_dir(), cfg.train, data, enc, cls, opt);
}

MetricReport run_evaluate(const PipelineConfig& cfg, std::optional<fs::path> checkpoint) {
  const fs::path path = checkpoint.value_or(final_checkpoint(cfg.gan_dir()));
  if (!fs::exists(path)) {
    throw MissingPrerequisite("generator checkpoint " + path.string() + " not found: run train-gan first");
  }
  const EncoderCheckpoint enc = require_encoder(cfg);
  const ClassifierCheckpoint cls = require_classifier(cfg, enc, false);
  const Dataset data = prepare_dataset(cfg);
  const GanState s = load_gan_state(path);
  MetricReport report = evaluate_state(cfg, s, data, enc, cls);
  const fs::path out = path.parent_path() / (path.stem().string() + ".report.json");
  write_text(out, report.to_json().dump(2) + "\n");
  spdlog::info("evaluate: wrote {}", out.string());
  return report;
}

std::vector<fs::path> run_generate(const PipelineConfig& cfg, const fs::path& out_dir, int count,
                                   std::optional<int> label, std::optional<fs::path> checkpoint) {
  if (count < 1) throw ConfigError("count must be >= 1");
  const fs::path path = checkpoint.value_or(final_checkpoint(cfg.gan_dir()));
  if (!fs::exists(path)) {
    throw MissingPrerequisite("generator checkpoint " + path.string() + " not found: run train-gan first");
  }
  const GanState s = load_gan_state(path);
  const GeneratorArch& arch = s.generator.arch();
  if (label && (*label < 0 || *label >= arch.num_classes)) {
    throw ConfigError("label must be in [0, " + std::to_string(arch.num_classes) + ")");
  }
  std::vector<int> classes;
  if (label) {
    classes.assign(std::size_t(count), *label);
  } else {
    for (int k = 0; k < arch.num_classes; ++k) classes.insert(classes.end(), std::size_t(count), k);
  }
  Matrix<float> y = Matrix<float>::Zero(arch.num_classes, Index(classes.size()));
  if (s.config.conditional) {
    for (std::size_t i = 0; i < classes.size(); ++i) y(classes[i], Index(i)) = 1.0f;
  }
  Rng rng(derive_seed(cfg.seed, {0x6e4}));
  const LatentCode<float> z = sample_latent<float>(arch, int(classes.size()), rng);
  const ImageBatch<float> images = s.generator.generate(y, z);

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const fs::path p = out_dir / fmt::format("class{}_{:03}.png", classes[i], i);
    write_png(p, images, int(i));
    written.push_back(p);
  }
  const fs::path grid = out_dir / "grid.png";
  write_png(grid, tile_images(images, label ? std::min(count, 8) : count));
  written.push_back(grid);
  return written;
}

ClusterResult run_pseudo_label(const PipelineConfig& cfg, int k, const fs::path& out_root) {
  if (k < 2) throw ConfigError("pseudo-labeling needs k >= 2");
  const EncoderCheckpoint enc = require_encoder(cfg);
  Dataset data = prepare_dataset(cfg);
  std::vector<int> all(std::size_t(data.size()));
  for (int i = 0; i < data.size(); ++i) all[std::size_t(i)] = i;
  const Matrix<double> e = embed_dataset(enc.model, data, all).cast<double>();
  ClusterResult result = cluster_pseudo_labels(e, k, cfg.seed);
  if (result.degenerate) spdlog::warn("pseudo-label: all embeddings coincide; every item is in cluster 0");
  std::vector<std::string> names;
  for (int c = 0; c < k; ++c) names.push_back("cluster_" + std::to_string(c));
  data.relabel(LabelBatch::categorical(result.labels, k), names);
  write_dataset(data, out_root);
  spdlog::info("pseudo-label: {} items into {} clusters (inertia {:.4g}), wrote {}", data.size(), k, result.inertia,
               out_root.string());
  return result;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const RunOptions& opt) {
  const EncoderCheckpoint enc = require_encoder(cfg);
  const ClassifierCheckpoint cls = require_classifier(cfg, enc, opt.allow_hash_mismatch);
  const Dataset data = prepare_dataset(cfg);
  std::vector<AblationRow> rows;
  Json all = Json::array();
  for (DiscriminatorKind d : kDiscriminators) {
    for (LossKind l : kLosses) {
      TrainConfig tc = cfg.train;
      tc.discriminator = d;
      tc.loss = l;
      tc.iterations = cfg.ablation.iterations;
      tc.checkpoint_every = std::min(tc.checkpoint_every, tc.iterations);
      const fs::path dir = cfg.output_dir / "ablation" / (to_string(d) + "-" + to_string(l));
      spdlog::info("ablation: {} discriminator, {} loss", to_string(d), to_string(l));
      const GanState s = train_gan_in(dir, tc, data, enc, cls, opt);
      MetricReport report = evaluate_state(cfg, s, data, enc, cls);
      write_text(dir / "report.json", report.to_json().dump(2) + "\n");
      all.push_back({{"discriminator", to_string(d)}, {"loss", to_string(l)}, {"report", report.to_json()}});
      rows.push_back({d, l, std::move(report)});
    }
  }
  write_text(cfg.output_dir / "ablation" / "ablation.json", all.dump(2) + "\n");
  write_text(cfg.output_dir / "ablation" / "ablation.txt", ablation_table(rows));
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, MetricReport>> named;
  for (const auto& r : rows) {
    named.emplace_back((r.discriminator == DiscriminatorKind::patch ? "Patch D, " : "Global D, ") + to_string(r.loss),
                       r.report);
  }
  return render_table(named);
}

std::vector<std::string> execution_plan(const PipelineConfig& cfg, const std::string& command) {
  std::vector<std::string> plan;
  auto status = [](const fs::path& p) { return fs::exists(p) ? " (exists, will be reused)" : ""; };
  const bool all = command == "pipeline";
  if (command == "synth-data" || (all && cfg.synthetic)) {
    if (!cfg.synthetic) throw ConfigError("the config has no synthetic section");
    plan.push_back(fmt::format("synth-data: render {} images, {} classes, {}px into {}{}", cfg.synthetic->count,
                               cfg.synthetic->classes, cfg.dataset.image_size, cfg.dataset.root.string(),
                               dataset_present(cfg.dataset) ? " (exists, will be reused)" : ""));
  }
  if (command == "train-encoder" || all) {
    plan.push_back(fmt::format("train-encoder: {} epochs, batch {}, widths [{}], d_e {} -> {}{}", cfg.encoder.epochs,
                               cfg.encoder.batch_size, fmt::join(cfg.encoder.arch.widths, ","),
                               cfg.encoder.arch.embedding_dim, cfg.encoder_path().string(),
                               status(cfg.encoder_path())));
  }
  if (command == "train-classifier" || all) {
    plan.push_back(fmt::format("train-classifier: {} epochs, hidden [{}] -> {}{}", cfg.classifier.epochs,
                               fmt::join(cfg.classifier.hidden, ","), cfg.classifier_path().string(),
                               status(cfg.classifier_path())));
  }
  if (command == "train-gan" || all) {
    const fs::path last = last_checkpoint(cfg.gan_dir());
    plan.push_back(fmt::format("train-gan: {} iterations, {} discriminator, {} loss, n = {}, lambda_cls {}, "
                               "lambda_orth {} -> {}{}",
                               cfg.train.iterations, to_string(cfg.train.discriminator), to_string(cfg.train.loss),
                               cfg.train.regularization_period, cfg.train.lambda_cls, cfg.train.lambda_orth,
                               final_checkpoint(cfg.gan_dir()).string(),
                               fs::exists(final_checkpoint(cfg.gan_dir())) ? " (exists, will be reused)"
                               : fs::exists(last)                         ? " (resume from " + last.string() + ")"
                                                                          : ""));
  }
  if (command == "evaluate" || all) {
    plan.push_back(fmt::format("evaluate: FID/IS on {} samples, Chamfer on {}, attribute accuracy on {}",
                               cfg.metrics.samples, cfg.metrics.chamfer_samples, cfg.metrics.attribute_samples));
  }
  if (command == "ablation") {
    plan.push_back(fmt::format("ablation: 6 runs (global/patch x hinge/non-saturating/lsgan), {} iterations each, "
                               "under {}",
                               cfg.ablation.iterations, (cfg.output_dir / "ablation").string()));
  }
  if (plan.empty()) {
    if (command != "generate" && command != "pseudo-label") throw ConfigError("unknown command '" + command + "'");
    plan.push_back(command + ": reads existing checkpoints, trains nothing");
  }
  return plan;
}

}  // namespace infoscc
