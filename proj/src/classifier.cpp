#include "infoscc/classifier.hpp"

#include "infoscc/archive.hpp"

#include <spdlog/spdlog.h>

#include <numeric>

namespace infoscc {

void ClassifierArch::validate() const {
  if (input_dim < 1) throw ConfigError("classifier input_dim must be positive");
  for (int h : hidden)
    if (h < 1) throw ConfigError("classifier hidden sizes must be positive");
  if (kind == LabelKind::categorical && num_classes < 2) throw ConfigError("categorical classifier needs K >= 2");
  if (kind == LabelKind::multilabel && num_classes < 1) throw ConfigError("multilabel classifier needs K >= 1");
}

void ClassifierConfig::validate() const {
  for (int h : hidden)
    if (h < 1) throw ConfigError("classifier hidden sizes must be positive");
  if (epochs < 1) throw ConfigError("classifier epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("classifier batch size must be >= 1");
}

std::string ClassifierCheckpoint::hash() const {
  return parameter_hash(const_cast<Classifier<float>&>(model).parameters());
}

double label_accuracy(const Matrix<float>& probs, const LabelBatch& labels, double threshold) {
  if (probs.cols() != labels.size() || probs.rows() != labels.num_classes()) {
    throw ShapeError("label_accuracy: shapes differ");
  }
  if (probs.cols() == 0) return 0.0;
  std::int64_t correct = 0, total = 0;
  for (Index j = 0; j < probs.cols(); ++j) {
    if (labels.kind == LabelKind::categorical) {
      Index pred = 0;
      probs.col(j).maxCoeff(&pred);
      correct += int(pred) == labels.class_index(int(j));
      ++total;
    } else {
      for (Index k = 0; k < probs.rows(); ++k) {
        const bool on = probs(k, j) >= float(threshold);
        correct += on == (labels.targets(k, j) > 0.5f);
        ++total;
      }
    }
  }
  return double(correct) / double(total);
}

ClassifierCheckpoint train_classifier(const Dataset& data, const EncoderCheckpoint& encoder,
                                      const ClassifierConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const std::string encoder_hash = encoder.hash();

  const auto& train_idx = data.indices(Split::train);
  const auto& val_split = data.indices(Split::val);
  const std::vector<int>& val_idx = val_split.empty() ? train_idx : val_split;
  const Matrix<float> train_e = embed_dataset(encoder.model, data, train_idx);
  const Matrix<float> val_e = embed_dataset(encoder.model, data, val_idx);
  LabelBatch train_labels = data.labels(train_idx);
  const LabelBatch val_labels = data.labels(val_idx);

  Rng rng(derive_seed(cfg.seed, {0xc1a5}));
  if (cfg.shuffle_labels) {
    std::vector<int> perm(std::size_t(train_labels.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    train_labels = train_labels.select(perm);
  }

  ClassifierArch arch{encoder.config.arch.embedding_dim, cfg.hidden, data.num_classes(), data.label_kind()};
  ClassifierCheckpoint ckpt{Classifier<float>(arch, rng), cfg, encoder_hash, data.attribute_names(), 0.0, {}};
  Classifier<float>& model = ckpt.model;
  Adam<float> opt(cfg.optimizer);
  const ParameterList<float> params = model.parameters();

  Vector<float> weights;
  if (cfg.balance_classes) {
    weights.resize(arch.num_classes);
    const float n = float(train_labels.size());
    for (int k = 0; k < arch.num_classes; ++k) {
      const float count = train_labels.targets.row(k).sum();
      weights[k] = count > 0.0f ? n / (float(arch.num_classes) * count) : 1.0f;
    }
  }

  const int n = int(train_idx.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      std::span<const int> cols(order.data() + start, std::size_t(count));
      Matrix<float> e(train_e.rows(), count);
      for (int j = 0; j < count; ++j) e.col(j) = train_e.col(cols[j]);
      const LabelBatch y = train_labels.select(cols);

      zero_grad(params);
      const Matrix<float> logits = model.forward_logits(e);
      const Matrix<float> targets = y.as<float>();
      auto [loss, grad] = logits_loss_with_grad<float>(logits, targets, arch.kind,
                                                       cfg.balance_classes ? &weights : nullptr);
      if (!std::isfinite(loss)) throw TrainingError("classifier loss is not finite at epoch " + std::to_string(epoch));
      model.backward_logits(grad);
      opt.step(params);
      sum += loss;
      ++batches;
    }
    const double mean = sum / std::max(1, batches);
    ckpt.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }

  ckpt.val_accuracy = label_accuracy(model.classify(val_e), val_labels);
  spdlog::info("classifier validation accuracy {:.2f}%", 100.0 * ckpt.val_accuracy);
  if (encoder.hash() != encoder_hash) throw TrainingError("encoder parameters changed during classifier training");
  return ckpt;
}

void save_classifier(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path) {
  ArchiveWriter writer("classifier");
  const ClassifierArch& arch = ckpt.model.arch();
  writer.metadata() = {{"K", arch.num_classes},
                       {"label_kind", to_string(arch.kind)},
                       {"d_e", arch.input_dim},
                       {"hidden", arch.hidden},
                       {"encoder_hash", ckpt.encoder_hash},
                       {"attribute_names", ckpt.attribute_names},
                       {"val_accuracy", ckpt.val_accuracy},
                       {"epoch_losses", ckpt.epoch_losses},
                       {"seed", ckpt.config.seed},
                       {"revision", build_revision()},
                       {"hash", ckpt.hash()}};
  writer.add_parameters(const_cast<Classifier<float>&>(ckpt.model).parameters(), "");
  writer.write(path);
}

ClassifierCheckpoint load_classifier(const std::filesystem::path& path, std::optional<std::string> expected_encoder_hash,
                                     bool allow_encoder_mismatch) {
  const Archive archive = Archive::read(path);
  if (archive.kind() != "classifier") throw CheckpointError(path.string() + " is not a classifier checkpoint");
  const Json& meta = archive.metadata();
  ClassifierCheckpoint ckpt;
  ClassifierArch arch;
  try {
    arch.num_classes = meta.at("K").get<int>();
    arch.kind = label_kind_from_string(meta.at("label_kind").get<std::string>());
    arch.input_dim = meta.at("d_e").get<int>();
    arch.hidden = meta.at("hidden").get<std::vector<int>>();
    ckpt.encoder_hash = meta.at("encoder_hash").get<std::string>();
    ckpt.attribute_names = meta.at("attribute_names").get<std::vector<std::string>>();
    ckpt.val_accuracy = meta.at("val_accuracy").get<double>();
    ckpt.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
    ckpt.config.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.config.hidden = arch.hidden;
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": bad classifier metadata: " + e.what());
  }
  if (expected_encoder_hash && *expected_encoder_hash != ckpt.encoder_hash) {
    if (!allow_encoder_mismatch) {
      throw CheckpointError(path.string() + ": classifier was trained on encoder " + ckpt.encoder_hash +
                            ", not " + *expected_encoder_hash);
    }
    spdlog::warn("classifier encoder hash mismatch overridden ({} vs {})", ckpt.encoder_hash, *expected_encoder_hash);
  }
  Rng rng(0);
  ckpt.model = Classifier<float>(arch, rng);
  archive.load_parameters(ckpt.model.parameters(), "");
  if (meta.contains("hash") && meta.at("hash").get<std::string>() != ckpt.hash()) {
    throw CheckpointError(path.string() + ": classifier parameter hash mismatch");
  }
  return ckpt;
}

}  // namespace infoscc
