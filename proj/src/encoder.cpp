#include "infoscc/encoder.hpp"

#include "infoscc/archive.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>

namespace infoscc {

void EncoderArch::validate() const {
  if (image_size < 2) throw ConfigError("encoder image_size must be >= 2");
  if (channels != 1 && channels != 3) throw ConfigError("encoder channels must be 1 or 3");
  if (widths.empty()) throw ConfigError("encoder needs at least one stage");
  int size = image_size;
  for (int w : widths) {
    if (w < 1) throw ConfigError("encoder widths must be positive");
    size = (size + 2 - 3) / 2 + 1;
  }
  if (size < 1) throw ConfigError("too many encoder stages for the image size");
  if (blocks_per_stage < 0) throw ConfigError("blocks_per_stage must be >= 0");
  if (embedding_dim < 1 || projection_dim < 1 || projection_hidden < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
}

void EncoderConfig::validate() const {
  arch.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (batch_size < 2) throw ConfigError("encoder batch size must be >= 2");
  if (epochs < 1) throw ConfigError("encoder epochs must be >= 1");
  augmentation.validate();
}

namespace {

Json arch_to_json(const EncoderArch& a) {
  return {{"image_size", a.image_size},         {"channels", a.channels},
          {"widths", a.widths},                 {"blocks_per_stage", a.blocks_per_stage},
          {"embedding_dim", a.embedding_dim},   {"projection_hidden", a.projection_hidden},
          {"projection_dim", a.projection_dim}};
}

EncoderArch arch_from_json(const Json& j) {
  EncoderArch a;
  a.image_size = j.at("image_size").get<int>();
  a.channels = j.at("channels").get<int>();
  a.widths = j.at("widths").get<std::vector<int>>();
  a.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  a.embedding_dim = j.at("embedding_dim").get<int>();
  a.projection_hidden = j.at("projection_hidden").get<int>();
  a.projection_dim = j.at("projection_dim").get<int>();
  return a;
}

}  // namespace

std::string EncoderCheckpoint::hash() const {
  return parameter_hash(const_cast<Encoder<float>&>(model).parameters());
}

EncoderCheckpoint train_encoder(const Dataset& data, const EncoderConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.image_size() != cfg.arch.image_size || data.channels() != cfg.arch.channels) {
    throw ConfigError("encoder architecture does not match the dataset image shape");
  }
  const int train_size = int(data.indices(Split::train).size());
  const int batch = std::min(cfg.batch_size, train_size);
  if (batch < 2) throw ConfigError("encoder training needs at least 2 training samples per batch");

  Rng init_rng(derive_seed(cfg.seed, {0xe4c0}));
  EncoderCheckpoint ckpt{Encoder<float>(cfg.arch, init_rng), cfg, {}};
  Encoder<float>& model = ckpt.model;
  Adam<float> opt(cfg.optimizer);
  const ParameterList<float> params = model.parameters();

  const int per_epoch = train_size / batch;
  const double total_steps = double(per_epoch) * cfg.epochs;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    int count = 0;
    for (const auto& idx : data.epoch_batches(Split::train, batch, std::uint64_t(epoch), true, true)) {
      const int n = int(idx.size());
      ImageBatch<float> views(2 * n, data.channels(), data.image_size(), data.image_size());
      const Index per = views.sample_size();
      for (int j = 0; j < n; ++j) {
        Rng aug_rng(derive_seed(cfg.seed, {0xa06, std::uint64_t(epoch), std::uint64_t(idx[j])}));
        auto [va, vb] = augment_pair(data.image(idx[j]), cfg.augmentation, aug_rng);
        views.pixels.segment(Index(j) * per, per) = va.pixels;
        views.pixels.segment(Index(n + j) * per, per) = vb.pixels;
      }
      zero_grad(params);
      const Matrix<float> e = model.forward_embed(to_feature_map(views));
      const Matrix<float> h = model.forward_project(e);
      const LossWithGrad<float> l = info_nce_loss_with_grad<float>(h.leftCols(n), h.rightCols(n), cfg.temperature);
      if (!std::isfinite(l.loss)) {
        throw TrainingError("encoder loss is not finite at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      Matrix<float> gh(h.rows(), h.cols());
      gh << l.grad_a, l.grad_b;
      model.backward_embed(model.backward_project(gh));

      double lr = cfg.optimizer.learning_rate;
      if (cfg.cosine_decay) lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / total_steps));
      opt.set_learning_rate(lr);
      opt.step(params);
      ++step;
      sum += l.loss;
      ++count;
    }
    const double mean = sum / std::max(1, count);
    ckpt.epoch_losses.push_back(mean);
    spdlog::info("encoder epoch {}/{} loss {:.4f}", epoch + 1, cfg.epochs, mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return ckpt;
}

Matrix<float> embed_dataset(const Encoder<float>& encoder, const Dataset& data, std::span<const int> indices,
                            int batch_size) {
  Matrix<float> out(encoder.arch().embedding_dim, Index(indices.size()));
  for (std::size_t start = 0; start < indices.size(); start += std::size_t(batch_size)) {
    const std::size_t count = std::min(indices.size() - start, std::size_t(batch_size));
    out.middleCols(Index(start), Index(count)) = encoder.encode(data.images(indices.subspan(start, count)));
  }
  return out;
}

void save_encoder(const EncoderCheckpoint& ckpt, const std::filesystem::path& path) {
  ArchiveWriter writer("encoder");
  Encoder<float>& model = const_cast<Encoder<float>&>(ckpt.model);
  const auto& arch = ckpt.config.arch;
  writer.metadata() = {{"d_e", arch.embedding_dim},
                       {"d_p", arch.projection_dim},
                       {"temperature", ckpt.config.temperature},
                       {"image_size", arch.image_size},
                       {"channels", arch.channels},
                       {"arch", arch_to_json(arch)},
                       {"seed", ckpt.config.seed},
                       {"revision", build_revision()},
                       {"epoch_losses", ckpt.epoch_losses},
                       {"hash", ckpt.hash()}};
  writer.add_parameters(model.parameters(), "");
  writer.write(path);
}

EncoderCheckpoint load_encoder(const std::filesystem::path& path, std::optional<int> expected_image_size) {
  const Archive archive = Archive::read(path);
  if (archive.kind() != "encoder") throw CheckpointError(path.string() + " is not an encoder checkpoint");
  const Json& meta = archive.metadata();
  EncoderCheckpoint ckpt;
  try {
    ckpt.config.arch = arch_from_json(meta.at("arch"));
    ckpt.config.temperature = meta.at("temperature").get<double>();
    ckpt.config.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": bad encoder metadata: " + e.what());
  }
  if (expected_image_size && *expected_image_size != ckpt.config.arch.image_size) {
    throw CheckpointError(path.string() + ": encoder was trained on " + std::to_string(ckpt.config.arch.image_size) +
                          "px images, pipeline uses " + std::to_string(*expected_image_size) + "px");
  }
  Rng rng(0);
  ckpt.model = Encoder<float>(ckpt.config.arch, rng);
  archive.load_parameters(ckpt.model.parameters(), "");
  if (meta.contains("hash") && meta.at("hash").get<std::string>() != ckpt.hash()) {
    throw CheckpointError(path.string() + ": encoder parameter hash mismatch");
  }
  return ckpt;
}

}  // namespace infoscc
