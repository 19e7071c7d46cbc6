#pragma once

// Stage 1: contrastive encoder q(eps | x) trained with the NT-Xent form of
// InfoNCE. The backbone output is the embedding; the projection head is only
// used by the contrastive loss.

#include "infoscc/data.hpp"
#include "infoscc/image.hpp"
#include "infoscc/nn.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <optional>
#include <string>
#include <vector>

namespace infoscc {

struct EncoderArch {
  int image_size = 32;
  int channels = 3;
  /// One stride-2 convolution stage per entry.
  std::vector<int> widths = {32, 64, 128};
  /// Residual blocks after each downsampling convolution.
  int blocks_per_stage = 1;
  int embedding_dim = 128;
  int projection_hidden = 128;
  int projection_dim = 64;

  void validate() const;
};

struct EncoderConfig {
  EncoderArch arch;
  double temperature = 0.5;
  int batch_size = 256;
  int epochs = 100;
  AdamConfig optimizer{1e-3, 0.9, 0.999, 1e-8};
  bool cosine_decay = true;
  AugmentationConfig augmentation;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Column-wise L2 normalization; columns with zero norm are divided by 1e-12
/// and reported through `zero_norm`.
template <typename Scalar>
Matrix<Scalar> normalize_columns(const Matrix<Scalar>& m, bool* zero_norm = nullptr) {
  Matrix<Scalar> out(m.rows(), m.cols());
  bool any_zero = false;
  for (Index j = 0; j < m.cols(); ++j) {
    Scalar norm = m.col(j).norm();
    if (norm == Scalar(0)) any_zero = true;
    out.col(j) = m.col(j) / (norm + Scalar(1e-12));
  }
  if (zero_norm) *zero_norm = any_zero;
  return out;
}

template <typename Scalar>
struct LossWithGrad {
  Scalar loss = 0;
  Matrix<Scalar> grad_a;
  Matrix<Scalar> grad_b;
};

/// NT-Xent over 2N anchors. Columns i of `a` and `b` are two views of the same
/// source; every other column of either matrix is a negative. Similarities are
/// cosine similarities divided by `temperature`. The loss is averaged over
/// anchors; gradients are with respect to the unnormalized inputs.
template <typename Scalar>
LossWithGrad<Scalar> info_nce_loss_with_grad(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                                             double temperature) {
  if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("info_nce: view shapes differ");
  const Index n = a.cols(), total = 2 * n;
  const Scalar inv_t = Scalar(1.0 / temperature);

  Matrix<Scalar> z(a.rows(), total);
  z << a, b;
  Vector<Scalar> norms(total);
  Matrix<Scalar> zn(z.rows(), total);
  for (Index j = 0; j < total; ++j) {
    norms[j] = z.col(j).norm() + Scalar(1e-12);
    zn.col(j) = z.col(j) / norms[j];
  }
  const Matrix<Scalar> sim = (zn.transpose() * zn) * inv_t;

  Scalar loss = 0;
  Matrix<Scalar> dsim = Matrix<Scalar>::Zero(total, total);
  for (Index i = 0; i < total; ++i) {
    const Index pos = (i + n) % total;
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Index k = 0; k < total; ++k)
      if (k != i) peak = std::max(peak, sim(k, i));
    Scalar denom = 0;
    for (Index k = 0; k < total; ++k)
      if (k != i) denom += std::exp(sim(k, i) - peak);
    loss += -(sim(pos, i) - peak) + std::log(denom);
    for (Index k = 0; k < total; ++k) {
      if (k == i) continue;
      dsim(k, i) = std::exp(sim(k, i) - peak) / denom;
    }
    dsim(pos, i) -= Scalar(1);
  }
  const Scalar scale = Scalar(1) / Scalar(total);
  loss *= scale;
  dsim *= scale;

  // sim = zn^T zn / t  =>  d zn = zn (dsim + dsim^T) / t
  const Matrix<Scalar> dzn = zn * (dsim + dsim.transpose()) * inv_t;
  Matrix<Scalar> dz(z.rows(), total);
  for (Index j = 0; j < total; ++j) {
    dz.col(j) = (dzn.col(j) - zn.col(j) * zn.col(j).dot(dzn.col(j))) / norms[j];
  }
  return {std::max(loss, Scalar(0)), dz.leftCols(n), dz.rightCols(n)};
}

template <typename Scalar>
Scalar info_nce_loss(const Matrix<Scalar>& a, const Matrix<Scalar>& b, double temperature) {
  return info_nce_loss_with_grad(a, b, temperature).loss;
}

template <typename Scalar>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderArch& arch, Rng& rng) : arch_(arch) {
    arch.validate();
    int channels = arch.channels;
    for (int width : arch.widths) {
      backbone_.add(Conv2d<Scalar>(channels, width, 3, 2, 1, rng)).add(LeakyReLU<Scalar>(0.2));
      for (int b = 0; b < arch.blocks_per_stage; ++b) backbone_.add(ResidualBlock<Scalar>(width, rng));
      channels = width;
    }
    backbone_.add(GlobalAvgPool<Scalar>()).add(Linear<Scalar>(channels, arch.embedding_dim, rng));
    head_.add(Linear<Scalar>(arch.embedding_dim, arch.projection_hidden, rng))
        .add(LeakyReLU<Scalar>(0.0))
        .add(Linear<Scalar>(arch.projection_hidden, arch.projection_dim, rng));
  }

  const EncoderArch& arch() const { return arch_; }

  /// Embeddings (d_e x B); pure evaluation.
  Matrix<Scalar> encode(const ImageBatch<Scalar>& images) const {
    check(images.channels, images.height, images.width);
    return backbone_.infer(to_feature_map(images)).data;
  }

  Matrix<Scalar> encode(const FeatureMap<Scalar>& images) const {
    check(images.channels(), images.height, images.width);
    return backbone_.infer(images).data;
  }

  /// Unit-norm projections (d_p x B).
  Matrix<Scalar> project(const Matrix<Scalar>& embeddings, bool* zero_norm = nullptr) const {
    if (embeddings.rows() != arch_.embedding_dim) throw ShapeError("project: embedding dim mismatch");
    return normalize_columns<Scalar>(head_.infer(FeatureMap<Scalar>::dense(embeddings)).data, zero_norm);
  }

  // Training path: records activations for backward.
  Matrix<Scalar> forward_embed(const FeatureMap<Scalar>& images) {
    check(images.channels(), images.height, images.width);
    return backbone_.forward(images).data;
  }
  /// Projection head output before normalization.
  Matrix<Scalar> forward_project(const Matrix<Scalar>& embeddings) {
    return head_.forward(FeatureMap<Scalar>::dense(embeddings)).data;
  }
  Matrix<Scalar> backward_project(const Matrix<Scalar>& grad) {
    return head_.backward(FeatureMap<Scalar>::dense(grad)).data;
  }
  /// Returns the gradient with respect to the input images.
  FeatureMap<Scalar> backward_embed(const Matrix<Scalar>& grad) {
    return backbone_.backward(FeatureMap<Scalar>::dense(grad));
  }

  ParameterList<Scalar> backbone_parameters() {
    ParameterList<Scalar> out;
    backbone_.collect(out, "backbone.");
    return out;
  }
  ParameterList<Scalar> head_parameters() {
    ParameterList<Scalar> out;
    head_.collect(out, "head.");
    return out;
  }
  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out = backbone_parameters();
    for (auto& p : head_parameters()) out.push_back(p);
    return out;
  }

 private:
  void check(int channels, int h, int w) const {
    if (channels != arch_.channels || h != arch_.image_size || w != arch_.image_size) {
      throw ShapeError("encoder expects " + std::to_string(arch_.channels) + "x" +
                       std::to_string(arch_.image_size) + "x" + std::to_string(arch_.image_size) +
                       " images, got " + std::to_string(channels) + "x" + std::to_string(h) + "x" +
                       std::to_string(w));
    }
  }

  EncoderArch arch_;
  Sequential<Scalar> backbone_;
  Sequential<Scalar> head_;
};

struct EncoderCheckpoint {
  Encoder<float> model;
  EncoderConfig config;
  std::vector<double> epoch_losses;

  /// Hash of the encoder parameters (backbone and head).
  std::string hash() const;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Trains the encoder on augmented pairs from the training split.
EncoderCheckpoint train_encoder(const Dataset& data, const EncoderConfig& cfg,
                                const EpochCallback& on_epoch = {});

/// Embeddings of dataset items with a frozen encoder, (d_e x N), batched.
Matrix<float> embed_dataset(const Encoder<float>& encoder, const Dataset& data, std::span<const int> indices,
                            int batch_size = 256);

void save_encoder(const EncoderCheckpoint& ckpt, const std::filesystem::path& path);

/// Loads an encoder checkpoint; rejects a mismatching image size when given.
EncoderCheckpoint load_encoder(const std::filesystem::path& path,
                               std::optional<int> expected_image_size = std::nullopt);

}  // namespace infoscc
