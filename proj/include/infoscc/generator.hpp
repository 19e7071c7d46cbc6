#pragma once

// Conditional stochastic generator. A label-conditioned mapper turns
// (y, base noise) into a conditioning vector; a hierarchical generator grows
// it from base_size x base_size to the output resolution, and before every
// upsampling layer adds an explorable linear subspace term U diag(L) z_i + mu.

#include "infoscc/image.hpp"
#include "infoscc/nn.hpp"
#include "infoscc/random.hpp"

#include <Eigen/QR>

#include <string>
#include <vector>

namespace infoscc {

struct GeneratorArch {
  int image_size = 256;
  int channels = 3;
  int num_classes = 2;
  LabelKind kind = LabelKind::categorical;
  int label_dim = 128;   // d_y
  int noise_dim = 512;   // d_b
  int cond_dim = 512;    // d_g
  int base_size = 4;
  /// Explorable dimensions per layer; size defines L. Empty means 6 for
  /// each of the log2(image_size / base_size) layers.
  std::vector<int> subspace_dims;
  int base_width = 256;
  int min_width = 16;

  void validate() const;
  int num_layers() const;
  std::vector<int> layer_dims() const;
  /// Channels entering layer i (i < L) and, at i == L, entering the output head.
  int width(int i) const;
  int resolution(int i) const { return base_size << i; }
  /// Flattened feature size d_i at layer i.
  int feature_dim(int i) const { return width(i) * resolution(i) * resolution(i); }
};

/// Per-layer stochastic inputs. layer_codes[i] is (q_i x B); base_noise is
/// (d_b x B).
template <typename Scalar>
struct LatentCode {
  std::vector<Matrix<Scalar>> layer_codes;
  Matrix<Scalar> base_noise;

  int batch() const { return int(base_noise.cols()); }

  /// Column b of every component.
  LatentCode sample(int b) const {
    LatentCode out;
    for (const auto& c : layer_codes) out.layer_codes.push_back(c.col(b));
    out.base_noise = base_noise.col(b);
    return out;
  }
};

/// Standard-normal latent code for `batch` samples.
template <typename Scalar>
LatentCode<Scalar> sample_latent(const GeneratorArch& arch, int batch, Rng& rng) {
  LatentCode<Scalar> z;
  for (int q : arch.layer_dims()) z.layer_codes.push_back(standard_normal<Scalar>(q, batch, rng));
  z.base_noise = standard_normal<Scalar>(arch.noise_dim, batch, rng);
  return z;
}

/// U diag(L) z + mu for a batch of codes z (q x B); returns (d x B).
template <typename Scalar>
Matrix<Scalar> subspace_inject(const Matrix<Scalar>& z, const Matrix<Scalar>& basis, const Matrix<Scalar>& scales,
                               const Matrix<Scalar>& origin) {
  if (basis.cols() != z.rows() || scales.rows() != z.rows() || origin.rows() != basis.rows()) {
    throw ShapeError("subspace_inject: inconsistent shapes");
  }
  Matrix<Scalar> out = basis * (scales.col(0).asDiagonal() * z);
  out.colwise() += origin.col(0);
  return out;
}

/// ||U^T U - I||_F^2.
template <typename Scalar>
Scalar orthogonality_penalty(const Matrix<Scalar>& basis) {
  const Index q = basis.cols();
  return (basis.transpose() * basis - Matrix<Scalar>::Identity(q, q)).squaredNorm();
}

/// Gradient of orthogonality_penalty: 4 U (U^T U - I).
template <typename Scalar>
Matrix<Scalar> orthogonality_penalty_grad(const Matrix<Scalar>& basis) {
  const Index q = basis.cols();
  return Scalar(4) * basis * (basis.transpose() * basis - Matrix<Scalar>::Identity(q, q));
}

template <typename Scalar>
struct SubspaceLayer {
  Parameter<Scalar> basis;   // U, d x q
  Parameter<Scalar> scales;  // L, q x 1
  Parameter<Scalar> origin;  // mu, d x 1

  SubspaceLayer() = default;
  SubspaceLayer(int d, int q, Rng& rng) {
    Matrix<Scalar> gaussian = standard_normal<Scalar>(d, q, rng);
    Eigen::HouseholderQR<Matrix<Scalar>> qr(gaussian);
    basis = Parameter<Scalar>(qr.householderQ() * Matrix<Scalar>::Identity(d, q));
    Matrix<Scalar> l(q, 1);
    for (int j = 0; j < q; ++j) l(j, 0) = Scalar(3 * (q - j));
    scales = Parameter<Scalar>(l);
    origin = Parameter<Scalar>(Matrix<Scalar>::Zero(d, 1));
  }

  Matrix<Scalar> apply(const Matrix<Scalar>& z) const {
    return subspace_inject<Scalar>(z, basis.value, scales.value, origin.value);
  }

  /// Accumulates parameter gradients for d out / given the upstream gradient.
  void backward(const Matrix<Scalar>& grad, const Matrix<Scalar>& z) {
    if (basis.frozen) return;
    const Matrix<Scalar> scaled = scales.value.col(0).asDiagonal() * z;
    basis.grad.noalias() += grad * scaled.transpose();
    scales.grad.col(0) += (basis.value.transpose() * grad).cwiseProduct(z).rowwise().sum();
    origin.grad.col(0) += grad.rowwise().sum();
  }
};

template <typename Scalar>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorArch& arch, Rng& rng) : arch_(arch) {
    arch.validate();
    label_table_ = Parameter<Scalar>(standard_normal<Scalar>(arch.label_dim, arch.num_classes, rng));
    mapper_.add(Linear<Scalar>(arch.label_dim + arch.noise_dim, arch.cond_dim, rng))
        .add(LeakyReLU<Scalar>(0.2))
        .add(Linear<Scalar>(arch.cond_dim, arch.cond_dim, rng))
        .add(LeakyReLU<Scalar>(0.2));
    const int base = arch.base_size;
    stem_.add(Linear<Scalar>(arch.cond_dim, arch.width(0) * base * base, rng))
        .add(LeakyReLU<Scalar>(0.2))
        .add(Unflatten<Scalar>(arch.width(0), base, base));
    const std::vector<int> dims = arch.layer_dims();
    for (int i = 0; i < arch.num_layers(); ++i) {
      subspaces_.emplace_back(arch.feature_dim(i), dims[i], rng);
      Sequential<Scalar> block;
      block.add(Upsample2x<Scalar>())
          .add(Conv2d<Scalar>(arch.width(i), arch.width(i + 1), 3, 1, 1, rng))
          .add(LeakyReLU<Scalar>(0.2));
      blocks_.push_back(std::move(block));
    }
    head_.add(Conv2d<Scalar>(arch.width(arch.num_layers()), arch.channels, 3, 1, 1, rng)).add(Tanh<Scalar>());
  }

  const GeneratorArch& arch() const { return arch_; }
  int num_layers() const { return int(subspaces_.size()); }

  /// Conditioning vector eps_g (d_g x B); a deterministic function of
  /// (labels, base noise).
  Matrix<Scalar> map_latent(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) const {
    return mapper_.infer(FeatureMap<Scalar>::dense(mapper_input(labels, z))).data;
  }

  FeatureMap<Scalar> generate_maps(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) const {
    check(labels, z);
    FeatureMap<Scalar> h = stem_.infer(FeatureMap<Scalar>::dense(map_latent(labels, z)));
    for (int i = 0; i < num_layers(); ++i) {
      h.data.reshaped(arch_.feature_dim(i), z.batch()) += subspaces_[i].apply(z.layer_codes[i]);
      h = blocks_[i].infer(h);
    }
    return head_.infer(h);
  }

  /// Images in [-1, 1], shape (B, C, H, W).
  ImageBatch<Scalar> generate(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) const {
    return to_image_batch(generate_maps(labels, z));
  }

  ImageBatch<Scalar> generate(const LabelBatch& labels, const LatentCode<Scalar>& z) const {
    return generate(labels.as<Scalar>(), z);
  }

  /// One batch per value, sweeping layer_codes[layer](dim, :) with every
  /// other input held fixed.
  std::vector<ImageBatch<Scalar>> traverse(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z, int layer,
                                           int dim, const std::vector<double>& values) const {
    if (layer < 0 || layer >= num_layers()) {
      throw ConfigError("traverse: layer " + std::to_string(layer) + " out of range [0, " +
                        std::to_string(num_layers()) + ")");
    }
    if (dim < 0 || dim >= z.layer_codes[layer].rows()) {
      throw ConfigError("traverse: dim " + std::to_string(dim) + " out of range for layer " + std::to_string(layer));
    }
    std::vector<ImageBatch<Scalar>> strip;
    LatentCode<Scalar> swept = z;
    for (double v : values) {
      swept.layer_codes[layer].row(dim).setConstant(Scalar(v));
      strip.push_back(generate(labels, swept));
    }
    return strip;
  }

  /// Training forward pass; returns the output image maps.
  FeatureMap<Scalar> forward(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) {
    check(labels, z);
    labels_ = labels;
    codes_ = z.layer_codes;
    const Matrix<Scalar> in = mapper_input(labels, z);
    FeatureMap<Scalar> h = stem_.forward(mapper_.forward(FeatureMap<Scalar>::dense(in)));
    for (int i = 0; i < num_layers(); ++i) {
      h.data.reshaped(arch_.feature_dim(i), z.batch()) += subspaces_[i].apply(z.layer_codes[i]);
      h = blocks_[i].forward(h);
    }
    return head_.forward(h);
  }

  /// Accumulates parameter gradients given dLoss/dImage maps.
  void backward(const FeatureMap<Scalar>& grad) {
    FeatureMap<Scalar> g = head_.backward(grad);
    const int batch = g.batch;
    for (int i = num_layers() - 1; i >= 0; --i) {
      g = blocks_[i].backward(g);
      subspaces_[i].backward(g.data.reshaped(arch_.feature_dim(i), batch), codes_[i]);
    }
    g = mapper_.backward(stem_.backward(g));
    if (!label_table_.frozen) {
      label_table_.grad.noalias() += g.data.topRows(arch_.label_dim) * labels_.transpose();
    }
  }

  std::vector<Parameter<Scalar>*> subspace_bases() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& s : subspaces_) out.push_back(&s.basis);
    return out;
  }

  SubspaceLayer<Scalar>& subspace(int i) { return subspaces_.at(std::size_t(i)); }
  const SubspaceLayer<Scalar>& subspace(int i) const { return subspaces_.at(std::size_t(i)); }

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    out.emplace_back("label_table", &label_table_);
    mapper_.collect(out, "mapper.");
    stem_.collect(out, "stem.");
    for (int i = 0; i < num_layers(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      out.emplace_back(p + "U", &subspaces_[i].basis);
      out.emplace_back(p + "L", &subspaces_[i].scales);
      out.emplace_back(p + "mu", &subspaces_[i].origin);
      blocks_[i].collect(out, p + "block.");
    }
    head_.collect(out, "head.");
    return out;
  }

 private:
  void check(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) const {
    if (labels.rows() != arch_.num_classes) {
      throw ShapeError("generator expects " + std::to_string(arch_.num_classes) + " label rows, got " +
                       std::to_string(labels.rows()));
    }
    if (labels.cols() != z.batch()) throw ShapeError("generator: label and latent batch sizes differ");
    if (int(z.layer_codes.size()) != num_layers()) throw ShapeError("generator: wrong number of layer codes");
    for (int i = 0; i < num_layers(); ++i) {
      if (z.layer_codes[i].rows() != subspaces_[i].basis.value.cols() || z.layer_codes[i].cols() != z.batch()) {
        throw ShapeError("generator: layer code " + std::to_string(i) + " has the wrong shape");
      }
    }
    if (z.base_noise.rows() != arch_.noise_dim) throw ShapeError("generator: base noise has the wrong dimension");
  }

  Matrix<Scalar> mapper_input(const Matrix<Scalar>& labels, const LatentCode<Scalar>& z) const {
    if (labels.rows() != arch_.num_classes) throw ShapeError("mapper: label dimension mismatch");
    Matrix<Scalar> in(arch_.label_dim + arch_.noise_dim, labels.cols());
    in.topRows(arch_.label_dim) = label_table_.value * labels;
    in.bottomRows(arch_.noise_dim) = z.base_noise;
    return in;
  }

  GeneratorArch arch_;
  Parameter<Scalar> label_table_;
  Sequential<Scalar> mapper_;
  Sequential<Scalar> stem_;
  std::vector<SubspaceLayer<Scalar>> subspaces_;
  std::vector<Sequential<Scalar>> blocks_;
  Sequential<Scalar> head_;

  Matrix<Scalar> labels_;
  std::vector<Matrix<Scalar>> codes_;
};

}  // namespace infoscc
