#pragma once

// Global and patch discriminators and the three adversarial loss families.
// Score maps are feature maps with one channel per head: (heads, B*h*w).

#include "infoscc/image.hpp"
#include "infoscc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace infoscc {

enum class LossKind { hinge, non_saturating, lsgan };
enum class DiscriminatorKind { global, patch };

std::string to_string(LossKind k);
std::string to_string(DiscriminatorKind k);
LossKind loss_kind_from_string(const std::string& s);
DiscriminatorKind discriminator_kind_from_string(const std::string& s);

template <typename Scalar>
struct AdversarialLoss {
  Scalar loss = 0;
  Matrix<Scalar> grad_real;
  Matrix<Scalar> grad_fake;
};

namespace detail {

template <typename Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

}  // namespace detail

/// Discriminator loss, each term averaged over every score (batch and patch
/// positions).
template <typename Scalar>
AdversarialLoss<Scalar> d_loss_with_grad(const Matrix<Scalar>& real, const Matrix<Scalar>& fake, LossKind kind) {
  const Scalar nr = Scalar(real.size()), nf = Scalar(fake.size());
  if (real.size() == 0 || fake.size() == 0) throw ShapeError("d_loss: empty score map");
  AdversarialLoss<Scalar> out;
  switch (kind) {
    case LossKind::hinge:
      out.loss = (Scalar(1) - real.array()).max(Scalar(0)).sum() / nr +
                 (Scalar(1) + fake.array()).max(Scalar(0)).sum() / nf;
      out.grad_real = real.unaryExpr([nr](Scalar r) { return r < Scalar(1) ? Scalar(-1) / nr : Scalar(0); });
      out.grad_fake = fake.unaryExpr([nf](Scalar f) { return f > Scalar(-1) ? Scalar(1) / nf : Scalar(0); });
      break;
    case LossKind::non_saturating:
      out.loss = real.unaryExpr([](Scalar r) { return detail::softplus(-r); }).sum() / nr +
                 fake.unaryExpr([](Scalar f) { return detail::softplus(f); }).sum() / nf;
      out.grad_real = real.unaryExpr([nr](Scalar r) { return -detail::sigmoid(-r) / nr; });
      out.grad_fake = fake.unaryExpr([nf](Scalar f) { return detail::sigmoid(f) / nf; });
      break;
    case LossKind::lsgan:
      out.loss = Scalar(0.5) * (real.array() - Scalar(1)).square().sum() / nr +
                 Scalar(0.5) * fake.array().square().sum() / nf;
      out.grad_real = (real.array() - Scalar(1)).matrix() / nr;
      out.grad_fake = fake / nf;
      break;
  }
  return out;
}

template <typename Scalar>
Scalar d_loss(const Matrix<Scalar>& real, const Matrix<Scalar>& fake, LossKind kind) {
  return d_loss_with_grad(real, fake, kind).loss;
}

/// Generator loss and its gradient with respect to the fake scores.
template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> g_loss_with_grad(const Matrix<Scalar>& fake, LossKind kind) {
  if (fake.size() == 0) throw ShapeError("g_loss: empty score map");
  const Scalar n = Scalar(fake.size());
  switch (kind) {
    case LossKind::hinge:
      return {-fake.sum() / n, Matrix<Scalar>::Constant(fake.rows(), fake.cols(), Scalar(-1) / n)};
    case LossKind::non_saturating:
      return {fake.unaryExpr([](Scalar f) { return detail::softplus(-f); }).sum() / n,
              fake.unaryExpr([n](Scalar f) { return -detail::sigmoid(-f) / n; })};
    case LossKind::lsgan:
      return {Scalar(0.5) * (fake.array() - Scalar(1)).square().sum() / n, (fake.array() - Scalar(1)).matrix() / n};
  }
  throw ConfigError("unknown loss kind");
}

template <typename Scalar>
Scalar g_loss(const Matrix<Scalar>& fake, LossKind kind) {
  return g_loss_with_grad(fake, kind).first;
}

struct DiscriminatorArch {
  DiscriminatorKind kind = DiscriminatorKind::patch;
  int image_size = 32;
  int channels = 3;
  int base_width = 64;
  int max_width = 512;
  /// One output head per class (categorical labels only); 1 means unconditional.
  int heads = 1;

  void validate() const;
  /// Number of stride-2 stages.
  int downsamplings() const;
  int width(int stage) const { return std::min(max_width, base_width << stage); }
};

/// Spatial shape (h', w') of the score map for an architecture.
std::pair<int, int> score_shape(const DiscriminatorArch& arch);

template <typename Scalar>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorArch& arch, Rng& rng) : arch_(arch) {
    arch.validate();
    int in = arch.channels;
    const int stages = arch.downsamplings();
    for (int s = 0; s < stages; ++s) {
      net_.add(Conv2d<Scalar>(in, arch.width(s), 4, 2, 1, rng)).add(LeakyReLU<Scalar>(0.2));
      in = arch.width(s);
    }
    if (arch.kind == DiscriminatorKind::global) {
      const int size = arch.image_size >> stages;
      net_.add(Flatten<Scalar>()).add(Linear<Scalar>(in * size * size, arch.heads, rng));
    } else {
      net_.add(Conv2d<Scalar>(in, arch.width(stages), 4, 1, 1, rng)).add(LeakyReLU<Scalar>(0.2));
      net_.add(Conv2d<Scalar>(arch.width(stages), arch.heads, 4, 1, 1, rng));
    }
  }

  const DiscriminatorArch& arch() const { return arch_; }

  /// Raw scores, (heads, B*h'*w').
  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& images) const {
    check(images);
    return net_.infer(images);
  }

  FeatureMap<Scalar> infer(const ImageBatch<Scalar>& images) const { return infer(to_feature_map(images)); }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& images) {
    check(images);
    return net_.forward(images);
  }

  /// Returns the gradient with respect to the input images.
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& grad) { return net_.backward(grad); }

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    net_.collect(out, "net.");
    return out;
  }

 private:
  void check(const FeatureMap<Scalar>& x) const {
    if (x.channels() != arch_.channels || x.height != arch_.image_size || x.width != arch_.image_size) {
      throw ShapeError("discriminator expects " + std::to_string(arch_.channels) + "x" +
                       std::to_string(arch_.image_size) + "x" + std::to_string(arch_.image_size) + " images");
    }
  }

  DiscriminatorArch arch_;
  Sequential<Scalar> net_;
};

/// Picks, for every sample, the score channel of its class: (heads, B*P) ->
/// (1, B*P). A single-head map passes through unchanged.
template <typename Scalar>
FeatureMap<Scalar> select_heads(const FeatureMap<Scalar>& scores, std::span<const int> classes) {
  if (scores.channels() == 1) return scores;
  const int per = scores.pixels();
  FeatureMap<Scalar> out(Matrix<Scalar>(1, scores.data.cols()), scores.batch, scores.height, scores.width);
  for (int b = 0; b < scores.batch; ++b) {
    out.data.middleCols(Index(b) * per, per) = scores.data.row(classes[std::size_t(b)]).segment(Index(b) * per, per);
  }
  return out;
}

/// Backward of select_heads.
template <typename Scalar>
FeatureMap<Scalar> scatter_heads(const FeatureMap<Scalar>& grad, int heads, std::span<const int> classes) {
  if (heads == 1) return grad;
  const int per = grad.pixels();
  FeatureMap<Scalar> out(Matrix<Scalar>::Zero(heads, grad.data.cols()), grad.batch, grad.height, grad.width);
  for (int b = 0; b < grad.batch; ++b) {
    out.data.row(classes[std::size_t(b)]).segment(Index(b) * per, per) = grad.data.middleCols(Index(b) * per, per);
  }
  return out;
}

}  // namespace infoscc
