#pragma once

// Stage 2: attribute classifier p(y | eps) over frozen encoder embeddings.

#include "infoscc/encoder.hpp"
#include "infoscc/image.hpp"
#include "infoscc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace infoscc {

/// Softmax per column (categorical) or elementwise sigmoid (multilabel).
template <typename Scalar>
Matrix<Scalar> probabilities_from_logits(const Matrix<Scalar>& logits, LabelKind kind) {
  if (kind == LabelKind::multilabel) {
    return logits.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
  }
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Scalar peak = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - peak).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

constexpr double kProbabilityFloor = 1e-12;

/// Mean categorical cross-entropy, or mean per-attribute binary cross-entropy
/// for multilabel targets. Probabilities are clamped to [1e-12, 1].
template <typename Scalar>
Scalar classifier_loss(const Matrix<Scalar>& probs, const Matrix<Scalar>& targets, LabelKind kind) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw ShapeError("classifier_loss: probability and label shapes differ");
  }
  const Scalar lo = Scalar(kProbabilityFloor);
  auto safe_log = [lo](Scalar p) { return std::log(std::clamp(p, lo, Scalar(1))); };
  Scalar total = 0;
  for (Index j = 0; j < probs.cols(); ++j) {
    for (Index k = 0; k < probs.rows(); ++k) {
      const Scalar y = targets(k, j), p = probs(k, j);
      if (kind == LabelKind::categorical) {
        if (y != Scalar(0)) total -= y * safe_log(p);
      } else {
        total -= y * safe_log(p) + (Scalar(1) - y) * safe_log(Scalar(1) - p);
      }
    }
  }
  const Scalar count = kind == LabelKind::categorical ? Scalar(probs.cols())
                                                      : Scalar(probs.cols() * probs.rows());
  return count > Scalar(0) ? total / count : Scalar(0);
}

/// d classifier_loss / d probs (zero where the clamp is active).
template <typename Scalar>
Matrix<Scalar> classifier_loss_grad(const Matrix<Scalar>& probs, const Matrix<Scalar>& targets, LabelKind kind) {
  const Scalar lo = Scalar(kProbabilityFloor);
  const Scalar count = kind == LabelKind::categorical ? Scalar(probs.cols())
                                                      : Scalar(probs.cols() * probs.rows());
  Matrix<Scalar> g = Matrix<Scalar>::Zero(probs.rows(), probs.cols());
  for (Index j = 0; j < probs.cols(); ++j) {
    for (Index k = 0; k < probs.rows(); ++k) {
      const Scalar y = targets(k, j), p = probs(k, j);
      if (p > lo && p < Scalar(1)) g(k, j) -= y / p;
      if (kind == LabelKind::multilabel) {
        const Scalar q = Scalar(1) - p;
        if (q > lo && q < Scalar(1)) g(k, j) += (Scalar(1) - y) / q;
      }
    }
  }
  return g / count;
}

/// Cross-entropy evaluated from logits (numerically stable), with the
/// gradient with respect to the logits. `class_weights` (optional, length K)
/// reweights categorical samples by their class or multilabel attributes.
template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> logits_loss_with_grad(const Matrix<Scalar>& logits, const Matrix<Scalar>& targets,
                                                        LabelKind kind,
                                                        const Vector<Scalar>* class_weights = nullptr) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("logits_loss: logits and label shapes differ");
  }
  const Index k = logits.rows(), n = logits.cols();
  Matrix<Scalar> grad(k, n);
  Scalar loss = 0;
  if (kind == LabelKind::categorical) {
    for (Index j = 0; j < n; ++j) {
      const Scalar peak = logits.col(j).maxCoeff();
      const Scalar lse = peak + std::log((logits.col(j).array() - peak).exp().sum());
      Index cls = 0;
      targets.col(j).maxCoeff(&cls);
      const Scalar w = class_weights ? (*class_weights)[cls] : Scalar(1);
      loss += w * (lse - targets.col(j).dot(logits.col(j)));
      grad.col(j) = w * ((logits.col(j).array() - lse).exp().matrix() - targets.col(j));
    }
    return {loss / Scalar(n), grad / Scalar(n)};
  }
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < k; ++i) {
      const Scalar x = logits(i, j), y = targets(i, j);
      const Scalar w = class_weights ? (*class_weights)[i] : Scalar(1);
      // softplus(x) - y*x is the Bernoulli negative log-likelihood.
      const Scalar softplus = std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
      loss += w * (softplus - y * x);
      grad(i, j) = w * (Scalar(1) / (Scalar(1) + std::exp(-x)) - y);
    }
  }
  const Scalar count = Scalar(n * k);
  return {loss / count, grad / count};
}

struct ClassifierArch {
  int input_dim = 128;
  std::vector<int> hidden = {256};
  int num_classes = 2;
  LabelKind kind = LabelKind::categorical;

  void validate() const;
};

struct ClassifierConfig {
  std::vector<int> hidden = {256};
  int epochs = 30;
  int batch_size = 128;
  AdamConfig optimizer{1e-3, 0.9, 0.999, 1e-8};
  /// Inverse-frequency loss weighting.
  bool balance_classes = false;
  /// Train against randomly permuted labels (sanity control runs).
  bool shuffle_labels = false;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename Scalar>
class Classifier {
 public:
  Classifier() = default;
  Classifier(const ClassifierArch& arch, Rng& rng) : arch_(arch) {
    arch.validate();
    int width = arch.input_dim;
    for (int h : arch.hidden) {
      trunk_.add(Linear<Scalar>(width, h, rng)).add(LeakyReLU<Scalar>(0.0));
      width = h;
    }
    head_ = Linear<Scalar>(width, arch.num_classes, rng);
  }

  const ClassifierArch& arch() const { return arch_; }

  /// Activations of the last hidden layer (used as a metric feature space).
  Matrix<Scalar> features(const Matrix<Scalar>& embeddings) const {
    check(embeddings);
    return trunk_.infer(FeatureMap<Scalar>::dense(embeddings)).data;
  }

  Matrix<Scalar> logits(const Matrix<Scalar>& embeddings) const {
    return head_.infer(FeatureMap<Scalar>::dense(features(embeddings))).data;
  }

  /// Class probabilities (K x B).
  Matrix<Scalar> classify(const Matrix<Scalar>& embeddings) const {
    return probabilities_from_logits<Scalar>(logits(embeddings), arch_.kind);
  }

  Matrix<Scalar> forward_logits(const Matrix<Scalar>& embeddings) {
    check(embeddings);
    return head_.forward(trunk_.forward(FeatureMap<Scalar>::dense(embeddings))).data;
  }

  /// Returns the gradient with respect to the embeddings.
  Matrix<Scalar> backward_logits(const Matrix<Scalar>& grad) {
    return trunk_.backward(head_.backward(FeatureMap<Scalar>::dense(grad))).data;
  }

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    trunk_.collect(out, "trunk.");
    head_.collect(out, "head.");
    return out;
  }

 private:
  void check(const Matrix<Scalar>& e) const {
    if (e.rows() != arch_.input_dim) {
      throw ShapeError("classifier expects embeddings of dim " + std::to_string(arch_.input_dim) + ", got " +
                       std::to_string(e.rows()));
    }
  }

  ClassifierArch arch_;
  Sequential<Scalar> trunk_;
  Linear<Scalar> head_;
};

struct ClassifierCheckpoint {
  Classifier<float> model;
  ClassifierConfig config;
  std::string encoder_hash;
  std::vector<std::string> attribute_names;
  double val_accuracy = 0.0;
  std::vector<double> epoch_losses;

  std::string hash() const;
};

/// Fraction of correct argmax predictions (categorical) or correct
/// thresholded attribute decisions (multilabel).
double label_accuracy(const Matrix<float>& probs, const LabelBatch& labels, double threshold = 0.5);

/// Trains on frozen embeddings of the training split and reports validation
/// accuracy. The encoder is not modified.
ClassifierCheckpoint train_classifier(const Dataset& data, const EncoderCheckpoint& encoder,
                                      const ClassifierConfig& cfg, const EpochCallback& on_epoch = {});

void save_classifier(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path);

/// Loads a classifier; unless `allow_encoder_mismatch`, rejects a checkpoint
/// trained on a different encoder than `expected_encoder_hash`.
ClassifierCheckpoint load_classifier(const std::filesystem::path& path,
                                     std::optional<std::string> expected_encoder_hash = std::nullopt,
                                     bool allow_encoder_mismatch = false);

}  // namespace infoscc
