#pragma once

#include "infoscc/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace infoscc {

/// Batch of images, channels-first (B, C, H, W), values in [-1, 1].
template <typename Scalar>
struct ImageBatch {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  Vector<Scalar> pixels;  // row-major NCHW

  ImageBatch() = default;
  ImageBatch(int b, int c, int h, int w)
      : batch(b), channels(c), height(h), width(w), pixels(Vector<Scalar>::Zero(Index(b) * c * h * w)) {}

  Index offset(int b, int c, int y, int x) const {
    return ((Index(b) * channels + c) * height + y) * width + x;
  }
  Scalar& at(int b, int c, int y, int x) { return pixels[offset(b, c, y, x)]; }
  Scalar at(int b, int c, int y, int x) const { return pixels[offset(b, c, y, x)]; }

  Index sample_size() const { return Index(channels) * height * width; }

  bool in_range() const {
    return pixels.size() == 0 ||
           (pixels.minCoeff() >= Scalar(-1) && pixels.maxCoeff() <= Scalar(1));
  }

  /// Copy of sample b as a single-image batch.
  ImageBatch sample(int b) const {
    ImageBatch out(1, channels, height, width);
    out.pixels = pixels.segment(Index(b) * sample_size(), sample_size());
    return out;
  }

  template <typename Other>
  ImageBatch<Other> cast() const {
    ImageBatch<Other> out(batch, channels, height, width);
    out.pixels = pixels.template cast<Other>();
    return out;
  }
};

/// Converts NCHW pixels into the (channels x batch*h*w) activation layout.
template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const ImageBatch<Scalar>& images) {
  const int hw = images.height * images.width;
  Matrix<Scalar> data(images.channels, Index(images.batch) * hw);
  for (int b = 0; b < images.batch; ++b) {
    for (int c = 0; c < images.channels; ++c) {
      const Scalar* src = images.pixels.data() + images.offset(b, c, 0, 0);
      for (int p = 0; p < hw; ++p) data(c, Index(b) * hw + p) = src[p];
    }
  }
  return FeatureMap<Scalar>(std::move(data), images.batch, images.height, images.width);
}

template <typename Scalar>
ImageBatch<Scalar> to_image_batch(const FeatureMap<Scalar>& maps) {
  ImageBatch<Scalar> images(maps.batch, maps.channels(), maps.height, maps.width);
  const int hw = maps.pixels();
  for (int b = 0; b < maps.batch; ++b) {
    for (int c = 0; c < images.channels; ++c) {
      Scalar* dst = images.pixels.data() + images.offset(b, c, 0, 0);
      for (int p = 0; p < hw; ++p) dst[p] = maps.data(c, Index(b) * hw + p);
    }
  }
  return images;
}

template <typename Scalar>
ImageBatch<Scalar> concat_images(const ImageBatch<Scalar>& a, const ImageBatch<Scalar>& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw ShapeError("concat_images: image shapes differ");
  }
  ImageBatch<Scalar> out(a.batch + b.batch, a.channels, a.height, a.width);
  out.pixels << a.pixels, b.pixels;
  return out;
}

enum class LabelKind { categorical, multilabel };

std::string to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& name);

/// Attribute labels for a batch: a (K x B) matrix of targets. Categorical
/// columns are one-hot, multilabel columns are binary.
struct LabelBatch {
  LabelKind kind = LabelKind::categorical;
  Matrix<float> targets;

  static LabelBatch categorical(std::span<const int> classes, int num_classes);
  static LabelBatch multilabel(Matrix<float> bits);

  int num_classes() const { return int(targets.rows()); }
  int size() const { return int(targets.cols()); }

  /// Argmax class of column b (categorical kind).
  int class_index(int b) const;

  LabelBatch select(std::span<const int> columns) const;

  template <typename Scalar>
  Matrix<Scalar> as() const {
    return targets.cast<Scalar>();
  }
};

LabelBatch concat_labels(const LabelBatch& a, const LabelBatch& b);

}  // namespace infoscc
