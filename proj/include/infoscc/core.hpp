#pragma once

// Shared dense types. Every batched matrix in this library stores one sample
// per column: an embedding batch is (dim x batch), a score map is
// (positions x batch), and so on.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace infoscc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (bad keys, out-of-range values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatch between inputs and a model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or incompatible checkpoint archive.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses and other numerical failures during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Activations of a batch of feature maps.
///
/// `data` is (channels x batch*height*width); column `(b*height + y)*width + x`
/// holds the channel vector of pixel (y, x) of sample b. Dense activations are
/// the special case height == width == 1, so a (features x batch) matrix is a
/// valid feature map as-is. Because each sample's pixels are contiguous, the
/// flattened (channels*height*width x batch) view is a pure reinterpretation.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> data;
  int batch = 0;
  int height = 1;
  int width = 1;

  FeatureMap() = default;
  FeatureMap(Matrix<Scalar> values, int batch_size, int h, int w)
      : data(std::move(values)), batch(batch_size), height(h), width(w) {
    if (data.cols() != Index(batch) * h * w) {
      throw ShapeError("feature map: column count does not match batch*h*w");
    }
  }

  static FeatureMap dense(Matrix<Scalar> values) {
    const int b = int(values.cols());
    return FeatureMap(std::move(values), b, 1, 1);
  }

  int channels() const { return int(data.rows()); }
  int pixels() const { return height * width; }
  bool is_dense() const { return height == 1 && width == 1; }
};

/// (channels*h*w x batch) view of a feature map, copied.
template <typename Scalar>
FeatureMap<Scalar> flatten(const FeatureMap<Scalar>& x) {
  Matrix<Scalar> flat = x.data.reshaped(Index(x.channels()) * x.pixels(), x.batch);
  return FeatureMap<Scalar>::dense(std::move(flat));
}

/// Inverse of flatten: reinterpret dense columns as (channels, h, w) maps.
template <typename Scalar>
FeatureMap<Scalar> unflatten(const FeatureMap<Scalar>& x, int channels, int h, int w) {
  if (x.channels() != channels * h * w) {
    throw ShapeError("unflatten: feature count " + std::to_string(x.channels()) +
                     " != " + std::to_string(channels * h * w));
  }
  Matrix<Scalar> maps = x.data.reshaped(channels, Index(x.batch) * h * w);
  return FeatureMap<Scalar>(std::move(maps), x.batch, h, w);
}

/// Concatenate two feature maps along the batch axis.
template <typename Scalar>
FeatureMap<Scalar> concat_batch(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.channels() != b.channels() || a.height != b.height || a.width != b.width) {
    throw ShapeError("concat_batch: incompatible feature maps");
  }
  Matrix<Scalar> joined(a.data.rows(), a.data.cols() + b.data.cols());
  joined << a.data, b.data;
  return FeatureMap<Scalar>(std::move(joined), a.batch + b.batch, a.height, a.width);
}

/// Samples [first, first+count) of a feature map.
template <typename Scalar>
FeatureMap<Scalar> slice_batch(const FeatureMap<Scalar>& x, int first, int count) {
  const Index per = x.pixels();
  return FeatureMap<Scalar>(x.data.middleCols(first * per, count * per), count, x.height,
                            x.width);
}

}  // namespace infoscc
