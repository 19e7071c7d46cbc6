#pragma once

// Minimal layer library over Eigen with hand-written backward passes.
//
// Each layer offers three entry points:
//   infer(x) const   pure evaluation, safe for concurrent callers
//   forward(x)       evaluation that records what backward() needs
//   backward(g)      returns dLoss/dInput and accumulates parameter gradients
//                    (skipped for frozen parameters)

#include "infoscc/core.hpp"
#include "infoscc/random.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace infoscc {

template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool frozen = false;

  Parameter() = default;
  explicit Parameter(Matrix<Scalar> v)
      : value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
using ParameterList = std::vector<std::pair<std::string, Parameter<Scalar>*>>;

template <typename Scalar>
void zero_grad(const ParameterList<Scalar>& params) {
  for (auto& [name, p] : params) p->zero_grad();
}

template <typename Scalar>
void set_frozen(const ParameterList<Scalar>& params, bool frozen) {
  for (auto& [name, p] : params) p->frozen = frozen;
}

/// He initialization for layers followed by a leaky ReLU of the given slope.
template <typename Scalar>
Matrix<Scalar> he_normal(Index rows, Index cols, Index fan_in, Rng& rng, double slope = 0.2) {
  const double std = std::sqrt(2.0 / ((1.0 + slope * slope) * double(fan_in)));
  Matrix<Scalar> w = standard_normal<Scalar>(rows, cols, rng);
  return w * Scalar(std);
}

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng)
      : weight(he_normal<Scalar>(out_features, in_features, in_features, rng)),
        bias(Matrix<Scalar>::Zero(out_features, 1)) {}

  int in_features() const { return int(weight.value.cols()); }
  int out_features() const { return int(weight.value.rows()); }

  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    if (!x.is_dense() || x.channels() != in_features()) {
      throw ShapeError("linear: expected " + std::to_string(in_features()) +
                       " dense features, got " + std::to_string(x.channels()));
    }
    Matrix<Scalar> y = weight.value * x.data;
    y.colwise() += bias.value.col(0);
    return FeatureMap<Scalar>::dense(std::move(y));
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    input_ = x.data;
    return infer(x);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) {
    if (!weight.frozen) {
      weight.grad.noalias() += g.data * input_.transpose();
      bias.grad.col(0) += g.data.rowwise().sum();
    }
    return FeatureMap<Scalar>::dense(weight.value.transpose() * g.data);
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.emplace_back(prefix + "weight", &weight);
    out.emplace_back(prefix + "bias", &bias);
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  Matrix<Scalar> input_;
};

/// 2-D convolution, lowered to a GEMM over an im2col buffer. Weights are
/// (out x kernel*kernel*in) with rows ordered (ky, kx, channel).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
      : weight(he_normal<Scalar>(out_channels, kernel * kernel * in_channels,
                                 kernel * kernel * in_channels, rng)),
        bias(Matrix<Scalar>::Zero(out_channels, 1)),
        in_channels_(in_channels),
        kernel_(kernel),
        stride_(stride),
        padding_(padding) {}

  int in_channels() const { return in_channels_; }
  int out_channels() const { return int(weight.value.rows()); }
  int out_size(int n) const { return (n + 2 * padding_ - kernel_) / stride_ + 1; }

  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    check_input(x);
    const int ho = out_size(x.height), wo = out_size(x.width);
    if (shift_mode()) return shift_forward(x, ho, wo);
    return apply(im2col(x, ho, wo), x.batch, ho, wo);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    check_input(x);
    in_batch_ = x.batch;
    in_h_ = x.height;
    in_w_ = x.width;
    const int ho = out_size(x.height), wo = out_size(x.width);
    if (shift_mode()) {
      input_ = x.data;
      return shift_forward(x, ho, wo);
    }
    cols_ = im2col(x, ho, wo);
    return apply(cols_, x.batch, ho, wo);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) {
    if (!weight.frozen) bias.grad.col(0) += g.data.rowwise().sum();
    if (shift_mode()) return shift_backward(g);
    if (!weight.frozen) weight.grad.noalias() += g.data * cols_.transpose();
    Matrix<Scalar> dcols = weight.value.transpose() * g.data;
    return col2im(dcols, g.height, g.width);
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.emplace_back(prefix + "weight", &weight);
    out.emplace_back(prefix + "bias", &bias);
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  void check_input(const FeatureMap<Scalar>& x) const {
    if (x.channels() != in_channels_) {
      throw ShapeError("conv2d: expected " + std::to_string(in_channels_) + " channels, got " +
                       std::to_string(x.channels()));
    }
    if (out_size(x.height) < 1 || out_size(x.width) < 1) {
      throw ShapeError("conv2d: input " + std::to_string(x.height) + "x" +
                       std::to_string(x.width) + " too small for kernel");
    }
  }

  FeatureMap<Scalar> apply(const Matrix<Scalar>& cols, int batch, int ho, int wo) const {
    Matrix<Scalar> y(out_channels(), cols.cols());
    y.noalias() = weight.value * cols;
    y.colwise() += bias.value.col(0);
    return FeatureMap<Scalar>(std::move(y), batch, ho, wo);
  }

  // Stride-1 convolutions that shrink the channel count are evaluated as one
  // GEMM per kernel tap on the input followed by shifted sums, which touches
  // k*k*out values per pixel instead of the k*k*in of an im2col buffer.
  bool shift_mode() const { return stride_ == 1 && out_channels() < in_channels_; }

  // (k*k*out x in): block t holds the weights of kernel tap t = ky*k + kx.
  Matrix<Scalar> stacked_weight() const {
    const int o = out_channels(), c = in_channels_, taps = kernel_ * kernel_;
    Matrix<Scalar> w(Index(taps) * o, c);
    for (int t = 0; t < taps; ++t) w.middleRows(Index(t) * o, o) = weight.value.middleCols(Index(t) * c, c);
    return w;
  }

  template <typename Visit>
  void for_each_tap(int batch, int h, int w, int ho, int wo, Visit&& visit) const {
    for (int b = 0; b < batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Index out_col = (Index(b) * ho + oy) * wo + ox;
          const auto [kx0, kx1] = kernel_span(ox, w);
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy - padding_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = kx0; kx < kx1; ++kx) {
              visit(out_col, (Index(b) * h + iy) * w + (ox - padding_ + kx), ky * kernel_ + kx);
            }
          }
        }
      }
    }
  }

  FeatureMap<Scalar> shift_forward(const FeatureMap<Scalar>& x, int ho, int wo) const {
    const Index o = out_channels();
    const Matrix<Scalar> taps = stacked_weight() * x.data;
    Matrix<Scalar> y(o, Index(x.batch) * ho * wo);
    y.colwise() = bias.value.col(0);
    for_each_tap(x.batch, x.height, x.width, ho, wo, [&](Index out_col, Index in_col, int t) {
      y.col(out_col) += taps.block(Index(t) * o, in_col, o, 1);
    });
    return FeatureMap<Scalar>(std::move(y), x.batch, ho, wo);
  }

  FeatureMap<Scalar> shift_backward(const FeatureMap<Scalar>& g) {
    const Index o = out_channels(), c = in_channels_;
    const int taps = kernel_ * kernel_;
    Matrix<Scalar> spread = Matrix<Scalar>::Zero(Index(taps) * o, input_.cols());
    for_each_tap(in_batch_, in_h_, in_w_, g.height, g.width, [&](Index out_col, Index in_col, int t) {
      spread.block(Index(t) * o, in_col, o, 1) = g.data.col(out_col);
    });
    if (!weight.frozen) {
      const Matrix<Scalar> dw = spread * input_.transpose();
      for (int t = 0; t < taps; ++t) weight.grad.middleCols(Index(t) * c, c) += dw.middleRows(Index(t) * o, o);
    }
    Matrix<Scalar> dx = stacked_weight().transpose() * spread;
    return FeatureMap<Scalar>(std::move(dx), in_batch_, in_h_, in_w_);
  }

  // Valid kernel columns [kx0, kx1) for output column ox.
  std::pair<int, int> kernel_span(int ox, int width) const {
    const int base = ox * stride_ - padding_;
    return {std::max(0, -base), std::min(kernel_, width - base)};
  }

  Matrix<Scalar> im2col(const FeatureMap<Scalar>& x, int ho, int wo) const {
    const int c = in_channels_;
    const Index rows = Index(kernel_) * kernel_ * c;
    Matrix<Scalar> cols(rows, Index(x.batch) * ho * wo);
    const Scalar* src = x.data.data();
    Scalar* dst = cols.data();
    for (int b = 0; b < x.batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          Scalar* col = dst + ((Index(b) * ho + oy) * wo + ox) * rows;
          const auto [kx0, kx1] = kernel_span(ox, x.width);
          for (int ky = 0; ky < kernel_; ++ky) {
            Scalar* out = col + Index(ky) * kernel_ * c;
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= x.height || kx1 <= kx0) {
              std::fill_n(out, kernel_ * c, Scalar(0));
              continue;
            }
            std::fill_n(out, kx0 * c, Scalar(0));
            const int ix = ox * stride_ - padding_ + kx0;
            std::copy_n(src + ((Index(b) * x.height + iy) * x.width + ix) * c, (kx1 - kx0) * c, out + kx0 * c);
            std::fill_n(out + kx1 * c, (kernel_ - kx1) * c, Scalar(0));
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<Scalar> col2im(const Matrix<Scalar>& dcols, int ho, int wo) const {
    const int c = in_channels_;
    const Index rows = dcols.rows();
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(c, Index(in_batch_) * in_h_ * in_w_);
    const Scalar* src = dcols.data();
    Scalar* dst = dx.data();
    for (int b = 0; b < in_batch_; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Scalar* col = src + ((Index(b) * ho + oy) * wo + ox) * rows;
          const auto [kx0, kx1] = kernel_span(ox, in_w_);
          if (kx1 <= kx0) continue;
          const Index len = Index(kx1 - kx0) * c;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= in_h_) continue;
            const int ix = ox * stride_ - padding_ + kx0;
            Eigen::Map<Vector<Scalar>> target(dst + ((Index(b) * in_h_ + iy) * in_w_ + ix) * c, len);
            target += Eigen::Map<const Vector<Scalar>>(col + (Index(ky) * kernel_ + kx0) * c, len);
          }
        }
      }
    }
    return FeatureMap<Scalar>(std::move(dx), in_batch_, in_h_, in_w_);
  }

  int in_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int padding_ = 0;
  int in_batch_ = 0, in_h_ = 0, in_w_ = 0;
  Matrix<Scalar> cols_;
  Matrix<Scalar> input_;
};

/// Leaky ReLU; slope 0 gives a plain ReLU.
template <typename Scalar>
class LeakyReLU {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(Scalar(slope)) {
    if (slope < 0.0 || slope > 1.0) throw ConfigError("leaky ReLU slope must be in [0, 1]");
  }

  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    // max(v, slope*v) equals the leaky ReLU for slopes in [0, 1].
    Matrix<Scalar> y = x.data.array().max(x.data.array() * slope_).matrix();
    return FeatureMap<Scalar>(std::move(y), x.batch, x.height, x.width);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    input_ = x.data;
    return infer(x);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const {
    Matrix<Scalar> dx = (input_.array() > Scalar(0)).select(g.data, g.data * slope_);
    return FeatureMap<Scalar>(std::move(dx), g.batch, g.height, g.width);
  }

  void collect(ParameterList<Scalar>&, const std::string&) {}

 private:
  Scalar slope_;
  Matrix<Scalar> input_;
};

template <typename Scalar>
class Tanh {
 public:
  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    FeatureMap<Scalar> y = x;
    y.data = x.data.array().tanh().matrix();
    return y;
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    FeatureMap<Scalar> y = infer(x);
    output_ = y.data;
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const {
    FeatureMap<Scalar> dx = g;
    dx.data = (g.data.array() * (Scalar(1) - output_.array().square())).matrix();
    return dx;
  }

  void collect(ParameterList<Scalar>&, const std::string&) {}

 private:
  Matrix<Scalar> output_;
};

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
class Upsample2x {
 public:
  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    const int h = x.height, w = x.width, oh = 2 * h, ow = 2 * w;
    Matrix<Scalar> y(x.channels(), Index(x.batch) * oh * ow);
    for (int b = 0; b < x.batch; ++b)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          y.col((Index(b) * oh + oy) * ow + ox) = x.data.col((Index(b) * h + oy / 2) * w + ox / 2);
    return FeatureMap<Scalar>(std::move(y), x.batch, oh, ow);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) { return infer(x); }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const {
    const int oh = g.height, ow = g.width, h = oh / 2, w = ow / 2;
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(g.channels(), Index(g.batch) * h * w);
    for (int b = 0; b < g.batch; ++b)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          dx.col((Index(b) * h + oy / 2) * w + ox / 2) += g.data.col((Index(b) * oh + oy) * ow + ox);
    return FeatureMap<Scalar>(std::move(dx), g.batch, h, w);
  }

  void collect(ParameterList<Scalar>&, const std::string&) {}
};

/// Mean over spatial positions: (C, B*H*W) -> (C, B).
template <typename Scalar>
class GlobalAvgPool {
 public:
  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    const int hw = x.pixels();
    Matrix<Scalar> y(x.channels(), x.batch);
    for (int b = 0; b < x.batch; ++b)
      y.col(b) = x.data.middleCols(Index(b) * hw, hw).rowwise().mean();
    return FeatureMap<Scalar>::dense(std::move(y));
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    h_ = x.height;
    w_ = x.width;
    return infer(x);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const {
    const int hw = h_ * w_;
    Matrix<Scalar> dx(g.channels(), Index(g.batch) * hw);
    for (int b = 0; b < g.batch; ++b)
      dx.middleCols(Index(b) * hw, hw).colwise() = g.data.col(b) / Scalar(hw);
    return FeatureMap<Scalar>(std::move(dx), g.batch, h_, w_);
  }

  void collect(ParameterList<Scalar>&, const std::string&) {}

 private:
  int h_ = 1, w_ = 1;
};

template <typename Scalar>
class Flatten {
 public:
  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const { return flatten(x); }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    c_ = x.channels();
    h_ = x.height;
    w_ = x.width;
    return flatten(x);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const { return unflatten(g, c_, h_, w_); }

  void collect(ParameterList<Scalar>&, const std::string&) {}

 private:
  int c_ = 0, h_ = 1, w_ = 1;
};

/// Dense (C*H*W, B) -> feature map (C, B*H*W).
template <typename Scalar>
class Unflatten {
 public:
  Unflatten(int channels, int height, int width) : c_(channels), h_(height), w_(width) {}

  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const { return unflatten(x, c_, h_, w_); }
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) { return infer(x); }
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) const { return flatten(g); }

  void collect(ParameterList<Scalar>&, const std::string&) {}

 private:
  int c_, h_, w_;
};

/// x -> act(x + conv_b(act(conv_a(x)))), 3x3 same-size convolutions.
template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock(int channels, Rng& rng, double slope = 0.2)
      : conv_a_(channels, channels, 3, 1, 1, rng),
        conv_b_(channels, channels, 3, 1, 1, rng),
        act_a_(slope),
        act_out_(slope) {}

  FeatureMap<Scalar> infer(const FeatureMap<Scalar>& x) const {
    FeatureMap<Scalar> h = conv_b_.infer(act_a_.infer(conv_a_.infer(x)));
    h.data += x.data;
    return act_out_.infer(h);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    FeatureMap<Scalar> h = conv_b_.forward(act_a_.forward(conv_a_.forward(x)));
    h.data += x.data;
    return act_out_.forward(h);
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& g) {
    FeatureMap<Scalar> dh = act_out_.backward(g);
    FeatureMap<Scalar> dx = conv_a_.backward(act_a_.backward(conv_b_.backward(dh)));
    dx.data += dh.data;
    return dx;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    conv_a_.collect(out, prefix + "a.");
    conv_b_.collect(out, prefix + "b.");
  }

 private:
  Conv2d<Scalar> conv_a_, conv_b_;
  LeakyReLU<Scalar> act_a_, act_out_;
};

template <typename Scalar>
using AnyLayer = std::variant<Linear<Scalar>, Conv2d<Scalar>, LeakyReLU<Scalar>, Tanh<Scalar>,
                              Upsample2x<Scalar>, GlobalAvgPool<Scalar>, Flatten<Scalar>,
                              Unflatten<Scalar>, ResidualBlock<Scalar>>;

/// Value-semantic layer stack; copying a Sequential copies all parameters.
template <typename Scalar>
class Sequential {
 public:
  template <typename Layer>
  Sequential& add(Layer layer) {
    layers_.emplace_back(std::move(layer));
    return *this;
  }

  bool empty() const { return layers_.empty(); }
  std::size_t size() const { return layers_.size(); }

  FeatureMap<Scalar> infer(FeatureMap<Scalar> x) const {
    for (const auto& layer : layers_) {
      x = std::visit([&](const auto& l) { return l.infer(x); }, layer);
    }
    return x;
  }

  FeatureMap<Scalar> forward(FeatureMap<Scalar> x) {
    for (auto& layer : layers_) {
      x = std::visit([&](auto& l) { return l.forward(x); }, layer);
    }
    return x;
  }

  FeatureMap<Scalar> backward(FeatureMap<Scalar> g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = std::visit([&](auto& l) { return l.backward(g); }, *it);
    }
    return g;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::visit([&](auto& l) { l.collect(out, prefix + std::to_string(i) + "."); }, layers_[i]);
    }
  }

 private:
  std::vector<AnyLayer<Scalar>> layers_;
};

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the order of the
/// parameter list passed to step(), which must be stable across calls.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  void step(const ParameterList<Scalar>& params) {
    if (first_.empty()) {
      for (auto& [name, p] : params) {
        first_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_.size() != params.size()) throw ShapeError("adam: parameter list changed size");
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
    const Scalar lr = Scalar(cfg_.learning_rate / c1);
    const Scalar inv_c2 = Scalar(1.0 / c2), eps = Scalar(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<Scalar>& p = *params[i].second;
      if (p.frozen) continue;
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * p.grad;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -=
          lr * first_[i].array() / ((second_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return steps_; }

  // Serialization access.
  std::vector<Matrix<Scalar>>& first_moments() { return first_; }
  std::vector<Matrix<Scalar>>& second_moments() { return second_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return first_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return second_; }
  void set_steps(std::int64_t t) { steps_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  std::vector<Matrix<Scalar>> first_, second_;
};

}  // namespace infoscc
