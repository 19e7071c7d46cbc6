#include "infoscc/nn.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace infoscc;
using testing::numeric_grad;
using testing::random_matrix;
using testing::relative_error;

namespace {

using Map = FeatureMap<double>;

Map random_map(int c, int b, int h, int w, std::uint64_t seed) {
  return Map(random_matrix(c, Index(b) * h * w, seed), b, h, w);
}

// Direct 2-D convolution, one output at a time. Weight column (ky*k+kx)*C+c.
Map naive_conv(const Matrix<double>& weight, const Matrix<double>& bias, const Map& x, int k, int stride, int pad) {
  const int c = x.channels(), o = int(weight.rows());
  const int ho = (x.height + 2 * pad - k) / stride + 1, wo = (x.width + 2 * pad - k) / stride + 1;
  Matrix<double> y(o, Index(x.batch) * ho * wo);
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int oc = 0; oc < o; ++oc) {
          double acc = bias(oc, 0);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) continue;
              for (int ic = 0; ic < c; ++ic) {
                acc += weight(oc, (ky * k + kx) * c + ic) * x.data(ic, (Index(b) * x.height + iy) * x.width + ix);
              }
            }
          y(oc, (Index(b) * ho + oy) * wo + ox) = acc;
        }
  return Map(y, x.batch, ho, wo);
}

// Checks input and parameter gradients of `layer` on the probe loss
// sum(r .* layer(x)) with fixed random r.
template <typename Layer>
void check_layer_gradients(Layer& layer, const Map& x, double tol = 1e-6) {
  const Map y = layer.forward(x);
  const Matrix<double> r = random_matrix(y.data.rows(), y.data.cols(), 99);
  ParameterList<double> params;
  layer.collect(params, "");
  zero_grad(params);
  const Map dx = layer.backward(Map(r, y.batch, y.height, y.width));

  auto probe = [&](const Map& in) { return layer.infer(in).data.cwiseProduct(r).sum(); };
  const Matrix<double> ndx = numeric_grad(
      [&](const Matrix<double>& v) { return probe(Map(v, x.batch, x.height, x.width)); }, x.data);
  CHECK(relative_error(dx.data, ndx) < tol);
  for (auto& [name, p] : params) {
    CAPTURE(name);
    const Matrix<double> analytic = p->grad;
    const Matrix<double> keep = p->value;
    const Matrix<double> num = numeric_grad(
        [&](const Matrix<double>& v) {
          p->value = v;
          return probe(x);
        },
        keep);
    p->value = keep;
    CHECK(relative_error(analytic, num) < tol);
  }
}

}  // namespace

TEST_CASE("convolution matches the direct definition") {
  struct Case {
    int in, out, k, stride, pad, size;
  };
  // The last two shrink the channel count at stride 1 (the shifted-tap path).
  for (Case t : {Case{3, 5, 3, 2, 1, 7}, Case{2, 4, 4, 2, 1, 8}, Case{4, 4, 3, 1, 1, 5}, Case{6, 2, 3, 1, 1, 5},
                 Case{5, 1, 4, 1, 1, 4}}) {
    CAPTURE(t.in);
    CAPTURE(t.out);
    CAPTURE(t.stride);
    Rng rng(t.in * 10 + t.out);
    Conv2d<double> conv(t.in, t.out, t.k, t.stride, t.pad, rng);
    conv.bias.value = random_matrix(t.out, 1, 5);
    const Map x = random_map(t.in, 2, t.size, t.size, 7);
    const Map expect = naive_conv(conv.weight.value, conv.bias.value, x, t.k, t.stride, t.pad);
    const Map got = conv.infer(x);
    CHECK(got.height == expect.height);
    CHECK(got.width == expect.width);
    CHECK((got.data - expect.data).norm() < 1e-10 * (1 + expect.data.norm()));
    CHECK((conv.forward(x).data - got.data).norm() == 0.0);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(3);
  SUBCASE("linear") {
    Linear<double> l(5, 3, rng);
    l.bias.value = random_matrix(3, 1, 1);
    check_layer_gradients(l, Map::dense(random_matrix(5, 4, 2)));
  }
  SUBCASE("conv stride 2") {
    Conv2d<double> c(2, 3, 3, 2, 1, rng);
    check_layer_gradients(c, random_map(2, 2, 5, 5, 4));
  }
  SUBCASE("conv 4x4 stride 1, shrinking channels") {
    Conv2d<double> c(4, 2, 4, 1, 1, rng);
    check_layer_gradients(c, random_map(4, 2, 4, 4, 5));
  }
  SUBCASE("conv 3x3 same size") {
    Conv2d<double> c(2, 3, 3, 1, 1, rng);
    check_layer_gradients(c, random_map(2, 1, 4, 4, 6));
  }
  SUBCASE("leaky relu") {
    LeakyReLU<double> a(0.2);
    check_layer_gradients(a, random_map(3, 2, 2, 2, 7));
  }
  SUBCASE("tanh") {
    Tanh<double> t;
    check_layer_gradients(t, random_map(3, 2, 2, 2, 8));
  }
  SUBCASE("upsample") {
    Upsample2x<double> u;
    check_layer_gradients(u, random_map(2, 2, 3, 3, 9));
  }
  SUBCASE("global average pool") {
    GlobalAvgPool<double> g;
    check_layer_gradients(g, random_map(3, 2, 3, 3, 10));
  }
  SUBCASE("residual block") {
    ResidualBlock<double> r(2, rng);
    check_layer_gradients(r, random_map(2, 2, 3, 3, 11));
  }
  SUBCASE("sequential stack") {
    Sequential<double> s;
    s.add(Conv2d<double>(2, 4, 3, 2, 1, rng)).add(LeakyReLU<double>(0.2)).add(Flatten<double>());
    s.add(Linear<double>(16, 3, rng));
    check_layer_gradients(s, random_map(2, 2, 4, 4, 12));
  }
}

TEST_CASE("frozen parameters do not accumulate gradients") {
  Rng rng(1);
  Linear<double> l(3, 2, rng);
  l.weight.frozen = true;
  l.bias.frozen = true;
  l.forward(Map::dense(random_matrix(3, 4, 1)));
  const Map dx = l.backward(Map::dense(random_matrix(2, 4, 2)));
  CHECK(l.weight.grad.norm() == 0.0);
  CHECK(l.bias.grad.norm() == 0.0);
  CHECK(dx.data.norm() > 0.0);
}

TEST_CASE("leaky relu validates its slope") {
  CHECK_THROWS_AS(LeakyReLU<double>(-0.1), ConfigError);
  CHECK_THROWS_AS(LeakyReLU<double>(1.5), ConfigError);
  LeakyReLU<double> relu(0.0);
  Matrix<double> v(1, 3);
  v << -2, 0, 3;
  CHECK(relu.infer(Map::dense(v)).data == Matrix<double>((Matrix<double>(1, 3) << 0, 0, 3).finished()));
}

TEST_CASE("adam follows the bias-corrected update") {
  Parameter<double> p(Matrix<double>::Constant(1, 1, 1.0));
  ParameterList<double> params{{"p", &p}};
  Adam<double> opt({0.1, 0.9, 0.999, 1e-8});
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * x;  // d/dx x^2
    p.grad(0, 0) = g;
    opt.step(params);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value(0, 0) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("shape errors are reported") {
  Rng rng(1);
  Conv2d<double> c(3, 4, 3, 1, 1, rng);
  CHECK_THROWS_AS(c.infer(random_map(2, 1, 4, 4, 1)), ShapeError);
  Conv2d<double> big(3, 4, 4, 2, 0, rng);
  CHECK_THROWS_AS(big.infer(random_map(3, 1, 2, 2, 1)), ShapeError);
  CHECK_THROWS_AS(Map(Matrix<double>::Zero(2, 5), 1, 2, 2), ShapeError);
}
