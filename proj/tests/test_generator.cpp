#include "infoscc/classifier.hpp"
#include "infoscc/encoder.hpp"
#include "infoscc/generator.hpp"
#include "infoscc/trainer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <Eigen/QR>

using namespace infoscc;
using testing::numeric_grad;
using testing::random_matrix;
using testing::relative_error;

namespace {

Matrix<double> orthonormal(Index d, Index q, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix<double>> qr(random_matrix(d, q, seed));
  return qr.householderQ() * Matrix<double>::Identity(d, q);
}

GeneratorArch small_arch() {
  GeneratorArch a;
  a.image_size = 8;
  a.channels = 3;
  a.num_classes = 3;
  a.label_dim = 4;
  a.noise_dim = 5;
  a.cond_dim = 6;
  a.base_size = 2;
  a.base_width = 8;
  a.min_width = 4;
  return a;
}

}  // namespace

TEST_CASE("subspace layer: zero code maps to the origin") {
  Rng rng(1);
  SubspaceLayer<double> s(12, 4, rng);
  s.origin.value = random_matrix(12, 1, 2);
  const Matrix<double> out = s.apply(Matrix<double>::Zero(4, 3));
  for (Index j = 0; j < 3; ++j) CHECK((out.col(j) - s.origin.value.col(0)).norm() == 0.0);
}

TEST_CASE("subspace layer is affine in the code") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    SubspaceLayer<double> s(10, 3, rng);
    s.origin.value = random_matrix(10, 1, 100 + trial);
    s.basis.value = random_matrix(10, 3, 200 + trial);
    const Matrix<double> z1 = random_matrix(3, 2, 300 + trial), z2 = random_matrix(3, 2, 400 + trial);
    const double a = 0.5 + trial, b = -1.25;
    const Matrix<double> lhs = s.apply(a * z1 + b * z2);
    Matrix<double> rhs = a * s.apply(z1) + b * s.apply(z2);
    rhs.colwise() += (1 - a - b) * s.origin.value.col(0);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("in single precision too") {
    SubspaceLayer<float> s(10, 3, rng);
    const Matrix<float> z1 = random_matrix(3, 1, 7).cast<float>(), z2 = random_matrix(3, 1, 8).cast<float>();
    const Matrix<float> mu = s.apply(Matrix<float>::Zero(3, 1));
    const Matrix<float> lhs = s.apply(z1 + 2 * z2) - mu;
    const Matrix<float> rhs = (s.apply(z1) - mu) + 2 * (s.apply(z2) - mu);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("subspace layer matches U diag(L) z + mu written out") {
  const Matrix<double> u = random_matrix(5, 2, 1), l = random_matrix(2, 1, 2), mu = random_matrix(5, 1, 3);
  const Matrix<double> z = random_matrix(2, 4, 4);
  const Matrix<double> out = subspace_inject<double>(z, u, l, mu);
  for (Index b = 0; b < 4; ++b)
    for (Index i = 0; i < 5; ++i) {
      double v = mu(i, 0);
      for (Index j = 0; j < 2; ++j) v += u(i, j) * l(j, 0) * z(j, b);
      CHECK(out(i, b) == doctest::Approx(v).epsilon(1e-12));
    }
  CHECK_THROWS_AS(subspace_inject<double>(random_matrix(3, 1, 1), u, l, mu), ShapeError);
}

TEST_CASE("orthogonality penalty values") {
  for (int q : {1, 3, 6}) {
    CAPTURE(q);
    const Matrix<double> u = orthonormal(16, q, q);
    CHECK(orthogonality_penalty<double>(u) < 1e-20);
    // (2U)^T (2U) - I = 3I, whose squared Frobenius norm is 9q.
    CHECK(orthogonality_penalty<double>(2 * u) == doctest::Approx(9.0 * q).epsilon(1e-12));
  }
  SUBCASE("initial bases are orthonormal") {
    Rng rng(4);
    SubspaceLayer<double> s(20, 6, rng);
    CHECK(orthogonality_penalty<double>(s.basis.value) < 1e-20);
  }
}

TEST_CASE("orthogonality penalty is invariant under right-orthogonal multiplication") {
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<double> u = random_matrix(9, 4, 500 + trial);
    const Matrix<double> r = orthonormal(4, 4, 600 + trial);
    CHECK(std::abs(orthogonality_penalty<double>(u * r) - orthogonality_penalty<double>(u)) < 1e-9);
  }
}

TEST_CASE("orthogonality penalty gradient matches finite differences") {
  const Matrix<double> u = random_matrix(7, 3, 9);
  const Matrix<double> num = numeric_grad([](const Matrix<double>& x) { return orthogonality_penalty<double>(x); }, u);
  CHECK(relative_error(orthogonality_penalty_grad<double>(u), num) < 1e-6);
}

TEST_CASE("subspace layer parameter gradients match finite differences") {
  Rng rng(5);
  SubspaceLayer<double> s(6, 3, rng);
  s.origin.value = random_matrix(6, 1, 1);
  const Matrix<double> z = random_matrix(3, 4, 2), r = random_matrix(6, 4, 3);
  s.basis.zero_grad();
  s.scales.zero_grad();
  s.origin.zero_grad();
  s.backward(r, z);
  for (Parameter<double>* p : {&s.basis, &s.scales, &s.origin}) {
    const Matrix<double> keep = p->value;
    const Matrix<double> num = numeric_grad(
        [&](const Matrix<double>& v) {
          p->value = v;
          return s.apply(z).cwiseProduct(r).sum();
        },
        keep);
    p->value = keep;
    CHECK(relative_error(p->grad, num) < 1e-6);
  }
}

TEST_CASE("generator architecture") {
  GeneratorArch a;
  a.image_size = 32;
  a.base_size = 4;
  CHECK(a.num_layers() == 3);
  CHECK(a.layer_dims() == std::vector<int>{6, 6, 6});
  a.image_size = 256;
  CHECK(a.num_layers() == 6);
  CHECK(a.layer_dims() == std::vector<int>(6, 6));
  CHECK(a.width(0) == 256);
  CHECK(a.width(6) == 16);

  GeneratorArch bad = small_arch();
  bad.image_size = 12;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_arch();
  bad.subspace_dims = {6, 6, 6};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.subspace_dims = {6, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_arch();
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.kind = LabelKind::multilabel;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("generator output shape, range and determinism") {
  Rng rng(6);
  Generator<double> g(small_arch(), rng);
  Rng zr(7);
  const LatentCode<double> z = sample_latent<double>(g.arch(), 4, zr);
  Matrix<double> y = Matrix<double>::Zero(3, 4);
  for (int b = 0; b < 4; ++b) y(b % 3, b) = 1;
  const ImageBatch<double> img = g.generate(y, z);
  CHECK(img.batch == 4);
  CHECK(img.channels == 3);
  CHECK(img.height == 8);
  CHECK(img.width == 8);
  CHECK(img.pixels.cwiseAbs().maxCoeff() <= 1.0);
  CHECK((g.generate(y, z).pixels - img.pixels).norm() == 0.0);
  // The training path computes the same images.
  CHECK((to_image_batch(g.forward(y, z)).pixels - img.pixels).norm() < 1e-12);

  SUBCASE("labels change the output") {
    Matrix<double> other = Matrix<double>::Zero(3, 4);
    for (int b = 0; b < 4; ++b) other((b + 1) % 3, b) = 1;
    CHECK((g.generate(other, z).pixels - img.pixels).norm() > 1e-6);
  }
  SUBCASE("shape checks") {
    CHECK_THROWS_AS(g.generate(Matrix<double>::Zero(2, 4), z), ShapeError);
    CHECK_THROWS_AS(g.generate(Matrix<double>::Zero(3, 3), z), ShapeError);
    LatentCode<double> short_code = z;
    short_code.layer_codes.pop_back();
    CHECK_THROWS_AS(g.generate(y, short_code), ShapeError);
  }
}

TEST_CASE("traversal sweeps one coordinate") {
  Rng rng(8);
  Generator<double> g(small_arch(), rng);
  Rng zr(9);
  const LatentCode<double> z = sample_latent<double>(g.arch(), 1, zr);
  Matrix<double> y = Matrix<double>::Zero(3, 1);
  y(1, 0) = 1;
  const std::vector<double> values{-3, -1, 0, 2, 3};
  const auto strip = g.traverse(y, z, 1, 2, values);
  REQUIRE(strip.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    LatentCode<double> direct = z;
    direct.layer_codes[1](2, 0) = values[i];
    CHECK((g.generate(y, direct).pixels - strip[i].pixels).norm() == 0.0);
  }
  CHECK((strip.front().pixels - strip.back().pixels).norm() > 1e-6);
  CHECK_THROWS_AS(g.traverse(y, z, 2, 0, values), ConfigError);
  CHECK_THROWS_AS(g.traverse(y, z, 0, 6, values), ConfigError);
  CHECK_THROWS_AS(g.traverse(y, z, -1, 0, values), ConfigError);
}

TEST_CASE("generator parameter gradients match finite differences") {
  Rng rng(10);
  GeneratorArch a = small_arch();
  a.image_size = 4;
  a.subspace_dims = {2};
  Generator<double> g(a, rng);
  Rng zr(11);
  const LatentCode<double> z = sample_latent<double>(a, 2, zr);
  Matrix<double> y = Matrix<double>::Zero(3, 2);
  y(0, 0) = y(2, 1) = 1;
  const FeatureMap<double> out = g.forward(y, z);
  const Matrix<double> r = random_matrix(out.data.rows(), out.data.cols(), 12);
  const ParameterList<double> params = g.parameters();
  zero_grad(params);
  g.backward(FeatureMap<double>(r, out.batch, out.height, out.width));
  for (const auto& [name, p] : params) {
    CAPTURE(name);
    const Matrix<double> keep = p->value;
    const Matrix<double> num = numeric_grad(
        [&, p = p](const Matrix<double>& v) {
          p->value = v;
          return g.generate_maps(y, z).data.cwiseProduct(r).sum();
        },
        keep);
    p->value = keep;
    CHECK(relative_error(p->grad, num) < 1e-5);
  }
}

TEST_CASE("regularization chain gradient on a 4-pixel generator") {
  // 2x2 single-channel images through a frozen encoder and classifier.
  GeneratorArch ga;
  ga.image_size = 2;
  ga.base_size = 1;
  ga.channels = 1;
  ga.num_classes = 3;
  ga.label_dim = 3;
  ga.noise_dim = 3;
  ga.cond_dim = 4;
  ga.base_width = 4;
  ga.min_width = 2;
  ga.subspace_dims = {2};
  EncoderArch ea;
  ea.image_size = 2;
  ea.channels = 1;
  ea.widths = {4};
  ea.embedding_dim = 5;
  ea.projection_hidden = 4;
  ea.projection_dim = 3;
  ClassifierArch ca;
  ca.input_dim = 5;
  ca.hidden = {6};
  ca.num_classes = 3;

  Rng rng(13);
  Generator<double> g(ga, rng);
  Encoder<double> enc(ea, rng);
  Classifier<double> cls(ca, rng);
  set_frozen(enc.parameters(), true);
  set_frozen(cls.parameters(), true);
  Rng zr(14);
  const LatentCode<double> z = sample_latent<double>(ga, 3, zr);
  Matrix<double> y = Matrix<double>::Zero(3, 3);
  y(0, 0) = y(1, 1) = y(2, 2) = 1;
  const double weight = 0.7;

  auto chain = [&](const Generator<double>& gen) {
    const Matrix<double> logits = cls.logits(enc.encode(gen.generate_maps(y, z)));
    return weight * logits_loss_with_grad<double>(logits, y, LabelKind::categorical).first;
  };
  const ParameterList<double> params = g.parameters();
  zero_grad(params);
  const double loss = regularization_backward<double>(g, enc, cls, y, z, LabelKind::categorical, weight);
  CHECK(weight * loss == doctest::Approx(chain(g)).epsilon(1e-12));
  for (const auto& [name, p] : params) {
    CAPTURE(name);
    const Matrix<double> keep = p->value;
    const Matrix<double> num = numeric_grad(
        [&, p = p](const Matrix<double>& v) {
          p->value = v;
          return chain(g);
        },
        keep);
    p->value = keep;
    CHECK(relative_error(p->grad, num) < 1e-3);
  }
  for (auto& [name, p] : enc.parameters()) CHECK(p->grad.norm() == 0.0);
  for (auto& [name, p] : cls.parameters()) CHECK(p->grad.norm() == 0.0);
}
