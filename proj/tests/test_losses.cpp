#include "infoscc/adversary.hpp"
#include "infoscc/classifier.hpp"
#include "infoscc/encoder.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace infoscc;
using testing::numeric_grad;
using testing::random_matrix;
using testing::relative_error;

namespace {

Matrix<double> scalar(double v) { return Matrix<double>::Constant(1, 1, v); }

constexpr LossKind kAllLosses[] = {LossKind::hinge, LossKind::non_saturating, LossKind::lsgan};

}  // namespace

TEST_CASE("discriminator loss reference values") {
  CHECK(d_loss<double>(scalar(2), scalar(-2), LossKind::hinge) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d_loss<double>(scalar(0), scalar(0), LossKind::hinge) == doctest::Approx(2.0));
  CHECK(std::abs(d_loss<double>(scalar(0), scalar(0), LossKind::non_saturating) - 2 * std::log(2.0)) < 1e-12);
  CHECK(d_loss<double>(scalar(1), scalar(0), LossKind::lsgan) == 0.0);
  // 0.5 (0-1)^2 + 0.5 * 1^2
  CHECK(d_loss<double>(scalar(0), scalar(1), LossKind::lsgan) == doctest::Approx(1.0));
}

TEST_CASE("generator loss reference values") {
  CHECK(g_loss<double>(scalar(2), LossKind::hinge) == doctest::Approx(-2.0));
  CHECK(std::abs(g_loss<double>(scalar(0), LossKind::non_saturating) - std::log(2.0)) < 1e-12);
  CHECK(g_loss<double>(scalar(1), LossKind::lsgan) == 0.0);
  CHECK(g_loss<double>(scalar(0), LossKind::lsgan) == doctest::Approx(0.5));
}

TEST_CASE("losses average over every score of a patch map") {
  // Same value at every position and sample: the mean equals the scalar case.
  const Matrix<double> real = Matrix<double>::Constant(4, 3, 0.3), fake = Matrix<double>::Constant(4, 3, -0.7);
  for (LossKind k : kAllLosses) {
    CAPTURE(to_string(k));
    CHECK(d_loss<double>(real, fake, k) == doctest::Approx(d_loss<double>(scalar(0.3), scalar(-0.7), k)));
    CHECK(g_loss<double>(fake, k) == doctest::Approx(g_loss<double>(scalar(-0.7), k)));
  }
}

TEST_CASE("non-saturating loss is stable for large scores") {
  const double big = d_loss<double>(scalar(800), scalar(-800), LossKind::non_saturating);
  CHECK(std::isfinite(big));
  CHECK(big < 1e-300);
  CHECK(g_loss<double>(scalar(-800), LossKind::non_saturating) == doctest::Approx(800.0));
}

TEST_CASE("adversarial loss gradients match finite differences") {
  // Scores away from the hinge kinks at +-1.
  Matrix<double> real = random_matrix(3, 4, 11, 0.4), fake = random_matrix(3, 4, 12, 0.4);
  for (LossKind k : kAllLosses) {
    CAPTURE(to_string(k));
    const auto a = d_loss_with_grad<double>(real, fake, k);
    const auto nr = numeric_grad([&](const Matrix<double>& r) { return d_loss<double>(r, fake, k); }, real);
    const auto nf = numeric_grad([&](const Matrix<double>& f) { return d_loss<double>(real, f, k); }, fake);
    CHECK(relative_error(a.grad_real, nr) < 1e-4);
    CHECK(relative_error(a.grad_fake, nf) < 1e-4);
    const auto [gl, gg] = g_loss_with_grad<double>(fake, k);
    CHECK(gl == doctest::Approx(g_loss<double>(fake, k)));
    const auto ng = numeric_grad([&](const Matrix<double>& f) { return g_loss<double>(f, k); }, fake);
    CHECK(relative_error(gg, ng) < 1e-4);
  }
}

TEST_CASE("loss kind names round-trip") {
  for (LossKind k : kAllLosses) CHECK(loss_kind_from_string(to_string(k)) == k);
  CHECK(loss_kind_from_string("non-saturating") == LossKind::non_saturating);
  CHECK_THROWS_AS(loss_kind_from_string("wasserstein"), ConfigError);
  CHECK(discriminator_kind_from_string("patch") == DiscriminatorKind::patch);
  CHECK_THROWS_AS(discriminator_kind_from_string("spectral"), ConfigError);
}

TEST_CASE("categorical cross-entropy") {
  SUBCASE("uniform prediction over three classes costs log 3") {
    const Matrix<double> logits = Matrix<double>::Zero(3, 5);
    Matrix<double> y = Matrix<double>::Zero(3, 5);
    for (int j = 0; j < 5; ++j) y(j % 3, j) = 1;
    CHECK(std::abs(logits_loss_with_grad<double>(logits, y, LabelKind::categorical).first - std::log(3.0)) < 1e-12);
    const Matrix<double> p = probabilities_from_logits<double>(logits, LabelKind::categorical);
    CHECK(std::abs(classifier_loss<double>(p, y, LabelKind::categorical) - std::log(3.0)) < 1e-12);
  }
  SUBCASE("matches -log softmax computed directly") {
    const Matrix<double> logits = random_matrix(4, 6, 3);
    Matrix<double> y = Matrix<double>::Zero(4, 6);
    double expect = 0;
    for (int j = 0; j < 6; ++j) {
      const int c = (j * 3) % 4;
      y(c, j) = 1;
      double z = 0;
      for (int k = 0; k < 4; ++k) z += std::exp(logits(k, j));
      expect -= std::log(std::exp(logits(c, j)) / z);
    }
    expect /= 6;
    CHECK(logits_loss_with_grad<double>(logits, y, LabelKind::categorical).first == doctest::Approx(expect));
  }
  SUBCASE("probabilities are clamped away from log 0") {
    Matrix<double> p(2, 1), y(2, 1);
    p << 1.0, 0.0;
    y << 0.0, 1.0;
    CHECK(classifier_loss<double>(p, y, LabelKind::categorical) == doctest::Approx(-std::log(1e-12)));
  }
}

TEST_CASE("cross-entropy gradients match finite differences") {
  const Matrix<double> logits = random_matrix(3, 4, 21);
  Matrix<double> cat = Matrix<double>::Zero(3, 4);
  for (int j = 0; j < 4; ++j) cat((j + 1) % 3, j) = 1;
  Matrix<double> multi(3, 4);
  multi << 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0;
  for (auto [kind, y] : {std::pair{LabelKind::categorical, cat}, std::pair{LabelKind::multilabel, multi}}) {
    CAPTURE(to_string(kind));
    const auto [loss, grad] = logits_loss_with_grad<double>(logits, y, kind);
    const auto num = numeric_grad(
        [&, kind = kind, y = y](const Matrix<double>& l) { return logits_loss_with_grad<double>(l, y, kind).first; },
        logits);
    CHECK(relative_error(grad, num) < 1e-4);
    // Probability-space loss and gradient agree with the logit form.
    const Matrix<double> p = probabilities_from_logits<double>(logits, kind);
    CHECK(classifier_loss<double>(p, y, kind) == doctest::Approx(loss));
    const auto nump = numeric_grad(
        [&, kind = kind, y = y](const Matrix<double>& q) { return classifier_loss<double>(q, y, kind); }, p, 1e-7);
    CHECK(relative_error(classifier_loss_grad<double>(p, y, kind), nump) < 1e-4);
  }
}

TEST_CASE("InfoNCE reference values") {
  SUBCASE("a single pair has nothing to contrast against") {
    CHECK(std::abs(info_nce_loss<double>(random_matrix(8, 1, 1), random_matrix(8, 1, 2), 0.5)) < 1e-12);
  }
  SUBCASE("identical embeddings give log(2N - 1)") {
    for (int n : {2, 3, 8}) {
      const Matrix<double> e = Matrix<double>::Ones(5, n);
      CHECK(std::abs(info_nce_loss<double>(e, e, 0.5) - std::log(2.0 * n - 1)) < 1e-12);
    }
  }
  SUBCASE("matches the per-anchor softmax written out directly") {
    const Matrix<double> a = random_matrix(6, 3, 5), b = random_matrix(6, 3, 6);
    const double t = 0.2;
    Matrix<double> z(6, 6);
    z << a, b;
    for (int j = 0; j < 6; ++j) z.col(j).normalize();
    double expect = 0;
    for (int i = 0; i < 6; ++i) {
      double denom = 0;
      for (int k = 0; k < 6; ++k)
        if (k != i) denom += std::exp(z.col(i).dot(z.col(k)) / t);
      expect -= std::log(std::exp(z.col(i).dot(z.col((i + 3) % 6)) / t) / denom);
    }
    CHECK(info_nce_loss<double>(a, b, t) == doctest::Approx(expect / 6).epsilon(1e-12));
  }
  CHECK_THROWS_AS(info_nce_loss<double>(random_matrix(4, 2, 1), random_matrix(4, 3, 2), 0.5), ShapeError);
  CHECK_THROWS_AS(info_nce_loss<double>(random_matrix(4, 2, 1), random_matrix(4, 2, 2), 0.0), ConfigError);
}

TEST_CASE("InfoNCE gradient matches finite differences") {
  const Matrix<double> a = random_matrix(5, 4, 31), b = random_matrix(5, 4, 32);
  for (double t : {0.1, 0.5, 1.0}) {
    CAPTURE(t);
    const auto r = info_nce_loss_with_grad<double>(a, b, t);
    const auto na = numeric_grad([&](const Matrix<double>& x) { return info_nce_loss<double>(x, b, t); }, a);
    const auto nb = numeric_grad([&](const Matrix<double>& x) { return info_nce_loss<double>(a, x, t); }, b);
    CHECK(relative_error(r.grad_a, na) < 1e-4);
    CHECK(relative_error(r.grad_b, nb) < 1e-4);
  }
}

TEST_CASE("InfoNCE is invariant to embedding scale") {
  const Matrix<double> a = random_matrix(5, 4, 41), b = random_matrix(5, 4, 42);
  CHECK(info_nce_loss<double>(a * 7.5, b * 0.01, 0.5) == doctest::Approx(info_nce_loss<double>(a, b, 0.5)));
}
