#include "infoscc/metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace infoscc;
using testing::random_matrix;

namespace {

// Brute-force symmetric Chamfer over all pairs.
double chamfer_oracle(const Matrix<double>& a, const Matrix<double>& b) {
  auto directed = [](const Matrix<double>& x, const Matrix<double>& y) {
    double total = 0;
    for (Index i = 0; i < x.cols(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < y.cols(); ++j) {
        double d = 0;
        for (Index k = 0; k < x.rows(); ++k) d += (x(k, i) - y(k, j)) * (x(k, i) - y(k, j));
        best = std::min(best, d);
      }
      total += best;
    }
    return total / double(x.cols());
  };
  return directed(a, b) + directed(b, a);
}

}  // namespace

TEST_CASE("FID of a set with itself vanishes") {
  const Matrix<double> a = random_matrix(8, 200, 1);
  CHECK(fid(a, a) <= 1e-6);
  CHECK(fid(a, a) >= 0.0);
}

TEST_CASE("FID of a mean-shifted Gaussian approaches the squared shift") {
  const int d = 16, n = 10000;
  Vector<double> m(d);
  for (int i = 0; i < d; ++i) m[i] = (i % 2 ? 1.0 : -1.0) * (0.5 + 0.1 * i);
  const Matrix<double> a = random_matrix(d, n, 2);
  Matrix<double> b = random_matrix(d, n, 3);
  b.colwise() += m;
  CHECK(std::abs(fid(a, b) - m.squaredNorm()) <= 0.02 * m.squaredNorm());
}

TEST_CASE("Frechet distance for diagonal covariances has a closed form") {
  Vector<double> mu1(3), mu2(3), s1(3), s2(3);
  mu1 << 0, 1, 2;
  mu2 << 1, 1, 0;
  s1 << 1, 4, 0.25;
  s2 << 9, 1, 1;
  double expect = (mu1 - mu2).squaredNorm();
  for (int i = 0; i < 3; ++i) expect += s1[i] + s2[i] - 2 * std::sqrt(s1[i] * s2[i]);
  CHECK(frechet_distance(mu1, s1.asDiagonal().toDenseMatrix(), mu2, s2.asDiagonal().toDenseMatrix()) ==
        doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("FID is symmetric and rejects bad inputs") {
  const Matrix<double> a = random_matrix(4, 50, 4), b = random_matrix(4, 60, 5) * 2.0;
  CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-8));
  CHECK_THROWS_AS(fid(a, random_matrix(5, 50, 6)), ShapeError);
  CHECK_THROWS_AS(fid(a, random_matrix(4, 1, 6)), ConfigError);
}

TEST_CASE("inception score identities") {
  const int k = 5, n = 100;
  SUBCASE("uniform predictions score 1") {
    const InceptionScore is = inception_score(Matrix<double>::Constant(k, n, 1.0 / k), 10);
    CHECK(is.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(is.std == doctest::Approx(0.0));
  }
  SUBCASE("confident predictions spread evenly over classes score K") {
    Matrix<double> p = Matrix<double>::Zero(k, n);
    for (int j = 0; j < n; ++j) p(j % k, j) = 1.0;
    const InceptionScore is = inception_score(p, 10);
    CHECK(is.mean == doctest::Approx(double(k)).epsilon(1e-12));
    CHECK(is.std < 1e-12);
  }
  SUBCASE("confident predictions of one class score 1") {
    Matrix<double> p = Matrix<double>::Zero(k, n);
    p.row(2).setOnes();
    CHECK(inception_score(p, 1).mean == doctest::Approx(1.0));
  }
  SUBCASE("invalid distributions are rejected") {
    CHECK_THROWS_AS(inception_score(Matrix<double>::Constant(k, n, 0.3), 10), ConfigError);
    CHECK_THROWS_AS(inception_score(Matrix<double>::Constant(k, 5, 0.2), 10), ConfigError);
  }
}

TEST_CASE("Chamfer distance matches the brute-force oracle") {
  for (int trial = 0; trial < 20; ++trial) {
    const Index na = 1 + (trial * 7) % 50, nb = 1 + (trial * 13) % 50, dim = 1 + trial % 4;
    const Matrix<double> a = random_matrix(dim, na, 1000 + trial, 3.0);
    const Matrix<double> b = random_matrix(dim, nb, 2000 + trial, 3.0);
    CHECK(std::abs(chamfer_distance(a, b) - chamfer_oracle(a, b)) <= 1e-9);
  }
}

TEST_CASE("Chamfer distance reference values") {
  Matrix<double> origin = Matrix<double>::Zero(3, 1), unit = Matrix<double>::Zero(3, 1);
  unit(0, 0) = 1;
  CHECK(chamfer_distance(origin, unit) == 2.0);
  const Matrix<double> a = random_matrix(3, 10, 9);
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK(chamfer_distance(a, unit) == chamfer_distance(unit, a));
  CHECK_THROWS_AS(chamfer_distance(a, Matrix<double>::Zero(2, 1)), ShapeError);
  CHECK_THROWS_AS(chamfer_distance(a, Matrix<double>::Zero(3, 0)), ConfigError);
}

TEST_CASE("t-SNE keeps separated clusters apart") {
  const int per = 20;
  Matrix<double> x(10, 3 * per);
  for (int c = 0; c < 3; ++c) {
    Matrix<double> block = random_matrix(10, per, 40 + c, 0.3);
    block.row(c).array() += 10.0;
    x.middleCols(c * per, per) = block;
  }
  TsneConfig cfg;
  cfg.perplexity = 10;
  cfg.iterations = 1000;
  cfg.seed = 5;
  const TsneResult r = tsne_3d(x, cfg);
  REQUIRE(r.points.rows() == 3);
  REQUIRE(r.points.cols() == 3 * per);
  CHECK_FALSE(r.diverged);
  CHECK(r.points.allFinite());
  // Nearest neighbours in the embedding come from the same cluster. t-SNE does
  // not promise this for every point, so allow a few strays.
  int correct = 0;
  for (int i = 0; i < 3 * per; ++i) {
    int best = -1;
    double dist = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 3 * per; ++j) {
      if (j == i) continue;
      const double d = (r.points.col(i) - r.points.col(j)).squaredNorm();
      if (d < dist) dist = d, best = j;
    }
    correct += best / per == i / per;
  }
  CHECK(correct >= 57);

  SUBCASE("deterministic under a fixed seed") {
    CHECK((tsne_3d(x, cfg).points - r.points).norm() == 0.0);
  }
}

TEST_CASE("t-SNE Chamfer is small for matching sets and large for disjoint ones") {
  TsneConfig cfg;
  cfg.perplexity = 8;
  cfg.iterations = 300;
  const Matrix<double> a = random_matrix(6, 30, 50), same = random_matrix(6, 30, 51);
  Matrix<double> far = random_matrix(6, 30, 52);
  far.row(0).array() += 25.0;
  const double near_d = chamfer_embedding_distance(a, same, cfg).distance;
  const double far_d = chamfer_embedding_distance(a, far, cfg).distance;
  CHECK(near_d < far_d);
  CHECK_THROWS_AS(chamfer_embedding_distance(random_matrix(6, 3, 1), random_matrix(6, 3, 2), cfg), ConfigError);
}

TEST_CASE("uniform noise images") {
  const ImageBatch<float> a = uniform_noise_images(4, 3, 8, 1);
  CHECK(a.batch == 4);
  CHECK(a.pixels.minCoeff() >= -1.0f);
  CHECK(a.pixels.maxCoeff() <= 1.0f);
  CHECK((uniform_noise_images(4, 3, 8, 1).pixels - a.pixels).norm() == 0.0f);
  CHECK((uniform_noise_images(4, 3, 8, 2).pixels - a.pixels).norm() > 0.0f);
}

TEST_CASE("metric report JSON round trip and table") {
  MetricReport r;
  r.fid = 11.59;
  r.is_mean = 11.06;
  r.is_std = 0.5;
  r.chamfer = 3645;
  r.attr_acc = 99.5;
  r.per_attribute = {{"cat", 99.0}, {"dog", 100.0}};
  r.real_samples = r.fake_samples = 1000;
  r.config["seed"] = 3;
  CHECK(r.valid());
  const MetricReport back = MetricReport::from_json(r.to_json());
  CHECK(back.fid == r.fid);
  CHECK(back.chamfer == r.chamfer);
  CHECK(back.per_attribute == r.per_attribute);
  CHECK(back.config == r.config);
  const std::string table = render_table({{"model", r}});
  CHECK(table.find("FID") != std::string::npos);
  CHECK(table.find("Chamfer") != std::string::npos);
  CHECK(table.find("dog") != std::string::npos);
  CHECK(table.find("11.59") != std::string::npos);

  MetricReport bad = r;
  bad.attr_acc = 101;
  CHECK_FALSE(bad.valid());
  bad = r;
  bad.fid = std::nan("");
  CHECK_FALSE(bad.valid());
}
