#include "infoscc/data.hpp"
#include "infoscc/image_io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

using namespace infoscc;
using testing::random_matrix;
using testing::TempDir;

namespace {

AugmentationConfig identity_augmentation() {
  AugmentationConfig c;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.crop_ratio_min = c.crop_ratio_max = 1.0;
  c.flip_probability = 0;
  c.jitter_probability = 0;
  c.grayscale_probability = 0;
  c.blur_probability = 0;
  return c;
}

// Best label agreement over all permutations of k cluster ids.
double matched_fraction(const std::vector<int>& got, const std::vector<int>& truth, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[std::size_t(i)] = i;
  int best = 0;
  do {
    int hits = 0;
    for (std::size_t i = 0; i < got.size(); ++i) hits += perm[std::size_t(got[i])] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return double(best) / double(got.size());
}

}  // namespace

TEST_CASE("synthetic dataset is balanced and well-formed") {
  const Dataset d = make_synthetic_dataset(3000, 3, 32, 0);
  CHECK(d.size() == 3000);
  CHECK(d.num_classes() == 3);
  CHECK(d.class_counts() == std::vector<int>{1000, 1000, 1000});
  const ImageBatch<float> all = d.images(d.indices(Split::train));
  CHECK(all.height == 32);
  CHECK(all.channels == 3);
  CHECK(all.pixels.minCoeff() >= -1.0f);
  CHECK(all.pixels.maxCoeff() <= 1.0f);

  std::vector<int> small = make_synthetic_dataset(10, 3, 32, 4).class_counts();
  std::sort(small.begin(), small.end());
  CHECK(small == std::vector<int>{3, 3, 4});
}

TEST_CASE("synthetic dataset is a pure function of the seed") {
  const Dataset a = make_synthetic_dataset(60, 4, 16, 9), b = make_synthetic_dataset(60, 4, 16, 9);
  std::vector<int> all(60);
  for (int i = 0; i < 60; ++i) all[std::size_t(i)] = i;
  CHECK((a.images(all).pixels - b.images(all).pixels).norm() == 0.0f);
  CHECK(a.indices(Split::val) == b.indices(Split::val));
  const Dataset c = make_synthetic_dataset(60, 4, 16, 10);
  CHECK((a.images(all).pixels - c.images(all).pixels).norm() > 0.0f);
  CHECK_THROWS_AS(make_synthetic_dataset(2, 3, 16, 0), ConfigError);
  CHECK_THROWS_AS(make_synthetic_dataset(10, 1, 16, 0), ConfigError);
}

TEST_CASE("splits are disjoint and cover the dataset") {
  const Dataset d = make_synthetic_dataset(101, 3, 16, 2, 3, {0.7, 0.2, 0.1});
  std::set<int> seen;
  std::size_t total = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    total += d.indices(s).size();
    seen.insert(d.indices(s).begin(), d.indices(s).end());
  }
  CHECK(total == 101);
  CHECK(seen.size() == 101);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 100);
}

TEST_CASE("epoch batches are deterministic and respect drop_last") {
  const Dataset d = make_synthetic_dataset(50, 2, 16, 3);
  const auto a = d.epoch_batches(Split::train, 8, 4, true, true);
  CHECK(a == d.epoch_batches(Split::train, 8, 4, true, true));
  CHECK(a != d.epoch_batches(Split::train, 8, 5, true, true));
  for (const auto& batch : a) CHECK(batch.size() == 8);
  const auto keep = d.epoch_batches(Split::train, 8, 4, false, false);
  std::size_t n = 0;
  for (const auto& batch : keep) n += batch.size();
  CHECK(n == d.indices(Split::train).size());
}

TEST_CASE("dataset round-trips through the on-disk layout") {
  TempDir dir;
  const Dataset d = make_synthetic_dataset(30, 3, 16, 1);
  write_dataset(d, dir.path());
  CHECK(std::filesystem::exists(dir / "labels.csv"));
  DatasetSpec spec;
  spec.root = dir.path();
  spec.image_size = 16;
  spec.seed = 1;
  const Dataset back = load_dataset(spec);
  CHECK(back.size() == 30);
  CHECK(back.num_classes() == 3);
  CHECK(back.class_counts() == d.class_counts());
  std::vector<int> all(30);
  for (int i = 0; i < 30; ++i) all[std::size_t(i)] = i;
  // 8-bit PNG quantization: half a grey level in [-1, 1] units.
  CHECK((back.images(all).pixels - d.images(all).pixels).cwiseAbs().maxCoeff() <= 1.0f / 255.0f + 1e-6f);
  CHECK(back.indices(Split::train) == load_dataset(spec).indices(Split::train));
}

TEST_CASE("loading reports bad inputs") {
  TempDir dir;
  DatasetSpec spec;
  spec.root = dir / "missing";
  spec.image_size = 16;
  CHECK_THROWS_AS(load_dataset(spec), ConfigError);

  std::filesystem::create_directories(dir / "ml" / "images");
  const Dataset d = make_synthetic_dataset(6, 2, 16, 1);
  for (int i = 0; i < 4; ++i) write_png(dir / "ml" / "images" / (std::to_string(i) + ".png"), d.image(i));
  std::ofstream(dir / "ml" / "images" / "broken.png") << "not a png";
  {
    std::ofstream csv(dir / "ml" / "labels.csv");
    csv << "filename,smiling,glasses,hat\n";
    csv << "0.png,1,0,1\n1.png,0,1,1\n2.png,1,1,0\n3.png,0,0,0\nbroken.png,1,1,1\n";
  }
  spec.root = dir / "ml";
  spec.label_kind = LabelKind::multilabel;
  spec.attributes = {"hat", "smiling"};
  const Dataset ml = load_dataset(spec);
  CHECK(ml.size() == 4);
  CHECK(ml.skipped() == 1);
  CHECK(ml.num_classes() == 2);
  CHECK(ml.attribute_names() == std::vector<std::string>{"hat", "smiling"});
  CHECK(ml.all_labels().targets(0, 0) == 1.0f);
  CHECK(ml.all_labels().targets(1, 1) == 0.0f);

  spec.attributes = {"beard"};
  CHECK_THROWS_AS(load_dataset(spec), ConfigError);
  spec.attributes = {};
  spec.label_kind = LabelKind::categorical;
  CHECK_THROWS_AS(load_dataset(spec), ConfigError);
  spec.split = {0.5, 0.4};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("identity augmentation returns the source image") {
  const Dataset d = make_synthetic_dataset(6, 2, 16, 1);
  Rng rng(1);
  const auto [a, b] = augment_pair(d.image(2), identity_augmentation(), rng);
  CHECK((a.pixels - d.image(2).pixels).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((b.pixels - d.image(2).pixels).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("default augmentation gives distinct, reproducible, in-range views") {
  const Dataset d = make_synthetic_dataset(20, 2, 16, 1);
  const AugmentationConfig cfg;
  Rng rng(5), again(5);
  int differ = 0;
  for (int i = 0; i < 100; ++i) {
    const ImageBatch<float> src = d.image(i % 20);
    const auto [a, b] = augment_pair(src, cfg, rng);
    const auto [a2, b2] = augment_pair(src, cfg, again);
    CHECK(a.height == 16);
    CHECK(b.width == 16);
    CHECK(a.channels == 3);
    CHECK(a.pixels.minCoeff() >= -1.0f);
    CHECK(b.pixels.maxCoeff() <= 1.0f);
    CHECK((a.pixels - a2.pixels).norm() == 0.0f);
    CHECK((b.pixels - b2.pixels).norm() == 0.0f);
    differ += (a.pixels - b.pixels).cwiseAbs().mean() > 0.0f;
  }
  CHECK(differ == 100);
  AugmentationConfig bad;
  bad.flip_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AugmentationConfig{};
  bad.crop_scale_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("k-means pseudo-labels") {
  SUBCASE("one cluster") {
    const ClusterResult r = cluster_pseudo_labels(random_matrix(3, 20, 1), 1, 0);
    CHECK(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; }));
  }
  SUBCASE("separated blobs are recovered up to permutation") {
    const int per = 25, k = 3;
    Matrix<double> x(4, k * per);
    std::vector<int> truth;
    for (int c = 0; c < k; ++c) {
      Matrix<double> block = random_matrix(4, per, 10 + c, 0.5);
      block.row(c).array() += 20.0;
      x.middleCols(c * per, per) = block;
      truth.insert(truth.end(), per, c);
    }
    const ClusterResult r = cluster_pseudo_labels(x, k, 7);
    CHECK(matched_fraction(r.labels, truth, k) == 1.0);
    CHECK(r.labels == cluster_pseudo_labels(x, k, 7).labels);
    CHECK(r.inertia > 0.0);
    CHECK(r.centroids.cols() == k);
  }
  SUBCASE("as many clusters as distinct points") {
    const ClusterResult r = cluster_pseudo_labels(random_matrix(2, 6, 3, 10.0), 6, 1);
    CHECK(std::set<int>(r.labels.begin(), r.labels.end()).size() == 6);
    CHECK(r.inertia == doctest::Approx(0.0));
  }
  SUBCASE("identical points collapse into one cluster") {
    const ClusterResult r = cluster_pseudo_labels(Matrix<double>::Ones(3, 10), 3, 1);
    CHECK(r.degenerate);
    CHECK(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; }));
  }
  SUBCASE("more clusters than points") {
    CHECK_THROWS_AS(cluster_pseudo_labels(random_matrix(2, 3, 1), 4, 0), ConfigError);
  }
}
