#pragma once

#include "infoscc/image.hpp"
#include "infoscc/random.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace infoscc {

struct DatasetSpec {
  std::filesystem::path root;
  int image_size = 32;
  int channels = 3;
  LabelKind label_kind = LabelKind::categorical;
  /// Attribute columns to keep (multilabel only); empty keeps every column.
  std::vector<std::string> attributes;
  /// Split ratios: {train, val} or {train, val, test}; must sum to 1.
  std::vector<double> split = {0.9, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Split { train = 0, val = 1, test = 2 };

/// In-memory dataset of normalized images with labels and a fixed split.
class Dataset {
 public:
  Dataset() = default;
  /// `pixels` holds one NCHW image per column, values in [-1, 1].
  Dataset(Matrix<float> pixels, LabelBatch labels, int channels, int image_size,
          std::vector<std::string> filenames, std::vector<std::string> attribute_names,
          std::vector<double> split, std::uint64_t seed);

  int size() const { return int(pixels_.cols()); }
  int channels() const { return channels_; }
  int image_size() const { return image_size_; }
  LabelKind label_kind() const { return labels_.kind; }
  int num_classes() const { return labels_.num_classes(); }
  const std::vector<std::string>& attribute_names() const { return attribute_names_; }
  const std::vector<std::string>& filenames() const { return filenames_; }

  /// Items per class (categorical) or positives per attribute (multilabel).
  std::vector<int> class_counts() const;

  const std::vector<int>& indices(Split split) const { return splits_[int(split)]; }

  ImageBatch<float> images(std::span<const int> idx) const;
  ImageBatch<float> image(int i) const;
  LabelBatch labels(std::span<const int> idx) const;
  const LabelBatch& all_labels() const { return labels_; }

  /// Deterministic mini-batches of a split for one epoch. Incomplete final
  /// batches are dropped when `drop_last` is set.
  std::vector<std::vector<int>> epoch_batches(Split split, int batch_size, std::uint64_t epoch,
                                              bool shuffle, bool drop_last) const;

  /// Files that could not be decoded while loading.
  int skipped() const { return skipped_; }
  void set_skipped(int n) { skipped_ = n; }

  /// Replace labels (e.g. with clustering pseudo-labels); split is kept.
  void relabel(LabelBatch labels, std::vector<std::string> attribute_names);

 private:
  Matrix<float> pixels_;
  LabelBatch labels_;
  int channels_ = 3;
  int image_size_ = 32;
  std::vector<std::string> filenames_;
  std::vector<std::string> attribute_names_;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<int>> splits_;
  int skipped_ = 0;
};

/// Loads `root/images/*` and `root/labels.csv`.
Dataset load_dataset(const DatasetSpec& spec);

/// Writes `root/images/NNNNN.png` and `root/labels.csv`.
void write_dataset(const Dataset& data, const std::filesystem::path& root);

/// Number of distinct shape classes the synthetic renderer can draw.
constexpr int kSyntheticShapes = 8;

/// Procedural shapes: class = shape identity; position, scale and colors are
/// nuisance factors. Classes are balanced to within one item.
Dataset make_synthetic_dataset(int n, int k, int size, std::uint64_t seed, int channels = 3,
                               std::vector<double> split = {0.9, 0.1});

struct AugmentationConfig {
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  double jitter_probability = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_probability = 0.2;
  double blur_probability = 0.5;

  void validate() const;
};

/// One random augmentation of a single image.
ImageBatch<float> augment(const ImageBatch<float>& image, const AugmentationConfig& cfg, Rng& rng);

/// Two independently sampled augmentations of the same image.
std::pair<ImageBatch<float>, ImageBatch<float>> augment_pair(const ImageBatch<float>& image,
                                                             const AugmentationConfig& cfg,
                                                             Rng& rng);

struct ClusterResult {
  std::vector<int> labels;
  Matrix<double> centroids;  // d x k
  double inertia = 0.0;
  /// All points coincide; everything is in cluster 0.
  bool degenerate = false;
};

/// k-means with k-means++ seeding and `restarts` restarts, best inertia kept.
/// `embeddings` is (d x N), one point per column.
ClusterResult cluster_pseudo_labels(const Matrix<double>& embeddings, int k, std::uint64_t seed,
                                    int restarts = 10, int max_iterations = 300);

}  // namespace infoscc
