#pragma once

// Evaluation metrics: FID, inception score, Chamfer distance over a joint 3-D
// t-SNE of encoder embeddings, and attribute control accuracy. Feature sets
// are (d x N), one sample per column.

#include "infoscc/archive.hpp"
#include "infoscc/classifier.hpp"
#include "infoscc/encoder.hpp"
#include "infoscc/image.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace infoscc {

/// Frechet distance between Gaussians (mu1, s1) and (mu2, s2).
double frechet_distance(const Vector<double>& mu1, const Matrix<double>& s1, const Vector<double>& mu2,
                        const Matrix<double>& s2);

/// FID between two feature sets with covariances regularized by 1e-6 I.
double fid(const Matrix<double>& real, const Matrix<double>& fake);

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
};

/// exp(mean KL(p(y|x) || p(y))) over `splits` contiguous chunks of the
/// columns of `probs` (K x N).
InceptionScore inception_score(const Matrix<double>& probs, int splits = 10);

/// Symmetric Chamfer distance: mean over a of min squared distance to b plus
/// mean over b of min squared distance to a. Points are columns.
double chamfer_distance(const Matrix<double>& a, const Matrix<double>& b);

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Matrix<double> points;  // (3 x N)
  double kl = 0.0;
  bool diverged = false;
};

/// Exact t-SNE into three dimensions.
TsneResult tsne_3d(const Matrix<double>& x, const TsneConfig& cfg);

struct ChamferResult {
  double distance = 0.0;
  bool diverged = false;
};

/// Joint 3-D t-SNE of the concatenated embeddings, then symmetric Chamfer
/// between the two halves.
ChamferResult chamfer_embedding_distance(const Matrix<double>& real_embeddings,
                                         const Matrix<double>& fake_embeddings, const TsneConfig& cfg);

ChamferResult chamfer_embedding_distance(const ImageBatch<float>& real, const ImageBatch<float>& fake,
                                         const Encoder<float>& encoder, const TsneConfig& cfg);

/// Generated images for a batch of requested labels.
using LabelledGenerator = std::function<ImageBatch<float>(const LabelBatch&)>;

struct AttributeAccuracy {
  double overall = 0.0;                 // percent
  std::vector<double> per_attribute;    // percent, one per class / attribute
  std::vector<std::int64_t> counts;     // evaluated samples per attribute
};

/// Percentage of generated images whose classifier prediction matches the
/// requested label (argmax for categorical; per attribute at 0.5 for
/// multilabel). Categorical per-attribute entries are per requested class.
AttributeAccuracy attribute_control_accuracy(const LabelledGenerator& generate, const Encoder<float>& encoder,
                                             const Classifier<float>& classifier, const LabelBatch& labels,
                                             int batch_size = 100);

/// Classifier hidden activations of encoder embeddings; the FID feature space.
Matrix<double> fid_features(const Encoder<float>& encoder, const Classifier<float>& classifier,
                            const ImageBatch<float>& images, int batch_size = 256);

/// Uniform noise images in [-1, 1], the FID reference baseline.
ImageBatch<float> uniform_noise_images(int count, int channels, int size, std::uint64_t seed);

struct MetricReport {
  double fid = 0.0;
  double is_mean = 0.0;
  double is_std = 0.0;
  double chamfer = 0.0;
  bool chamfer_diverged = false;
  double attr_acc = 0.0;
  std::vector<std::pair<std::string, double>> per_attribute;
  std::int64_t real_samples = 0;
  std::int64_t fake_samples = 0;
  Json config = Json::object();

  Json to_json() const;
  static MetricReport from_json(const Json& j);
  /// All fields finite and within their ranges.
  bool valid() const;
};

/// Rows of (name, report) rendered as a fixed-width table with FID, IS,
/// Chamfer and per-attribute accuracy columns.
std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace infoscc
