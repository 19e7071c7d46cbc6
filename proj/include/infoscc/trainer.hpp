#pragma once

// Stage 3: adversarial training of the conditional generator, with a separate
// classification-regularization update through the frozen encoder and
// classifier every n-th iteration.

#include "infoscc/adversary.hpp"
#include "infoscc/archive.hpp"
#include "infoscc/classifier.hpp"
#include "infoscc/data.hpp"
#include "infoscc/encoder.hpp"
#include "infoscc/generator.hpp"
#include "infoscc/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace infoscc {

struct TrainConfig {
  // Generator shape; K, label kind, image size and channels come from the data.
  int label_dim = 128;
  int noise_dim = 512;
  int cond_dim = 512;
  int base_size = 4;
  std::vector<int> subspace_dims;
  int g_base_width = 256;
  int g_min_width = 16;

  DiscriminatorKind discriminator = DiscriminatorKind::patch;
  int d_base_width = 64;
  /// One discriminator head per class (categorical labels only).
  bool conditional_discriminator = false;
  /// false replaces every label by a constant (all-zero) label vector.
  bool conditional = true;
  LossKind loss = LossKind::lsgan;

  std::int64_t iterations = 200000;
  int batch_size = 32;
  int regularization_period = 5;
  double lambda_cls = 1.0;
  double lambda_orth = 1.0;
  AdamConfig g_optimizer;
  AdamConfig d_optimizer;

  /// Iterations between metric evaluations / checkpoint writes; 0 disables.
  std::int64_t eval_every = 0;
  std::int64_t checkpoint_every = 0;
  int eval_samples = 500;
  std::uint64_t seed = 0;

  void validate() const;
  GeneratorArch generator_arch(int image_size, int channels, int num_classes, LabelKind kind) const;
  DiscriminatorArch discriminator_arch(int image_size, int channels, int num_classes) const;
};

Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

struct LossRecord {
  double d_loss = 0.0;
  double g_loss = 0.0;
  /// NaN on iterations without a regularization step.
  double cls_loss = std::numeric_limits<double>::quiet_NaN();
  double orth_penalty = 0.0;
};

/// Everything needed to resume training bit-exactly.
struct GanState {
  TrainConfig config;
  Generator<float> generator;
  Discriminator<float> discriminator;
  /// Shared by the adversarial and regularization updates, so lambda_cls
  /// sets the relative weight of the two (separate Adam state would cancel it).
  Adam<float> g_opt;
  Adam<float> d_opt;
  std::int64_t iteration = 0;
  std::int64_t regularization_steps = 0;
  Rng rng;
  std::string encoder_hash;
  std::string classifier_hash;
  std::vector<std::string> attribute_names;
  double best_fid = std::numeric_limits<double>::infinity();
  std::int64_t best_iteration = -1;
  /// Exponential moving averages of the loss terms.
  LossRecord rolling;

  std::string generator_hash() const;
};

GanState init_gan_state(const TrainConfig& cfg, int image_size, int channels, int num_classes, LabelKind kind,
                        std::string encoder_hash, std::string classifier_hash,
                        std::vector<std::string> attribute_names = {});

/// Frozen copies of the stage-1/2 models used on the regularization path.
/// Their parameters are marked frozen, so backward passes only propagate
/// input gradients.
struct FrozenJudge {
  Encoder<float> encoder;
  Classifier<float> classifier;
  std::string encoder_hash;
  std::string classifier_hash;

  FrozenJudge(const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls);
  /// Throws TrainingError if either parameter hash changed.
  void verify() const;
};

/// Label matrix fed to the generator (all zeros for unconditional runs).
Matrix<float> generator_labels(const TrainConfig& cfg, const LabelBatch& labels);

/// One discriminator update on (real, generated) followed by one generator
/// update on g_loss + lambda_orth * sum of orthogonality penalties.
LossRecord adversarial_step(GanState& s, const ImageBatch<float>& real, const LabelBatch& real_labels,
                            const LabelBatch& gen_labels, const LatentCode<float>& z);

/// lambda * cross-entropy between `labels` and the classifier prediction on
/// the generated images; accumulates generator gradients and returns the
/// unweighted loss. Encoder and classifier parameters must be frozen.
template <typename Scalar>
Scalar regularization_backward(Generator<Scalar>& generator, Encoder<Scalar>& encoder,
                               Classifier<Scalar>& classifier, const Matrix<Scalar>& labels,
                               const LatentCode<Scalar>& z, LabelKind kind, Scalar weight) {
  const FeatureMap<Scalar> fake = generator.forward(labels, z);
  const Matrix<Scalar> logits = classifier.forward_logits(encoder.forward_embed(fake));
  auto [loss, grad] = logits_loss_with_grad<Scalar>(logits, labels, kind);
  const Matrix<Scalar> ge = classifier.backward_logits(grad * weight);
  generator.backward(encoder.backward_embed(ge));
  return loss;
}

/// Separate generator update on lambda_cls * L_y(y, classify(encode(G(y, z)))).
/// With lambda_cls = 0 the loss is evaluated but no parameter changes.
double classification_regularization_step(GanState& s, FrozenJudge& judge, const LabelBatch& labels,
                                          const LatentCode<float>& z);

struct TrainOptions {
  /// Checkpoints and the JSON-lines log go here when set.
  std::optional<std::filesystem::path> output_dir;
  /// Additional log sink for JSON lines.
  std::ostream* log = nullptr;
  std::function<void(const GanState&, const LossRecord&)> on_iteration;
  bool allow_hash_mismatch = false;
};

class GanTrainer {
 public:
  GanTrainer(const Dataset& data, const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls, GanState state,
             TrainOptions options = {});

  /// One iteration: adversarial step, plus a regularization step when
  /// (iteration + 1) is a multiple of n.
  LossRecord step();
  /// Steps until `iteration` reaches the configured total.
  void run();

  /// FID (classifier feature space) and attribute accuracy on the fixed
  /// evaluation latents.
  std::pair<double, double> quick_eval() const;

  GanState& state() { return state_; }
  const GanState& state() const { return state_; }
  const FrozenJudge& judge() const { return judge_; }

 private:
  void write_log(const LossRecord& r, std::optional<std::pair<double, double>> eval);
  void checkpoint(const std::string& name) const;

  const Dataset& data_;
  GanState state_;
  FrozenJudge judge_;
  TrainOptions options_;
  std::vector<int> train_idx_;
  Matrix<double> eval_real_features_;
  LabelBatch eval_labels_;
};

/// Runs stage 3 end-to-end; writes gan_final.ckpt and gan_best.ckpt when an
/// output directory is given.
GanState train_generator(const Dataset& data, const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls,
                         const TrainConfig& cfg, const TrainOptions& options = {});

void save_gan_state(const GanState& s, const std::filesystem::path& path);
GanState load_gan_state(const std::filesystem::path& path);

struct EvalConfig {
  int samples = 1000;
  int attribute_samples = 3000;
  int chamfer_samples = 300;
  int is_splits = 10;
  TsneConfig tsne;
  std::uint64_t seed = 0;
};

/// Full report: FID, IS, Chamfer and attribute accuracy against the
/// training split. The uniform-noise FID baseline is recorded in the config
/// echo as "fid_uniform_noise".
MetricReport evaluate_generator(const Generator<float>& generator, const Encoder<float>& encoder,
                                const Classifier<float>& classifier, const Dataset& data, const EvalConfig& cfg,
                                const std::vector<std::string>& attribute_names = {}, bool conditional = true);

}  // namespace infoscc
