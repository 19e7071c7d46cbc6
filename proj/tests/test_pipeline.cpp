#include "infoscc/pipeline.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace infoscc;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
output_dir: run
seed: 4
dataset:
  root: run/data
  image_size: 16
synthetic:
  count: 60
  classes: 3
encoder:
  widths: [4, 8]
  embedding_dim: 8
  projection_hidden: 8
  projection_dim: 4
  batch_size: 32
  epochs: 1
classifier:
  hidden: [6]
  epochs: 2
  batch_size: 16
generator:
  label_dim: 4
  noise_dim: 6
  cond_dim: 8
  subspace_dims: [2, 2]
  base_width: 8
  min_width: 4
train:
  d_base_width: 4
  iterations: 10
  batch_size: 4
  eval_every: 5
  checkpoint_every: 5
  eval_samples: 8
metrics:
  samples: 16
  attribute_samples: 9
  chamfer_samples: 10
  is_splits: 2
  tsne_perplexity: 3
  tsne_iterations: 60
ablation:
  iterations: 3
)";

PipelineConfig tiny_config(const TempDir& dir, const std::string& extra = "") {
  return parse_config(std::string(kTiny) + extra, dir.path(), {});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("stages refuse to run before their prerequisites") {
  TempDir dir;
  const PipelineConfig cfg = tiny_config(dir);
  CHECK_THROWS_AS(prepare_dataset(cfg), MissingPrerequisite);
  run_synth_data(cfg);
  CHECK_THROWS_AS(run_train_classifier(cfg), MissingPrerequisite);
  CHECK_THROWS_AS(run_train_gan(cfg), MissingPrerequisite);
  CHECK_THROWS_AS(run_evaluate(cfg), MissingPrerequisite);
  run_train_encoder(cfg);
  CHECK_THROWS_AS(run_train_gan(cfg), MissingPrerequisite);
  try {
    run_train_gan(cfg);
  } catch (const MissingPrerequisite& e) {
    CHECK(std::string(e.what()).find("train-classifier") != std::string::npos);
  }
}

TEST_CASE("pipeline stages are idempotent and resumable") {
  TempDir dir;
  const PipelineConfig cfg = tiny_config(dir);
  run_synth_data(cfg);
  const std::string labels = slurp(cfg.dataset.root / "labels.csv");
  run_synth_data(cfg);
  CHECK(slurp(cfg.dataset.root / "labels.csv") == labels);

  const EncoderCheckpoint enc = run_train_encoder(cfg);
  const auto stamp = fs::last_write_time(cfg.encoder_path());
  CHECK(run_train_encoder(cfg).hash() == enc.hash());
  CHECK(fs::last_write_time(cfg.encoder_path()) == stamp);
  const ClassifierCheckpoint cls = run_train_classifier(cfg);
  CHECK(cls.encoder_hash == enc.hash());

  const GanState gan = run_train_gan(cfg);
  CHECK(gan.iteration == 10);
  CHECK(gan.regularization_steps == 2);
  const std::string final_bytes = slurp(cfg.gan_dir() / "gan_final.ckpt");
  CHECK(run_train_gan(cfg).generator_hash() == gan.generator_hash());
  CHECK(slurp(cfg.gan_dir() / "gan_final.ckpt") == final_bytes);

  SUBCASE("more iterations resume from the final checkpoint") {
    PipelineConfig longer = cfg;
    longer.train.iterations = 15;
    const GanState more = run_train_gan(longer);
    CHECK(more.iteration == 15);
    CHECK(more.regularization_steps == 3);
  }
  SUBCASE("a changed recipe needs --force") {
    PipelineConfig other = cfg;
    other.train.loss = LossKind::hinge;
    CHECK_THROWS_AS(run_train_gan(other), ConfigError);
    RunOptions force;
    force.force = true;
    CHECK(run_train_gan(other, force).config.loss == LossKind::hinge);
  }
  SUBCASE("evaluation, sampling and pseudo-labels") {
    const MetricReport r = run_evaluate(cfg);
    CHECK(r.valid());
    CHECK(fs::exists(cfg.gan_dir() / "gan_final.report.json"));
    const MetricReport back = MetricReport::from_json(Json::parse(slurp(cfg.gan_dir() / "gan_final.report.json")));
    CHECK(back.fid == r.fid);
    CHECK(back.config.at("checkpoint_hash") == gan.generator_hash());

    const auto files = run_generate(cfg, dir / "samples", 2);
    CHECK(files.size() == 7);  // 2 per class plus the grid
    for (const auto& f : files) CHECK(fs::exists(f));
    CHECK(run_generate(cfg, dir / "one", 3, 1).size() == 4);
    CHECK_THROWS_AS(run_generate(cfg, dir / "bad", 1, 7), ConfigError);

    const ClusterResult c = run_pseudo_label(cfg, 2, dir / "pseudo");
    CHECK(c.labels.size() == 60);
    DatasetSpec spec = cfg.dataset;
    spec.root = dir / "pseudo";
    const Dataset relabelled = load_dataset(spec);
    CHECK(relabelled.num_classes() == 2);
  }
}

TEST_CASE("ablation covers every discriminator and loss") {
  TempDir dir;
  const PipelineConfig cfg = tiny_config(dir);
  run_synth_data(cfg);
  run_train_encoder(cfg);
  run_train_classifier(cfg);
  const std::vector<AblationRow> rows = run_ablation(cfg);
  REQUIRE(rows.size() == 6);
  for (const auto& row : rows) CHECK(row.report.valid());
  CHECK(fs::exists(cfg.output_dir / "ablation" / "ablation.json"));
  const std::string table = slurp(cfg.output_dir / "ablation" / "ablation.txt");
  CHECK(table.find("Global D, hinge") != std::string::npos);
  CHECK(table.find("Patch D, lsgan") != std::string::npos);
  CHECK(table == ablation_table(rows));
}
