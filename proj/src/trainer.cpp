#include "infoscc/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <random>

namespace infoscc {

void TrainConfig::validate() const {
  if (label_dim < 1 || noise_dim < 1 || cond_dim < 1) throw ConfigError("generator dimensions must be positive");
  if (base_size < 1) throw ConfigError("base_size must be >= 1");
  if (g_base_width < 1 || g_min_width < 1 || d_base_width < 1) throw ConfigError("network widths must be positive");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (regularization_period < 1) throw ConfigError("regularization period n must be >= 1");
  if (!(lambda_cls >= 0.0) || !(lambda_orth >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("cadences must be >= 0");
  if (eval_samples < 2) throw ConfigError("eval_samples must be >= 2");
  if (!conditional && lambda_cls > 0.0) {
    throw ConfigError("unconditional training needs lambda_cls = 0 (there is no label to regularize toward)");
  }
}

GeneratorArch TrainConfig::generator_arch(int image_size, int channels, int num_classes, LabelKind kind) const {
  GeneratorArch a;
  a.image_size = image_size;
  a.channels = channels;
  a.num_classes = num_classes;
  a.kind = kind;
  a.label_dim = label_dim;
  a.noise_dim = noise_dim;
  a.cond_dim = cond_dim;
  a.base_size = base_size;
  a.subspace_dims = subspace_dims;
  a.base_width = g_base_width;
  a.min_width = g_min_width;
  return a;
}

DiscriminatorArch TrainConfig::discriminator_arch(int image_size, int channels, int num_classes) const {
  DiscriminatorArch a;
  a.kind = discriminator;
  a.image_size = image_size;
  a.channels = channels;
  a.base_width = d_base_width;
  a.max_width = std::max(512, d_base_width);
  a.heads = conditional_discriminator ? num_classes : 1;
  return a;
}

namespace {

Json adam_to_json(const AdamConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

AdamConfig adam_from_json(const Json& j) {
  return {j.at("learning_rate").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
          j.at("epsilon").get<double>()};
}

Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double from_nullable(const Json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

}  // namespace

Json to_json(const TrainConfig& c) {
  return {{"label_dim", c.label_dim},
          {"noise_dim", c.noise_dim},
          {"cond_dim", c.cond_dim},
          {"base_size", c.base_size},
          {"subspace_dims", c.subspace_dims},
          {"g_base_width", c.g_base_width},
          {"g_min_width", c.g_min_width},
          {"discriminator", to_string(c.discriminator)},
          {"d_base_width", c.d_base_width},
          {"conditional_discriminator", c.conditional_discriminator},
          {"conditional", c.conditional},
          {"loss", to_string(c.loss)},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"regularization_period", c.regularization_period},
          {"lambda_cls", c.lambda_cls},
          {"lambda_orth", c.lambda_orth},
          {"g_optimizer", adam_to_json(c.g_optimizer)},
          {"d_optimizer", adam_to_json(c.d_optimizer)},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_samples", c.eval_samples},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.label_dim = j.at("label_dim").get<int>();
  c.noise_dim = j.at("noise_dim").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.base_size = j.at("base_size").get<int>();
  c.subspace_dims = j.at("subspace_dims").get<std::vector<int>>();
  c.g_base_width = j.at("g_base_width").get<int>();
  c.g_min_width = j.at("g_min_width").get<int>();
  c.discriminator = discriminator_kind_from_string(j.at("discriminator").get<std::string>());
  c.d_base_width = j.at("d_base_width").get<int>();
  c.conditional_discriminator = j.at("conditional_discriminator").get<bool>();
  c.conditional = j.at("conditional").get<bool>();
  c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  c.iterations = j.at("iterations").get<std::int64_t>();
  c.batch_size = j.at("batch_size").get<int>();
  c.regularization_period = j.at("regularization_period").get<int>();
  c.lambda_cls = j.at("lambda_cls").get<double>();
  c.lambda_orth = j.at("lambda_orth").get<double>();
  c.g_optimizer = adam_from_json(j.at("g_optimizer"));
  c.d_optimizer = adam_from_json(j.at("d_optimizer"));
  c.eval_every = j.at("eval_every").get<std::int64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
  c.eval_samples = j.at("eval_samples").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string GanState::generator_hash() const {
  return parameter_hash(const_cast<Generator<float>&>(generator).parameters());
}

GanState init_gan_state(const TrainConfig& cfg, int image_size, int channels, int num_classes, LabelKind kind,
                        std::string encoder_hash, std::string classifier_hash,
                        std::vector<std::string> attribute_names) {
  cfg.validate();
  if (cfg.conditional_discriminator && kind != LabelKind::categorical) {
    throw ConfigError("the per-class discriminator needs categorical labels");
  }
  GanState s;
  s.config = cfg;
  Rng init(derive_seed(cfg.seed, {0x9e4}));
  s.generator = Generator<float>(cfg.generator_arch(image_size, channels, num_classes, kind), init);
  s.discriminator = Discriminator<float>(cfg.discriminator_arch(image_size, channels, num_classes), init);
  s.g_opt = Adam<float>(cfg.g_optimizer);
  s.d_opt = Adam<float>(cfg.d_optimizer);
  s.rng = Rng(derive_seed(cfg.seed, {0x57a7e}));
  s.encoder_hash = std::move(encoder_hash);
  s.classifier_hash = std::move(classifier_hash);
  s.attribute_names = std::move(attribute_names);
  return s;
}

FrozenJudge::FrozenJudge(const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls)
    : encoder(enc.model), classifier(cls.model), encoder_hash(enc.hash()), classifier_hash(cls.hash()) {
  set_frozen(encoder.parameters(), true);
  set_frozen(classifier.parameters(), true);
  verify();
}

void FrozenJudge::verify() const {
  if (parameter_hash(const_cast<Encoder<float>&>(encoder).parameters()) != encoder_hash) {
    throw TrainingError("encoder parameters changed during generator training");
  }
  if (parameter_hash(const_cast<Classifier<float>&>(classifier).parameters()) != classifier_hash) {
    throw TrainingError("classifier parameters changed during generator training");
  }
}

Matrix<float> generator_labels(const TrainConfig& cfg, const LabelBatch& labels) {
  if (cfg.conditional) return labels.targets;
  return Matrix<float>::Zero(labels.num_classes(), labels.size());
}

namespace {

std::vector<int> class_list(const LabelBatch& labels) {
  std::vector<int> out(std::size_t(labels.size()));
  for (int b = 0; b < labels.size(); ++b) out[std::size_t(b)] = labels.class_index(b);
  return out;
}

}  // namespace

LossRecord adversarial_step(GanState& s, const ImageBatch<float>& real, const LabelBatch& real_labels,
                            const LabelBatch& gen_labels, const LatentCode<float>& z) {
  Generator<float>& g = s.generator;
  Discriminator<float>& d = s.discriminator;
  const bool per_class = d.arch().heads > 1;
  const int nr = real.batch, nf = z.batch();
  if (real_labels.size() != nr || gen_labels.size() != nf) throw ShapeError("adversarial_step: label batch mismatch");

  const FeatureMap<float> fake = g.forward(generator_labels(s.config, gen_labels), z);
  std::vector<int> fake_classes, joint_classes;
  if (per_class) {
    fake_classes = class_list(gen_labels);
    joint_classes = class_list(real_labels);
    joint_classes.insert(joint_classes.end(), fake_classes.begin(), fake_classes.end());
  }

  LossRecord out;
  // Discriminator update.
  const ParameterList<float> d_params = d.parameters();
  zero_grad(d_params);
  const FeatureMap<float> heads = d.forward(concat_batch(to_feature_map(real), fake));
  const FeatureMap<float> scores = select_heads(heads, joint_classes);
  const Index per = scores.pixels();
  const AdversarialLoss<float> dl =
      d_loss_with_grad<float>(scores.data.leftCols(nr * per), scores.data.rightCols(nf * per), s.config.loss);
  FeatureMap<float> dgrad(Matrix<float>(1, scores.data.cols()), scores.batch, scores.height, scores.width);
  dgrad.data << dl.grad_real, dl.grad_fake;
  d.backward(scatter_heads(dgrad, d.arch().heads, joint_classes));
  s.d_opt.step(d_params);
  out.d_loss = dl.loss;

  // Generator update against the refreshed discriminator.
  const ParameterList<float> g_params = g.parameters();
  zero_grad(g_params);
  set_frozen(d_params, true);
  const FeatureMap<float> fake_scores = select_heads(d.forward(fake), fake_classes);
  auto [gl, ggrad] = g_loss_with_grad<float>(fake_scores.data, s.config.loss);
  const FeatureMap<float> gmap(std::move(ggrad), fake_scores.batch, fake_scores.height, fake_scores.width);
  g.backward(d.backward(scatter_heads(gmap, d.arch().heads, fake_classes)));
  set_frozen(d_params, false);
  out.g_loss = gl;

  const float lambda = float(s.config.lambda_orth);
  for (Parameter<float>* u : g.subspace_bases()) {
    out.orth_penalty += orthogonality_penalty<float>(u->value);
    if (lambda > 0.0f) u->grad += lambda * orthogonality_penalty_grad<float>(u->value);
  }
  s.g_opt.step(g_params);
  return out;
}

double classification_regularization_step(GanState& s, FrozenJudge& judge, const LabelBatch& labels,
                                          const LatentCode<float>& z) {
  Generator<float>& g = s.generator;
  const Matrix<float> y = labels.targets;
  if (s.config.lambda_cls == 0.0) {
    const Matrix<float> logits = judge.classifier.logits(judge.encoder.encode(g.generate_maps(y, z)));
    return logits_loss_with_grad<float>(logits, y, labels.kind).first;
  }
  const ParameterList<float> params = g.parameters();
  zero_grad(params);
  const float loss = regularization_backward<float>(g, judge.encoder, judge.classifier, y, z, labels.kind,
                                                    float(s.config.lambda_cls));
  s.g_opt.step(params);
  return loss;
}

GanTrainer::GanTrainer(const Dataset& data, const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls,
                       GanState state, TrainOptions options)
    : data_(data), state_(std::move(state)), judge_(enc, cls), options_(std::move(options)) {
  const GeneratorArch& arch = state_.generator.arch();
  if (arch.image_size != data.image_size() || arch.channels != data.channels() ||
      arch.num_classes != data.num_classes() || arch.kind != data.label_kind()) {
    throw ConfigError("generator shape does not match the dataset");
  }
  if (cls.model.arch().num_classes != data.num_classes()) throw ConfigError("classifier K does not match the dataset");
  auto check = [&](const std::string& what, const std::string& want, const std::string& got) {
    if (want == got) return;
    if (!options_.allow_hash_mismatch) {
      throw CheckpointError(what + " hash " + got + " does not match the expected " + want);
    }
    spdlog::warn("{} hash mismatch overridden ({} vs {})", what, got, want);
  };
  check("classifier's encoder", cls.encoder_hash, judge_.encoder_hash);
  check("encoder", state_.encoder_hash, judge_.encoder_hash);
  check("classifier", state_.classifier_hash, judge_.classifier_hash);

  train_idx_ = data.indices(Split::train);
  if (train_idx_.empty()) throw ConfigError("generator training needs a non-empty training split");
  const TrainConfig& cfg = state_.config;
  if (cfg.eval_every > 0) {
    const int n = std::min<int>(cfg.eval_samples, int(train_idx_.size()));
    std::vector<int> idx(train_idx_.begin(), train_idx_.begin() + n);
    eval_real_features_ = fid_features(judge_.encoder, judge_.classifier, data.images(idx));
    eval_labels_ = data.labels(idx);
  }
  if (options_.output_dir) std::filesystem::create_directories(*options_.output_dir);
}

std::pair<double, double> GanTrainer::quick_eval() const {
  const int n = eval_labels_.size();
  if (n < 2) throw ConfigError("quick_eval needs evaluation data (eval_every > 0)");
  Rng rng(derive_seed(state_.config.seed, {0xe7a1}));
  Matrix<double> features(eval_real_features_.rows(), n);
  Matrix<float> probs(eval_labels_.num_classes(), n);
  std::vector<int> idx;
  for (int start = 0; start < n; start += 100) {
    const int count = std::min(100, n - start);
    idx.resize(std::size_t(count));
    for (int j = 0; j < count; ++j) idx[std::size_t(j)] = start + j;
    const LabelBatch y = eval_labels_.select(idx);
    const LatentCode<float> z = sample_latent<float>(state_.generator.arch(), count, rng);
    const ImageBatch<float> fake = state_.generator.generate(generator_labels(state_.config, y), z);
    const Matrix<float> e = judge_.encoder.encode(fake);
    features.middleCols(start, count) = judge_.classifier.features(e).cast<double>();
    probs.middleCols(start, count) = judge_.classifier.classify(e);
  }
  return {fid(eval_real_features_, features), 100.0 * label_accuracy(probs, eval_labels_)};
}

LossRecord GanTrainer::step() {
  GanState& s = state_;
  const TrainConfig& cfg = s.config;
  const int b = cfg.batch_size;
  std::uniform_int_distribution<std::size_t> pick(0, train_idx_.size() - 1);
  auto draw = [&] {
    std::vector<int> idx(std::size_t(b), 0);
    for (auto& i : idx) i = train_idx_[pick(s.rng)];
    return idx;
  };

  const std::vector<int> real_idx = draw();
  const std::vector<int> gen_idx = draw();
  const LatentCode<float> z = sample_latent<float>(s.generator.arch(), b, s.rng);
  LossRecord r = adversarial_step(s, data_.images(real_idx), data_.labels(real_idx), data_.labels(gen_idx), z);

  if ((s.iteration + 1) % cfg.regularization_period == 0) {
    const std::vector<int> reg_idx = draw();
    const LatentCode<float> zr = sample_latent<float>(s.generator.arch(), b, s.rng);
    r.cls_loss = classification_regularization_step(s, judge_, data_.labels(reg_idx), zr);
    ++s.regularization_steps;
  }
  ++s.iteration;

  if (!std::isfinite(r.d_loss) || !std::isfinite(r.g_loss) || !std::isfinite(r.orth_penalty) ||
      (s.iteration % cfg.regularization_period == 0 && !std::isfinite(r.cls_loss))) {
    throw TrainingError(fmt::format("non-finite loss at iteration {} (d {}, g {}, cls {}, orth {})", s.iteration,
                                    r.d_loss, r.g_loss, r.cls_loss, r.orth_penalty));
  }

  constexpr double decay = 0.98;
  auto ema = [&](double& acc, double v) { acc = s.iteration == 1 || !std::isfinite(acc) ? v : decay * acc + (1 - decay) * v; };
  ema(s.rolling.d_loss, r.d_loss);
  ema(s.rolling.g_loss, r.g_loss);
  ema(s.rolling.orth_penalty, r.orth_penalty);
  if (std::isfinite(r.cls_loss)) ema(s.rolling.cls_loss, r.cls_loss);

  std::optional<std::pair<double, double>> eval;
  if (cfg.eval_every > 0 && (s.iteration % cfg.eval_every == 0 || s.iteration == cfg.iterations)) {
    judge_.verify();
    eval = quick_eval();
    spdlog::info("iteration {}: fid {:.3f}, attribute accuracy {:.2f}%", s.iteration, eval->first, eval->second);
    if (eval->first < s.best_fid) {
      s.best_fid = eval->first;
      s.best_iteration = s.iteration;
      checkpoint("gan_best.ckpt");
    }
  }
  if (cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0) checkpoint("gan_last.ckpt");
  write_log(r, eval);
  if (options_.on_iteration) options_.on_iteration(s, r);
  return r;
}

void GanTrainer::run() {
  while (state_.iteration < state_.config.iterations) step();
  judge_.verify();
  checkpoint("gan_final.ckpt");
}

void GanTrainer::write_log(const LossRecord& r, std::optional<std::pair<double, double>> eval) {
  if (!options_.output_dir && !options_.log) return;
  Json line = {{"iter", state_.iteration},
               {"d_loss", r.d_loss},
               {"g_loss", r.g_loss},
               {"cls_loss", nullable(r.cls_loss)},
               {"orth_penalty", r.orth_penalty},
               {"reg_steps", state_.regularization_steps}};
  if (eval) {
    line["fid"] = eval->first;
    line["attr_acc"] = eval->second;
  }
  const std::string text = line.dump();
  if (options_.log) *options_.log << text << '\n';
  if (options_.output_dir) {
    std::ofstream out(*options_.output_dir / "train_log.jsonl", std::ios::app);
    out << text << '\n';
  }
}

void GanTrainer::checkpoint(const std::string& name) const {
  if (options_.output_dir) save_gan_state(state_, *options_.output_dir / name);
}

GanState train_generator(const Dataset& data, const EncoderCheckpoint& enc, const ClassifierCheckpoint& cls,
                         const TrainConfig& cfg, const TrainOptions& options) {
  GanState state = init_gan_state(cfg, data.image_size(), data.channels(), data.num_classes(), data.label_kind(),
                                  enc.hash(), cls.hash(), data.attribute_names());
  GanTrainer trainer(data, enc, cls, std::move(state), options);
  trainer.run();
  return std::move(trainer.state());
}

namespace {

void add_adam(ArchiveWriter& w, Json& meta, const std::string& name, const Adam<float>& opt) {
  meta[name] = {{"steps", opt.steps()}, {"slots", opt.first_moments().size()}};
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    w.add("opt/" + name + "/m/" + std::to_string(i), opt.first_moments()[i]);
    w.add("opt/" + name + "/v/" + std::to_string(i), opt.second_moments()[i]);
  }
}

void load_adam(const Archive& a, const Json& meta, const std::string& name, Adam<float>& opt) {
  const auto slots = meta.at(name).at("slots").get<std::size_t>();
  opt.set_steps(meta.at(name).at("steps").get<std::int64_t>());
  opt.first_moments().clear();
  opt.second_moments().clear();
  for (std::size_t i = 0; i < slots; ++i) {
    opt.first_moments().push_back(a.matrix<float>("opt/" + name + "/m/" + std::to_string(i)));
    opt.second_moments().push_back(a.matrix<float>("opt/" + name + "/v/" + std::to_string(i)));
  }
}

}  // namespace

void save_gan_state(const GanState& s, const std::filesystem::path& path) {
  ArchiveWriter w("generator");
  const GeneratorArch& arch = s.generator.arch();
  Json adam = Json::object();
  add_adam(w, adam, "g", s.g_opt);
  add_adam(w, adam, "d", s.d_opt);
  w.metadata() = {{"L", arch.num_layers()},
                  {"q", arch.layer_dims()},
                  {"d_b", arch.noise_dim},
                  {"d_g", arch.cond_dim},
                  {"d_y", arch.label_dim},
                  {"K", arch.num_classes},
                  {"label_kind", to_string(arch.kind)},
                  {"image_size", arch.image_size},
                  {"channels", arch.channels},
                  {"encoder_hash", s.encoder_hash},
                  {"classifier_hash", s.classifier_hash},
                  {"attribute_names", s.attribute_names},
                  {"config", to_json(s.config)},
                  {"iteration", s.iteration},
                  {"regularization_steps", s.regularization_steps},
                  {"best_fid", nullable(s.best_fid)},
                  {"best_iteration", s.best_iteration},
                  {"rolling",
                   {{"d_loss", nullable(s.rolling.d_loss)},
                    {"g_loss", nullable(s.rolling.g_loss)},
                    {"cls_loss", nullable(s.rolling.cls_loss)},
                    {"orth_penalty", nullable(s.rolling.orth_penalty)}}},
                  {"adam", adam},
                  {"revision", build_revision()},
                  {"hash", s.generator_hash()}};
  w.add_parameters(const_cast<Generator<float>&>(s.generator).parameters(), "G/");
  w.add_parameters(const_cast<Discriminator<float>&>(s.discriminator).parameters(), "D/");
  w.add_text("rng", serialize_rng(s.rng));
  w.write(path);
}

GanState load_gan_state(const std::filesystem::path& path) {
  const Archive a = Archive::read(path);
  if (a.kind() != "generator") throw CheckpointError(path.string() + " is not a generator checkpoint");
  const Json& m = a.metadata();
  try {
    GanState s = init_gan_state(train_config_from_json(m.at("config")), m.at("image_size").get<int>(),
                                m.at("channels").get<int>(), m.at("K").get<int>(),
                                label_kind_from_string(m.at("label_kind").get<std::string>()),
                                m.at("encoder_hash").get<std::string>(), m.at("classifier_hash").get<std::string>(),
                                m.at("attribute_names").get<std::vector<std::string>>());
    a.load_parameters(s.generator.parameters(), "G/");
    a.load_parameters(s.discriminator.parameters(), "D/");
    load_adam(a, m.at("adam"), "g", s.g_opt);
    load_adam(a, m.at("adam"), "d", s.d_opt);
    s.iteration = m.at("iteration").get<std::int64_t>();
    s.regularization_steps = m.at("regularization_steps").get<std::int64_t>();
    const double inf = std::numeric_limits<double>::infinity(), nan = std::numeric_limits<double>::quiet_NaN();
    s.best_fid = from_nullable(m.at("best_fid"), inf);
    s.best_iteration = m.at("best_iteration").get<std::int64_t>();
    const Json& r = m.at("rolling");
    s.rolling = {from_nullable(r.at("d_loss"), nan), from_nullable(r.at("g_loss"), nan),
                 from_nullable(r.at("cls_loss"), nan), from_nullable(r.at("orth_penalty"), nan)};
    s.rng = deserialize_rng(a.text("rng"));
    if (m.at("hash").get<std::string>() != s.generator_hash()) {
      throw CheckpointError(path.string() + ": generator parameter hash mismatch");
    }
    return s;
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": bad generator metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": inconsistent generator metadata: " + e.what());
  }
}

MetricReport evaluate_generator(const Generator<float>& generator, const Encoder<float>& encoder,
                                const Classifier<float>& classifier, const Dataset& data, const EvalConfig& cfg,
                                const std::vector<std::string>& attribute_names, bool conditional) {
  if (cfg.samples < 2) throw ConfigError("evaluation needs at least 2 samples");
  const GeneratorArch& arch = generator.arch();
  std::vector<int> pool = data.indices(Split::train);
  Rng pick(derive_seed(cfg.seed, {0xe1}));
  std::shuffle(pool.begin(), pool.end(), pick);
  const int n = std::min<int>(cfg.samples, int(pool.size()));
  if (n < 2) throw ConfigError("evaluation needs at least 2 training images");
  pool.resize(std::size_t(n));
  const ImageBatch<float> real = data.images(pool);
  const LabelBatch real_labels = data.labels(pool);

  Rng latent_rng(derive_seed(cfg.seed, {0xfa4e}));
  auto produce = [&](const LabelBatch& y) {
    const LatentCode<float> z = sample_latent<float>(arch, y.size(), latent_rng);
    const Matrix<float> labels = conditional ? y.targets : Matrix<float>::Zero(y.num_classes(), y.size());
    return generator.generate(labels, z);
  };
  ImageBatch<float> fake(0, arch.channels, arch.image_size, arch.image_size);
  {
    std::vector<int> idx;
    for (int start = 0; start < n; start += 100) {
      const int count = std::min(100, n - start);
      idx.resize(std::size_t(count));
      for (int j = 0; j < count; ++j) idx[std::size_t(j)] = start + j;
      fake = concat_images(fake, produce(real_labels.select(idx)));
    }
  }

  MetricReport report;
  report.real_samples = n;
  report.fake_samples = n;
  const Matrix<double> real_features = fid_features(encoder, classifier, real);
  report.fid = fid(real_features, fid_features(encoder, classifier, fake));
  const double noise_fid =
      fid(real_features, fid_features(encoder, classifier, uniform_noise_images(n, arch.channels, arch.image_size,
                                                                               cfg.seed)));

  if (arch.kind == LabelKind::categorical) {
    Matrix<double> probs(arch.num_classes, n);
    for (int start = 0; start < n; start += 256) {
      const int count = std::min(256, n - start);
      ImageBatch<float> part(count, fake.channels, fake.height, fake.width);
      part.pixels = fake.pixels.segment(Index(start) * fake.sample_size(), Index(count) * fake.sample_size());
      probs.middleCols(start, count) = classifier.classify(encoder.encode(part)).cast<double>();
    }
    const InceptionScore is = inception_score(probs, std::min(cfg.is_splits, n));
    report.is_mean = is.mean;
    report.is_std = is.std;
  } else {
    report.is_mean = 1.0;
    report.config["is_note"] = "inception score is defined for categorical labels only";
  }

  const int nc = std::min(cfg.chamfer_samples, n);
  if (nc >= 5) {
    ImageBatch<float> rc(nc, real.channels, real.height, real.width), fc(nc, fake.channels, fake.height, fake.width);
    rc.pixels = real.pixels.head(Index(nc) * real.sample_size());
    fc.pixels = fake.pixels.head(Index(nc) * fake.sample_size());
    TsneConfig tsne = cfg.tsne;
    tsne.seed = derive_seed(cfg.seed, {0x75e, tsne.seed});
    const ChamferResult ch = chamfer_embedding_distance(rc, fc, encoder, tsne);
    report.chamfer = ch.distance;
    report.chamfer_diverged = ch.diverged;
  }

  LabelBatch requested;
  if (arch.kind == LabelKind::categorical) {
    std::vector<int> classes(std::size_t(cfg.attribute_samples));
    for (int i = 0; i < cfg.attribute_samples; ++i) classes[std::size_t(i)] = i % arch.num_classes;
    requested = LabelBatch::categorical(classes, arch.num_classes);
  } else {
    const auto& train = data.indices(Split::train);
    std::uniform_int_distribution<std::size_t> u(0, train.size() - 1);
    std::vector<int> idx(std::size_t(cfg.attribute_samples));
    for (auto& i : idx) i = train[u(pick)];
    requested = data.labels(idx);
  }
  const AttributeAccuracy acc = attribute_control_accuracy(produce, encoder, classifier, requested);
  report.attr_acc = acc.overall;
  for (int k = 0; k < arch.num_classes; ++k) {
    const std::string name = std::size_t(k) < attribute_names.size() ? attribute_names[std::size_t(k)]
                                                                     : "class_" + std::to_string(k);
    report.per_attribute.emplace_back(name, acc.per_attribute[std::size_t(k)]);
  }
  report.config["samples"] = n;
  report.config["attribute_samples"] = cfg.attribute_samples;
  report.config["chamfer_samples"] = nc;
  report.config["is_splits"] = std::min(cfg.is_splits, n);
  report.config["tsne"] = {{"perplexity", cfg.tsne.perplexity}, {"iterations", cfg.tsne.iterations}};
  report.config["fid_features"] = "classifier hidden layer over encoder embeddings";
  report.config["fid_uniform_noise"] = noise_fid;
  report.config["seed"] = cfg.seed;
  return report;
}

}  // namespace infoscc
