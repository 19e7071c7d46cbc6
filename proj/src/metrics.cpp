#include "infoscc/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace infoscc {

namespace {

Matrix<double> covariance(const Matrix<double>& x, const Vector<double>& mean) {
  const Matrix<double> centered = x.colwise() - mean;
  return centered * centered.transpose() / double(x.cols() - 1);
}

Matrix<double> symmetric_sqrt(const Matrix<double>& s) {
  Eigen::SelfAdjointEigenSolver<Matrix<double>> eig(s);
  const Vector<double> roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Vector<double>& mu1, const Matrix<double>& s1, const Vector<double>& mu2,
                        const Matrix<double>& s2) {
  if (mu1.size() != mu2.size() || s1.rows() != s2.rows() || s1.rows() != mu1.size()) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  // Tr sqrt(s1 s2) = Tr sqrt(sqrt(s1) s2 sqrt(s1)); the latter is symmetric.
  const Matrix<double> r1 = symmetric_sqrt(s1);
  const Matrix<double> inner = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<Matrix<double>> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double total = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  if (total < 0.0) {
    if (total < -1e-6) spdlog::warn("negative Frechet distance {} clamped to 0", total);
    return 0.0;
  }
  return total;
}

double fid(const Matrix<double>& real, const Matrix<double>& fake) {
  if (real.rows() != fake.rows()) {
    throw ShapeError("fid: feature dimensions differ (" + std::to_string(real.rows()) + " vs " +
                     std::to_string(fake.rows()) + ")");
  }
  if (real.cols() < 2 || fake.cols() < 2) throw ConfigError("fid needs at least 2 samples per set");
  const Index d = real.rows();
  const Vector<double> mr = real.rowwise().mean(), mf = fake.rowwise().mean();
  const Matrix<double> eps = 1e-6 * Matrix<double>::Identity(d, d);
  return frechet_distance(mr, covariance(real, mr) + eps, mf, covariance(fake, mf) + eps);
}

InceptionScore inception_score(const Matrix<double>& probs, int splits) {
  const Index n = probs.cols();
  if (splits < 1) throw ConfigError("inception_score: splits must be >= 1");
  if (n < splits) throw ConfigError("inception_score: fewer samples than splits");
  for (Index j = 0; j < n; ++j) {
    if (probs.col(j).minCoeff() < 0.0 || std::abs(probs.col(j).sum() - 1.0) > 1e-6) {
      throw ConfigError("inception_score: column " + std::to_string(j) + " is not a categorical distribution");
    }
  }
  auto xlogy = [](double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; };
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const Index first = n * s / splits, last = n * (s + 1) / splits;
    const auto part = probs.middleCols(first, last - first);
    const Vector<double> marginal = part.rowwise().mean();
    double kl = 0.0;
    for (Index j = 0; j < part.cols(); ++j)
      for (Index k = 0; k < part.rows(); ++k) kl += xlogy(part(k, j), marginal[k]);
    scores.push_back(std::exp(kl / double(part.cols())));
  }
  InceptionScore out;
  for (double v : scores) out.mean += v;
  out.mean /= double(scores.size());
  for (double v : scores) out.std += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(out.std / double(scores.size()));
  return out;
}

double chamfer_distance(const Matrix<double>& a, const Matrix<double>& b) {
  if (a.rows() != b.rows()) throw ShapeError("chamfer_distance: point dimensions differ");
  if (a.cols() == 0 || b.cols() == 0) throw ConfigError("chamfer_distance: empty point set");
  auto directed = [](const Matrix<double>& from, const Matrix<double>& to) {
    double sum = 0.0;
    for (Index i = 0; i < from.cols(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < to.cols(); ++j) best = std::min(best, (from.col(i) - to.col(j)).squaredNorm());
      sum += best;
    }
    return sum / double(from.cols());
  };
  return directed(a, b) + directed(b, a);
}

namespace {

Matrix<double> squared_distances(const Matrix<double>& x) {
  const Vector<double> sq = x.colwise().squaredNorm().transpose();
  Matrix<double> d = -2.0 * x.transpose() * x;
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

// Row-conditional affinities with per-point bandwidths matching the target
// perplexity, symmetrized.
Matrix<double> joint_affinities(const Matrix<double>& x, double perplexity) {
  const Index n = x.cols();
  const Matrix<double> d = squared_distances(x);
  const double target = std::log(perplexity);
  Matrix<double> p = Matrix<double>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Vector<double> row(n);
    for (int iter = 0; iter < 100; ++iter) {
      double dmin = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j)
        if (j != i) dmin = std::min(dmin, d(i, j));
      double sum = 0.0, weighted = 0.0;
      for (Index j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * (d(i, j) - dmin));
        sum += row[j];
        weighted += row[j] * (d(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p.row(i) = row.transpose();
  }
  p = (p + p.transpose()) / (2.0 * double(n));
  return p.cwiseMax(1e-12);
}

}  // namespace

TsneResult tsne_3d(const Matrix<double>& x, const TsneConfig& cfg) {
  const Index n = x.cols();
  if (n < 4) throw ConfigError("t-SNE needs at least 4 points");
  if (!x.allFinite()) throw ConfigError("t-SNE input is not finite");
  const double perplexity = std::min(cfg.perplexity, double(n - 1) / 3.0);
  Matrix<double> p = joint_affinities(x, perplexity);

  Rng rng(derive_seed(cfg.seed, {0x75e}));
  Matrix<double> y = standard_normal<double>(3, n, rng) * 1e-4;
  Matrix<double> velocity = Matrix<double>::Zero(3, n);
  Matrix<double> gains = Matrix<double>::Ones(3, n);
  TsneResult result;
  Matrix<double> last_good = y;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.early_exaggeration : 1.0;
    const double momentum = iter < cfg.exaggeration_iterations ? 0.5 : 0.8;
    Matrix<double> num = (1.0 + squared_distances(y).array()).inverse().matrix();
    num.diagonal().setZero();
    const double z = num.sum();
    // grad_i = 4 sum_j (e p_ij - q_ij) num_ij (y_i - y_j)
    const Matrix<double> w = ((exaggeration * p).array() - num.array() / z).matrix().cwiseProduct(num);
    const Vector<double> wsum = w.rowwise().sum();
    const Matrix<double> grad = 4.0 * (y * wsum.asDiagonal() - y * w);
    for (Index j = 0; j < n; ++j) {
      for (Index k = 0; k < 3; ++k) {
        const bool same = (grad(k, j) > 0.0) == (velocity(k, j) > 0.0);
        gains(k, j) = std::max(same ? gains(k, j) * 0.8 : gains(k, j) + 0.2, 0.01);
      }
    }
    velocity = momentum * velocity - cfg.learning_rate * gains.cwiseProduct(grad);
    y += velocity;
    y.colwise() -= y.rowwise().mean();
    if (!y.allFinite()) {
      result.diverged = true;
      y = last_good;
      break;
    }
    last_good = y;
  }

  Matrix<double> num = (1.0 + squared_distances(y).array()).inverse().matrix();
  num.diagonal().setZero();
  const Matrix<double> q = (num / num.sum()).cwiseMax(1e-12);
  double kl = 0.0;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (i != j) kl += p(i, j) * std::log(p(i, j) / q(i, j));
  result.kl = kl;
  if (!std::isfinite(kl)) result.diverged = true;
  result.points = std::move(y);
  return result;
}

ChamferResult chamfer_embedding_distance(const Matrix<double>& real_embeddings,
                                         const Matrix<double>& fake_embeddings, const TsneConfig& cfg) {
  if (real_embeddings.rows() != fake_embeddings.rows()) throw ShapeError("chamfer: embedding dimensions differ");
  const Index nr = real_embeddings.cols(), nf = fake_embeddings.cols();
  if (nr + nf < 10) throw ConfigError("chamfer embedding distance needs at least 10 samples");
  if (nr != nf) spdlog::warn("chamfer embedding distance with unequal set sizes ({} real, {} fake)", nr, nf);
  Matrix<double> joint(real_embeddings.rows(), nr + nf);
  joint << real_embeddings, fake_embeddings;
  const TsneResult t = tsne_3d(joint, cfg);
  if (t.diverged) spdlog::warn("t-SNE did not converge; chamfer distance flagged");
  return {chamfer_distance(t.points.leftCols(nr), t.points.rightCols(nf)), t.diverged};
}

namespace {

Matrix<double> encode_all(const Encoder<float>& encoder, const ImageBatch<float>& images, int batch_size) {
  Matrix<double> out(encoder.arch().embedding_dim, images.batch);
  const Index per = images.sample_size();
  for (int start = 0; start < images.batch; start += batch_size) {
    const int count = std::min(batch_size, images.batch - start);
    ImageBatch<float> part(count, images.channels, images.height, images.width);
    part.pixels = images.pixels.segment(Index(start) * per, Index(count) * per);
    out.middleCols(start, count) = encoder.encode(part).cast<double>();
  }
  return out;
}

}  // namespace

ChamferResult chamfer_embedding_distance(const ImageBatch<float>& real, const ImageBatch<float>& fake,
                                         const Encoder<float>& encoder, const TsneConfig& cfg) {
  return chamfer_embedding_distance(encode_all(encoder, real, 256), encode_all(encoder, fake, 256), cfg);
}

AttributeAccuracy attribute_control_accuracy(const LabelledGenerator& generate, const Encoder<float>& encoder,
                                             const Classifier<float>& classifier, const LabelBatch& labels,
                                             int batch_size) {
  const int n = labels.size(), k = labels.num_classes();
  if (classifier.arch().num_classes != k) throw ShapeError("attribute accuracy: label and classifier K differ");
  std::vector<std::int64_t> hits(std::size_t(k), 0), counts(std::size_t(k), 0);
  std::int64_t total_hits = 0, total = 0;
  std::vector<int> idx;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    idx.resize(std::size_t(count));
    for (int j = 0; j < count; ++j) idx[std::size_t(j)] = start + j;
    const LabelBatch y = labels.select(idx);
    const ImageBatch<float> images = generate(y);
    if (images.batch != count) throw ShapeError("attribute accuracy: generator returned the wrong batch size");
    const Matrix<float> probs = classifier.classify(encoder.encode(images));
    for (int j = 0; j < count; ++j) {
      if (labels.kind == LabelKind::categorical) {
        Index pred = 0;
        probs.col(j).maxCoeff(&pred);
        const int want = y.class_index(j);
        const bool ok = int(pred) == want;
        hits[std::size_t(want)] += ok;
        ++counts[std::size_t(want)];
        total_hits += ok;
        ++total;
      } else {
        for (int a = 0; a < k; ++a) {
          const bool ok = (probs(a, j) >= 0.5f) == (y.targets(a, j) > 0.5f);
          hits[std::size_t(a)] += ok;
          ++counts[std::size_t(a)];
          total_hits += ok;
          ++total;
        }
      }
    }
  }
  AttributeAccuracy out;
  out.overall = total > 0 ? 100.0 * double(total_hits) / double(total) : 0.0;
  out.counts = counts;
  for (int a = 0; a < k; ++a) {
    out.per_attribute.push_back(counts[std::size_t(a)] > 0
                                    ? 100.0 * double(hits[std::size_t(a)]) / double(counts[std::size_t(a)])
                                    : 0.0);
  }
  return out;
}

Matrix<double> fid_features(const Encoder<float>& encoder, const Classifier<float>& classifier,
                            const ImageBatch<float>& images, int batch_size) {
  const Matrix<double> e = encode_all(encoder, images, batch_size);
  return classifier.features(e.cast<float>()).cast<double>();
}

ImageBatch<float> uniform_noise_images(int count, int channels, int size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x9015e}));
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  ImageBatch<float> out(count, channels, size, size);
  for (Index i = 0; i < out.pixels.size(); ++i) out.pixels[i] = u(rng);
  return out;
}

Json MetricReport::to_json() const {
  Json per = Json::object();
  for (const auto& [name, v] : per_attribute) per[name] = v;
  return {{"fid", fid},
          {"is_mean", is_mean},
          {"is_std", is_std},
          {"chamfer", chamfer},
          {"chamfer_diverged", chamfer_diverged},
          {"attr_acc", attr_acc},
          {"per_attribute", per},
          {"real_samples", real_samples},
          {"fake_samples", fake_samples},
          {"chamfer_definition", "symmetric mean of min squared distance, joint 3-D t-SNE"},
          {"config", config}};
}

MetricReport MetricReport::from_json(const Json& j) {
  MetricReport r;
  r.fid = j.at("fid").get<double>();
  r.is_mean = j.at("is_mean").get<double>();
  r.is_std = j.at("is_std").get<double>();
  r.chamfer = j.at("chamfer").get<double>();
  r.chamfer_diverged = j.value("chamfer_diverged", false);
  r.attr_acc = j.at("attr_acc").get<double>();
  for (const auto& [name, v] : j.at("per_attribute").items()) r.per_attribute.emplace_back(name, v.get<double>());
  r.real_samples = j.value("real_samples", std::int64_t(0));
  r.fake_samples = j.value("fake_samples", std::int64_t(0));
  r.config = j.value("config", Json::object());
  return r;
}

bool MetricReport::valid() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(fid) || !finite(is_mean) || !finite(is_std) || !finite(chamfer) || !finite(attr_acc)) return false;
  if (fid < -1e-6 || is_mean < 1.0 - 1e-6 || chamfer < 0.0) return false;
  if (attr_acc < 0.0 || attr_acc > 100.0) return false;
  for (const auto& [name, v] : per_attribute)
    if (!finite(v) || v < 0.0 || v > 100.0) return false;
  return true;
}

std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::vector<std::string> attrs;
  for (const auto& [name, r] : rows)
    for (const auto& [a, v] : r.per_attribute)
      if (std::find(attrs.begin(), attrs.end(), a) == attrs.end()) attrs.push_back(a);

  std::size_t first = 5;
  for (const auto& [name, r] : rows) first = std::max(first, name.size());
  std::ostringstream out;
  out << fmt::format("{:<{}}  {:>10}  {:>12}  {:>10}  {:>9}", "Model", first, "FID (lower)", "IS (higher)",
                     "Chamfer", "Attr acc");
  for (const auto& a : attrs) out << fmt::format("  {:>{}}", a, std::max<std::size_t>(7, a.size()));
  out << '\n';
  for (const auto& [name, r] : rows) {
    out << fmt::format("{:<{}}  {:>10.2f}  {:>5.2f} ± {:<4.2f}  {:>10.2f}{}  {:>8.2f}%", name, first, r.fid,
                       r.is_mean, r.is_std, r.chamfer, r.chamfer_diverged ? "*" : " ", r.attr_acc);
    for (const auto& a : attrs) {
      auto it = std::find_if(r.per_attribute.begin(), r.per_attribute.end(),
                             [&](const auto& p) { return p.first == a; });
      const std::size_t w = std::max<std::size_t>(7, a.size());
      if (it == r.per_attribute.end()) {
        out << fmt::format("  {:>{}}", "-", w);
      } else {
        out << fmt::format("  {:>{}.2f}%", it->second, w - 1);
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace infoscc
