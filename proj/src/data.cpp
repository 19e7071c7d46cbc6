#include "infoscc/data.hpp"

#include "infoscc/image_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace infoscc {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

int parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("labels.csv: invalid integer '" + text + "' in " + what);
  }
}

void check_split(const std::vector<double>& split) {
  if (split.size() < 2 || split.size() > 3) throw ConfigError("split needs 2 or 3 ratios");
  double total = 0.0;
  for (double r : split) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

// --- synthetic shapes --------------------------------------------------------

bool inside_shape(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (shape) {
    case 0:  // disc
      return u * u + v * v <= 1.0;
    case 1:  // square
      return std::max(au, av) <= 0.8;
    case 2:  // triangle, apex up
      return v <= 0.75 && v >= -0.95 && au <= 0.95 * (v + 0.95) / 1.7;
    case 3:  // plus
      return (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95);
    case 4:  // diamond
      return au + av <= 1.0;
    case 5: {  // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    case 6:  // L shape
      return (u >= -0.8 && u <= -0.3 && v >= -0.9 && v <= 0.9) ||
             (v >= 0.4 && v <= 0.9 && u >= -0.8 && u <= 0.8);
    case 7:  // square frame
      return std::max(au, av) <= 0.85 && std::max(au, av) >= 0.5;
    default:
      return false;
  }
}

// --- augmentation helpers ----------------------------------------------------

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) h = std::fmod((g - b) / d, 6.0f);
  else if (mx == g) h = (b - r) / d + 2.0f;
  else h = (r - g) / d + 4.0f;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int sector = int(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

float bilinear(const ImageBatch<float>& img, int c, float y, float x) {
  y = std::clamp(y, 0.0f, float(img.height - 1));
  x = std::clamp(x, 0.0f, float(img.width - 1));
  const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const float fy = y - float(y0), fx = x - float(x0);
  const float top = img.at(0, c, y0, x0) * (1 - fx) + img.at(0, c, y0, x1) * fx;
  const float bottom = img.at(0, c, y1, x0) * (1 - fx) + img.at(0, c, y1, x1) * fx;
  return top * (1 - fy) + bottom * fy;
}

ImageBatch<float> random_resized_crop(const ImageBatch<float>& img, const AugmentationConfig& cfg,
                                      Rng& rng) {
  const int h = img.height, w = img.width;
  const double area = double(h) * w;
  std::uniform_real_distribution<double> scale(cfg.crop_scale_min, cfg.crop_scale_max);
  std::uniform_real_distribution<double> log_ratio(std::log(cfg.crop_ratio_min),
                                                   std::log(cfg.crop_ratio_max));
  int cw = w, ch = h, x0 = 0, y0 = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * scale(rng);
    const double ratio = std::exp(log_ratio(rng));
    const int tw = int(std::lround(std::sqrt(target * ratio)));
    const int th = int(std::lround(std::sqrt(target / ratio)));
    if (tw > 0 && th > 0 && tw <= w && th <= h) {
      cw = tw;
      ch = th;
      x0 = std::uniform_int_distribution<int>(0, w - cw)(rng);
      y0 = std::uniform_int_distribution<int>(0, h - ch)(rng);
      break;
    }
  }
  if (cw == w && ch == h) return img;
  ImageBatch<float> out(1, img.channels, h, w);
  const float sy = float(ch) / float(h), sx = float(cw) / float(w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(0, c, y, x) = bilinear(img, c, float(y0) + (float(y) + 0.5f) * sy - 0.5f,
                                      float(x0) + (float(x) + 0.5f) * sx - 0.5f);
  return out;
}

void color_jitter(ImageBatch<float>& img, const AugmentationConfig& cfg, Rng& rng) {
  auto factor = [&](double strength) {
    return float(std::uniform_real_distribution<double>(std::max(0.0, 1.0 - strength), 1.0 + strength)(rng));
  };
  const float brightness = factor(cfg.brightness);
  const float contrast = factor(cfg.contrast);
  const float saturation = factor(cfg.saturation);
  const float hue = float(std::uniform_real_distribution<double>(-cfg.hue, cfg.hue)(rng));
  const int hw = img.height * img.width;
  float* base = img.pixels.data();

  // Operate in [0, 1].
  for (Index i = 0; i < img.pixels.size(); ++i) base[i] = std::clamp((base[i] + 1.0f) * 0.5f * brightness, 0.0f, 1.0f);

  if (img.channels == 3) {
    float* r = base;
    float* g = base + hw;
    float* b = base + 2 * hw;
    float mean = 0.0f;
    for (int p = 0; p < hw; ++p) mean += luma(r[p], g[p], b[p]);
    mean /= float(hw);
    for (int p = 0; p < hw; ++p) {
      r[p] = std::clamp((r[p] - mean) * contrast + mean, 0.0f, 1.0f);
      g[p] = std::clamp((g[p] - mean) * contrast + mean, 0.0f, 1.0f);
      b[p] = std::clamp((b[p] - mean) * contrast + mean, 0.0f, 1.0f);
      const float gray = luma(r[p], g[p], b[p]);
      r[p] = std::clamp(gray + (r[p] - gray) * saturation, 0.0f, 1.0f);
      g[p] = std::clamp(gray + (g[p] - gray) * saturation, 0.0f, 1.0f);
      b[p] = std::clamp(gray + (b[p] - gray) * saturation, 0.0f, 1.0f);
      if (hue != 0.0f) {
        float hh, ss, vv;
        rgb_to_hsv(r[p], g[p], b[p], hh, ss, vv);
        hsv_to_rgb(hh + hue, ss, vv, r[p], g[p], b[p]);
      }
    }
  } else {
    const float mean = img.pixels.mean();
    for (Index i = 0; i < img.pixels.size(); ++i) base[i] = std::clamp((base[i] - mean) * contrast + mean, 0.0f, 1.0f);
  }
  for (Index i = 0; i < img.pixels.size(); ++i) base[i] = base[i] * 2.0f - 1.0f;
}

void to_grayscale(ImageBatch<float>& img) {
  if (img.channels != 3) return;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float g = luma(img.at(0, 0, y, x), img.at(0, 1, y, x), img.at(0, 2, y, x));
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = g;
    }
}

void gaussian_blur(ImageBatch<float>& img, double sigma) {
  const float k1 = float(std::exp(-1.0 / (2.0 * sigma * sigma)));
  const float norm = 1.0f + 2.0f * k1;
  const float kernel[3] = {k1 / norm, 1.0f / norm, k1 / norm};
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  ImageBatch<float> tmp = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float s = 0.0f;
        for (int d = -1; d <= 1; ++d) s += kernel[d + 1] * img.at(0, c, y, reflect(x + d, img.width));
        tmp.at(0, c, y, x) = s;
      }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float s = 0.0f;
        for (int d = -1; d <= 1; ++d) s += kernel[d + 1] * tmp.at(0, c, reflect(y + d, img.height), x);
        img.at(0, c, y, x) = s;
      }
  }
}

bool coin(double p, Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

double squared_distance(const Matrix<double>& points, Index i, const Matrix<double>& centers, Index j) {
  return (points.col(i) - centers.col(j)).squaredNorm();
}

}  // namespace

// --- DatasetSpec / Dataset ----------------------------------------------------

void DatasetSpec::validate() const {
  if (image_size < 2) throw ConfigError("image_size must be >= 2");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  check_split(split);
}

Dataset::Dataset(Matrix<float> pixels, LabelBatch labels, int channels, int image_size,
                 std::vector<std::string> filenames, std::vector<std::string> attribute_names,
                 std::vector<double> split, std::uint64_t seed)
    : pixels_(std::move(pixels)),
      labels_(std::move(labels)),
      channels_(channels),
      image_size_(image_size),
      filenames_(std::move(filenames)),
      attribute_names_(std::move(attribute_names)),
      seed_(seed) {
  check_split(split);
  if (pixels_.rows() != Index(channels) * image_size * image_size) {
    throw ShapeError("dataset: pixel rows do not match channels*size*size");
  }
  if (labels_.size() != pixels_.cols()) throw ShapeError("dataset: label count differs from image count");
  if (pixels_.size() > 0 && (pixels_.minCoeff() < -1.0f || pixels_.maxCoeff() > 1.0f)) {
    throw ShapeError("dataset: pixels outside [-1, 1]");
  }

  const int n = size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed_, {0x5b1f}));
  std::shuffle(order.begin(), order.end(), rng);
  splits_.assign(3, {});
  int start = 0;
  double cumulative = 0.0;
  for (std::size_t s = 0; s < split.size(); ++s) {
    cumulative += split[s];
    const int end = s + 1 == split.size() ? n : int(std::lround(cumulative * n));
    splits_[s].assign(order.begin() + start, order.begin() + std::max(start, end));
    std::sort(splits_[s].begin(), splits_[s].end());
    start = std::max(start, end);
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(num_classes(), 0);
  for (int i = 0; i < size(); ++i)
    for (int k = 0; k < num_classes(); ++k)
      if (labels_.targets(k, i) > 0.5f) ++counts[k];
  return counts;
}

ImageBatch<float> Dataset::images(std::span<const int> idx) const {
  ImageBatch<float> out(int(idx.size()), channels_, image_size_, image_size_);
  const Index per = out.sample_size();
  for (std::size_t b = 0; b < idx.size(); ++b) out.pixels.segment(Index(b) * per, per) = pixels_.col(idx[b]);
  return out;
}

ImageBatch<float> Dataset::image(int i) const {
  const int idx[1] = {i};
  return images(idx);
}

LabelBatch Dataset::labels(std::span<const int> idx) const { return labels_.select(idx); }

std::vector<std::vector<int>> Dataset::epoch_batches(Split split, int batch_size, std::uint64_t epoch,
                                                     bool shuffle, bool drop_last) const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<int> order = indices(split);
  if (shuffle) {
    Rng rng(derive_seed(seed_, {0xe70c, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(order.size(), start + std::size_t(batch_size));
    if (drop_last && end - start < std::size_t(batch_size)) break;
    batches.emplace_back(order.begin() + Index(start), order.begin() + Index(end));
  }
  return batches;
}

void Dataset::relabel(LabelBatch labels, std::vector<std::string> attribute_names) {
  if (labels.size() != size()) throw ShapeError("relabel: label count differs from image count");
  labels_ = std::move(labels);
  attribute_names_ = std::move(attribute_names);
}

// --- loading / writing ---------------------------------------------------------

Dataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  if (!fs::is_directory(spec.root)) throw ConfigError("dataset root does not exist: " + spec.root.string());
  const fs::path csv = spec.root / "labels.csv";
  std::ifstream in(csv);
  if (!in) throw ConfigError("dataset has no labels.csv: " + csv.string());

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("labels.csv is empty");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "filename") {
    throw ConfigError("labels.csv header must start with 'filename'");
  }
  const bool file_categorical = header.size() == 2 && header[1] == "class";
  if (spec.label_kind == LabelKind::categorical && !file_categorical) {
    throw ConfigError("categorical dataset needs a 'filename,class' labels.csv");
  }
  if (spec.label_kind == LabelKind::multilabel && file_categorical) {
    throw ConfigError("multilabel dataset needs 'filename,attr_1,...' columns");
  }

  std::vector<int> columns;  // header column per kept attribute
  std::vector<std::string> names;
  if (!file_categorical) {
    if (spec.attributes.empty()) {
      for (std::size_t c = 1; c < header.size(); ++c) {
        columns.push_back(int(c));
        names.push_back(header[c]);
      }
    } else {
      for (const auto& attr : spec.attributes) {
        auto it = std::find(header.begin() + 1, header.end(), attr);
        if (it == header.end()) throw ConfigError("attribute '" + attr + "' not in labels.csv");
        columns.push_back(int(it - header.begin()));
        names.push_back(attr);
      }
    }
  }

  std::vector<Vector<float>> images;
  std::vector<std::string> filenames;
  std::vector<int> classes;
  std::vector<std::vector<float>> bits;
  int skipped = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ConfigError("labels.csv line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    }
    ImageBatch<float> img;
    try {
      img = read_image(spec.root / "images" / fields[0], spec.image_size, spec.channels);
    } catch (const Error& e) {
      spdlog::warn("skipping {}: {}", fields[0], e.what());
      ++skipped;
      continue;
    }
    images.push_back(img.pixels);
    filenames.push_back(fields[0]);
    if (file_categorical) {
      classes.push_back(parse_int(fields[1], "line " + std::to_string(line_no)));
    } else {
      std::vector<float> row;
      for (int c : columns) {
        const int v = parse_int(fields[c], "line " + std::to_string(line_no));
        if (v != 0 && v != 1) throw ConfigError("multilabel values must be 0 or 1");
        row.push_back(float(v));
      }
      bits.push_back(std::move(row));
    }
  }
  if (skipped > 0) spdlog::warn("{} undecodable images skipped", skipped);
  if (images.empty()) throw ConfigError("dataset contains no decodable images");

  Matrix<float> pixels(images.front().size(), Index(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) pixels.col(Index(i)) = images[i];

  LabelBatch labels;
  if (file_categorical) {
    int k = 0;
    for (int c : classes) {
      if (c < 0) throw ConfigError("negative class index in labels.csv");
      k = std::max(k, c + 1);
    }
    labels = LabelBatch::categorical(classes, std::max(k, 2));
    for (int c = 0; c < labels.num_classes(); ++c) names.push_back("class_" + std::to_string(c));
  } else {
    Matrix<float> m(Index(columns.size()), Index(bits.size()));
    for (std::size_t i = 0; i < bits.size(); ++i)
      for (std::size_t c = 0; c < columns.size(); ++c) m(Index(c), Index(i)) = bits[i][c];
    labels = LabelBatch::multilabel(std::move(m));
  }
  Dataset data(std::move(pixels), std::move(labels), spec.channels, spec.image_size, std::move(filenames),
               std::move(names), spec.split, spec.seed);
  data.set_skipped(skipped);
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  std::ofstream csv(root / "labels.csv", std::ios::trunc);
  if (!csv) throw Error("cannot write " + (root / "labels.csv").string());
  csv << "filename";
  if (data.label_kind() == LabelKind::categorical) {
    csv << ",class\n";
  } else {
    for (const auto& name : data.attribute_names()) csv << ',' << name;
    csv << '\n';
  }
  const LabelBatch& labels = data.all_labels();
  for (int i = 0; i < data.size(); ++i) {
    std::string name = i < int(data.filenames().size()) ? data.filenames()[i] : "";
    if (name.empty()) {
      std::ostringstream s;
      s << std::setw(5) << std::setfill('0') << i << ".png";
      name = s.str();
    }
    write_png(root / "images" / name, data.image(i));
    csv << name;
    if (data.label_kind() == LabelKind::categorical) {
      csv << ',' << labels.class_index(i);
    } else {
      for (int k = 0; k < labels.num_classes(); ++k) csv << ',' << int(labels.targets(k, i));
    }
    csv << '\n';
  }
}

// --- synthetic -----------------------------------------------------------------

Dataset make_synthetic_dataset(int n, int k, int size, std::uint64_t seed, int channels,
                               std::vector<double> split) {
  if (k < 2 || n < k) throw ConfigError("synthetic dataset needs n >= k >= 2");
  if (k > kSyntheticShapes) {
    throw ConfigError("synthetic dataset supports at most " + std::to_string(kSyntheticShapes) + " classes");
  }
  if (size < 8) throw ConfigError("synthetic image size must be >= 8");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");

  std::vector<int> classes(n);
  for (int i = 0; i < n; ++i) classes[i] = i % k;
  Rng order_rng(derive_seed(seed, {0xc1a55}));
  std::shuffle(classes.begin(), classes.end(), order_rng);

  constexpr int kSuper = 4;
  Matrix<float> pixels(Index(channels) * size * size, n);
  std::vector<std::string> filenames;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {0x1a6e, std::uint64_t(i)}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double cx = size * (0.5 + 0.3 * (unit(rng) - 0.5));
    const double cy = size * (0.5 + 0.3 * (unit(rng) - 0.5));
    const double radius = size * (0.22 + 0.12 * unit(rng));
    float bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = float(0.4 * unit(rng));
    for (int c = 0; c < 3; ++c) fg[c] = float(0.6 + 0.4 * unit(rng));

    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
            if (inside_shape(classes[i], (px - cx) / radius, (py - cy) / radius)) ++hits;
          }
        const float cover = float(hits) / float(kSuper * kSuper);
        for (int c = 0; c < channels; ++c) {
          const float b = channels == 1 ? luma(bg[0], bg[1], bg[2]) : bg[c];
          const float f = channels == 1 ? luma(fg[0], fg[1], fg[2]) : fg[c];
          const float v = b + (f - b) * cover;
          pixels((Index(c) * size + y) * size + x, i) = std::clamp(v * 2.0f - 1.0f, -1.0f, 1.0f);
        }
      }
    }
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << i << ".png";
    filenames.push_back(name.str());
  }
  std::vector<std::string> names;
  for (int c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  return Dataset(std::move(pixels), LabelBatch::categorical(classes, k), channels, size, std::move(filenames),
                 std::move(names), std::move(split), seed);
}

// --- augmentation ----------------------------------------------------------------

void AugmentationConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (p < 0.0 || p > 1.0) throw ConfigError(std::string(name) + " must be in [0, 1]");
  };
  prob(flip_probability, "flip_probability");
  prob(jitter_probability, "jitter_probability");
  prob(grayscale_probability, "grayscale_probability");
  prob(blur_probability, "blur_probability");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max)) throw ConfigError("invalid crop ratio range");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
    throw ConfigError("color jitter strengths must be non-negative (hue <= 0.5)");
  }
}

ImageBatch<float> augment(const ImageBatch<float>& image, const AugmentationConfig& cfg, Rng& rng) {
  if (image.batch != 1) throw ShapeError("augment expects a single image");
  ImageBatch<float> out = random_resized_crop(image, cfg, rng);
  if (coin(cfg.flip_probability, rng)) {
    for (int c = 0; c < out.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width / 2; ++x) std::swap(out.at(0, c, y, x), out.at(0, c, y, out.width - 1 - x));
  }
  if (coin(cfg.jitter_probability, rng)) color_jitter(out, cfg, rng);
  if (coin(cfg.grayscale_probability, rng)) to_grayscale(out);
  if (coin(cfg.blur_probability, rng)) {
    gaussian_blur(out, std::uniform_real_distribution<double>(0.1, 2.0)(rng));
  }
  out.pixels = out.pixels.cwiseMax(-1.0f).cwiseMin(1.0f);
  return out;
}

std::pair<ImageBatch<float>, ImageBatch<float>> augment_pair(const ImageBatch<float>& image,
                                                             const AugmentationConfig& cfg, Rng& rng) {
  ImageBatch<float> a = augment(image, cfg, rng);
  ImageBatch<float> b = augment(image, cfg, rng);
  return {std::move(a), std::move(b)};
}

// --- clustering --------------------------------------------------------------------

ClusterResult cluster_pseudo_labels(const Matrix<double>& embeddings, int k, std::uint64_t seed, int restarts,
                                    int max_iterations) {
  const Index n = embeddings.cols();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (n < k) throw ConfigError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(n) + " points");
  if (!embeddings.allFinite()) throw ConfigError("embeddings must be finite");

  ClusterResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, {0x4b, std::uint64_t(r)}));
    Matrix<double> centers(embeddings.rows(), k);
    centers.col(0) = embeddings.col(std::uniform_int_distribution<Index>(0, n - 1)(rng));
    std::vector<double> nearest(std::size_t(n), std::numeric_limits<double>::infinity());
    bool degenerate = false;
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i) {
        nearest[i] = std::min(nearest[i], squared_distance(embeddings, i, centers, c - 1));
        total += nearest[i];
      }
      if (total <= 0.0) {
        degenerate = true;
        for (int rest = c; rest < k; ++rest) centers.col(rest) = centers.col(0);
        break;
      }
      double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
      Index chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        pick -= nearest[i];
        if (pick < 0.0 && nearest[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      if (nearest[chosen] <= 0.0) {
        for (Index i = n - 1; i >= 0; --i)
          if (nearest[i] > 0.0) {
            chosen = i;
            break;
          }
      }
      centers.col(c) = embeddings.col(chosen);
    }

    std::vector<int> labels(std::size_t(n), -1);
    double inertia = 0.0;
    for (int iter = 0; iter < max_iterations; ++iter) {
      bool changed = false;
      inertia = 0.0;
      for (Index i = 0; i < n; ++i) {
        int arg = 0;
        double dist = squared_distance(embeddings, i, centers, 0);
        for (int c = 1; c < k; ++c) {
          const double d = squared_distance(embeddings, i, centers, c);
          if (d < dist) {
            dist = d;
            arg = c;
          }
        }
        inertia += dist;
        if (labels[i] != arg) {
          labels[i] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix<double> sums = Matrix<double>::Zero(embeddings.rows(), k);
      std::vector<int> counts(k, 0);
      for (Index i = 0; i < n; ++i) {
        sums.col(labels[i]) += embeddings.col(i);
        ++counts[labels[i]];
      }
      for (int c = 0; c < k; ++c)
        if (counts[c] > 0) centers.col(c) = sums.col(c) / double(counts[c]);
    }
    if (inertia < best.inertia) {
      best.labels = labels;
      best.centroids = centers;
      best.inertia = inertia;
      best.degenerate = degenerate;
    }
  }
  if (best.degenerate) {
    spdlog::warn("cluster_pseudo_labels: all embeddings coincide; {} cluster(s) left empty", k - 1);
  }
  return best;
}

}  // namespace infoscc
