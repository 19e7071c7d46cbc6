#include "infoscc/image.hpp"

namespace infoscc {

std::string to_string(LabelKind kind) {
  return kind == LabelKind::categorical ? "categorical" : "multilabel";
}

LabelKind label_kind_from_string(const std::string& name) {
  if (name == "categorical") return LabelKind::categorical;
  if (name == "multilabel") return LabelKind::multilabel;
  throw ConfigError("unknown label kind '" + name + "' (expected categorical or multilabel)");
}

LabelBatch LabelBatch::categorical(std::span<const int> classes, int num_classes) {
  LabelBatch out;
  out.kind = LabelKind::categorical;
  out.targets = Matrix<float>::Zero(num_classes, Index(classes.size()));
  for (std::size_t b = 0; b < classes.size(); ++b) {
    if (classes[b] < 0 || classes[b] >= num_classes) {
      throw ConfigError("label index " + std::to_string(classes[b]) + " out of range [0, " +
                        std::to_string(num_classes) + ")");
    }
    out.targets(classes[b], Index(b)) = 1.0f;
  }
  return out;
}

LabelBatch LabelBatch::multilabel(Matrix<float> bits) {
  for (Index i = 0; i < bits.size(); ++i) {
    const float v = bits.data()[i];
    if (v != 0.0f && v != 1.0f) throw ConfigError("multilabel entries must be 0 or 1");
  }
  LabelBatch out;
  out.kind = LabelKind::multilabel;
  out.targets = std::move(bits);
  return out;
}

int LabelBatch::class_index(int b) const {
  Index best = 0;
  targets.col(b).maxCoeff(&best);
  return int(best);
}

LabelBatch LabelBatch::select(std::span<const int> columns) const {
  LabelBatch out;
  out.kind = kind;
  out.targets.resize(targets.rows(), Index(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) out.targets.col(Index(j)) = targets.col(columns[j]);
  return out;
}

LabelBatch concat_labels(const LabelBatch& a, const LabelBatch& b) {
  if (a.kind != b.kind || a.num_classes() != b.num_classes()) {
    throw ShapeError("concat_labels: label batches differ in kind or K");
  }
  LabelBatch out;
  out.kind = a.kind;
  out.targets.resize(a.targets.rows(), a.targets.cols() + b.targets.cols());
  out.targets << a.targets, b.targets;
  return out;
}

}  // namespace infoscc
