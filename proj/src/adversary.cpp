#include "infoscc/adversary.hpp"

namespace infoscc {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::hinge: return "hinge";
    case LossKind::non_saturating: return "non_saturating";
    case LossKind::lsgan: return "lsgan";
  }
  return "?";
}

std::string to_string(DiscriminatorKind k) { return k == DiscriminatorKind::global ? "global" : "patch"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "hinge") return LossKind::hinge;
  if (s == "non_saturating" || s == "non-saturating") return LossKind::non_saturating;
  if (s == "lsgan") return LossKind::lsgan;
  throw ConfigError("unknown loss kind '" + s + "' (expected hinge, non_saturating or lsgan)");
}

DiscriminatorKind discriminator_kind_from_string(const std::string& s) {
  if (s == "global") return DiscriminatorKind::global;
  if (s == "patch") return DiscriminatorKind::patch;
  throw ConfigError("unknown discriminator '" + s + "' (expected global or patch)");
}

void DiscriminatorArch::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("discriminator channels must be 1 or 3");
  if (image_size < 16 || (image_size & (image_size - 1)) != 0) {
    throw ConfigError("discriminator image_size must be a power of two >= 16");
  }
  if (base_width < 1 || max_width < base_width) throw ConfigError("discriminator widths are invalid");
  if (heads < 1) throw ConfigError("discriminator heads must be >= 1");
}

int DiscriminatorArch::downsamplings() const {
  if (kind == DiscriminatorKind::patch) {
    // Three stages (70x70-style receptive field), fewer for small images so
    // the score map stays at least 2x2.
    int stages = 0;
    while (stages < 3 && (image_size >> (stages + 1)) >= 4) ++stages;
    return stages;
  }
  // Global: halve down to a 4x4 map before the final linear layer.
  int stages = 0;
  for (int s = image_size; s > 4; s /= 2) ++stages;
  return stages;
}

std::pair<int, int> score_shape(const DiscriminatorArch& arch) {
  arch.validate();
  if (arch.kind == DiscriminatorKind::global) return {1, 1};
  int s = arch.image_size;
  for (int i = 0; i < arch.downsamplings(); ++i) s = (s + 2 - 4) / 2 + 1;
  for (int i = 0; i < 2; ++i) s = (s + 2 - 4) + 1;
  return {s, s};
}

}  // namespace infoscc
