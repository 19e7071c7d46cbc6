#include "infoscc/generator.hpp"

#include <bit>

namespace infoscc {

void GeneratorArch::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("generator channels must be 1 or 3");
  if (base_size < 1) throw ConfigError("generator base_size must be >= 1");
  if (image_size < base_size || image_size % base_size != 0 ||
      !std::has_single_bit(unsigned(image_size / base_size))) {
    throw ConfigError("generator image_size / base_size must be a power of two");
  }
  if (kind == LabelKind::categorical && num_classes < 2) throw ConfigError("categorical generator needs K >= 2");
  if (num_classes < 1) throw ConfigError("generator needs K >= 1");
  if (label_dim < 1 || noise_dim < 1 || cond_dim < 1) throw ConfigError("generator dimensions must be positive");
  if (base_width < 1 || min_width < 1) throw ConfigError("generator widths must be positive");
  const int expected = std::countr_zero(unsigned(image_size / base_size));
  if (!subspace_dims.empty() && int(subspace_dims.size()) != expected) {
    throw ConfigError("generator needs " + std::to_string(expected) + " subspace layers for " +
                      std::to_string(image_size) + "px output from base " + std::to_string(base_size) + ", got " +
                      std::to_string(subspace_dims.size()));
  }
  for (int q : subspace_dims)
    if (q < 1) throw ConfigError("subspace dimensions must be positive");
}

int GeneratorArch::num_layers() const { return std::countr_zero(unsigned(image_size / base_size)); }

std::vector<int> GeneratorArch::layer_dims() const {
  if (!subspace_dims.empty()) return subspace_dims;
  return std::vector<int>(std::size_t(num_layers()), 6);
}

int GeneratorArch::width(int i) const { return std::max(min_width, base_width >> i); }

}  // namespace infoscc
