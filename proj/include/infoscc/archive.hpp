#pragma once

// Single-file checkpoint archive:
//
//   "ISCCARC1"                 8-byte magic
//   u64 little-endian M        metadata length
//   M bytes                    JSON header: kind, user metadata, blob table,
//                              payload size and payload FNV-1a hash
//   payload                    concatenated blobs
//
// The header can be read without touching the payload. Readers verify the
// payload length and hash and reject partial files.

#include "infoscc/core.hpp"
#include "infoscc/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace infoscc {

using Json = nlohmann::json;

class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Hash over parameter names, shapes and values, in list order.
template <typename Scalar>
std::string parameter_hash(const ParameterList<Scalar>& params) {
  Fnv1a h;
  for (const auto& [name, p] : params) {
    h.update(name);
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    h.update(shape, sizeof(shape));
    h.update(p->value.data(), sizeof(Scalar) * std::size_t(p->value.size()));
  }
  return h.hex();
}

class ArchiveWriter {
 public:
  explicit ArchiveWriter(std::string kind) : kind_(std::move(kind)) {}

  Json& metadata() { return metadata_; }

  template <typename Scalar>
  void add(const std::string& name, const Matrix<Scalar>& m) {
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
    std::string bytes(sizeof(Scalar) * std::size_t(m.size()), '\0');
    if (!bytes.empty()) std::memcpy(bytes.data(), m.data(), bytes.size());
    put(name, std::is_same_v<Scalar, float> ? "f32" : "f64", m.rows(), m.cols(), std::move(bytes));
  }

  template <typename Scalar>
  void add_parameters(const ParameterList<Scalar>& params, const std::string& prefix) {
    for (const auto& [name, p] : params) add(prefix + name, p->value);
  }

  void add_text(const std::string& name, const std::string& text) {
    put(name, "bytes", Index(text.size()), 1, text);
  }

  /// Atomically writes the archive (temporary file + rename).
  void write(const std::filesystem::path& path) const;

 private:
  void put(const std::string& name, const std::string& dtype, Index rows, Index cols,
           std::string bytes);

  struct Blob {
    std::string dtype;
    Index rows = 0, cols = 0;
    std::string bytes;
  };
  std::string kind_;
  Json metadata_ = Json::object();
  std::map<std::string, Blob> blobs_;
};

class Archive {
 public:
  /// Reads and verifies the whole archive.
  static Archive read(const std::filesystem::path& path);

  /// Reads only the JSON header (kind, metadata, blob table).
  static Json read_header(const std::filesystem::path& path);

  const std::string& kind() const { return kind_; }
  const Json& metadata() const { return metadata_; }
  const std::string& payload_hash() const { return payload_hash_; }

  bool contains(const std::string& name) const { return blobs_.count(name) != 0; }

  template <typename Scalar>
  Matrix<Scalar> matrix(const std::string& name) const {
    const Blob& b = blob(name);
    if (b.dtype == "f32") return decode<float>(b).template cast<Scalar>();
    if (b.dtype == "f64") return decode<double>(b).template cast<Scalar>();
    throw CheckpointError("blob '" + name + "' is not numeric");
  }

  std::string text(const std::string& name) const { return blob(name).bytes; }

  /// Loads named parameter values, checking shapes.
  template <typename Scalar>
  void load_parameters(const ParameterList<Scalar>& params, const std::string& prefix) const {
    for (const auto& [name, p] : params) {
      Matrix<Scalar> m = matrix<Scalar>(prefix + name);
      if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
        throw CheckpointError("parameter '" + prefix + name + "' has shape " +
                              std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                              ", expected " + std::to_string(p->value.rows()) + "x" +
                              std::to_string(p->value.cols()));
      }
      p->value = std::move(m);
      p->zero_grad();
    }
  }

 private:
  struct Blob {
    std::string dtype;
    Index rows = 0, cols = 0;
    std::string bytes;
  };

  const Blob& blob(const std::string& name) const {
    auto it = blobs_.find(name);
    if (it == blobs_.end()) throw CheckpointError("archive has no blob '" + name + "'");
    return it->second;
  }

  template <typename T>
  static Matrix<T> decode(const Blob& b) {
    if (b.bytes.size() != sizeof(T) * std::size_t(b.rows * b.cols)) {
      throw CheckpointError("blob size does not match its shape");
    }
    Matrix<T> m(b.rows, b.cols);
    if (m.size() > 0) std::memcpy(m.data(), b.bytes.data(), b.bytes.size());
    return m;
  }

  std::string kind_;
  Json metadata_;
  std::string payload_hash_;
  std::map<std::string, Blob> blobs_;
};

/// Identifier of the source revision baked in at build time.
std::string build_revision();

}  // namespace infoscc
