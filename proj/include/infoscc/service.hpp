#pragma once

// HTTP generation service over a frozen stage-3 checkpoint.
//
//   GET  /model/meta   layer count, subspace dims, label kind, K, hash
//   POST /generate     images for a label + seed (+ latent overrides), with
//                      an echo of the full latent code per image
//   POST /traverse     strip of images sweeping one latent coordinate
//
// Images are base64 PNGs; `format=raw` (query or body) returns base64
// little-endian float32 CHW arrays instead. Requests are pure functions of
// their fields: the latent of image i is drawn from derive_seed(seed, {i}),
// and each image is generated on its own so batch composition cannot change
// a result.

#include "infoscc/trainer.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace infoscc {

inline constexpr double kOverrideLimit = 4.0;
inline constexpr int kMaxCount = 16;
inline constexpr int kMinSteps = 2;
inline constexpr int kMaxSteps = 16;

struct ServiceResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handling without the transport; shared read-only by all threads.
class GenerationModel {
 public:
  GenerationModel() = default;
  explicit GenerationModel(GanState state);
  static GenerationModel load(const std::filesystem::path& checkpoint);

  bool loaded() const { return state_ != nullptr; }
  const std::string& hash() const { return hash_; }

  ServiceResponse meta() const;
  ServiceResponse generate(const std::string& body, bool raw_query = false) const;
  ServiceResponse traverse(const std::string& body, bool raw_query = false) const;

 private:
  std::shared_ptr<const GanState> state_;
  std::string hash_;
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  bool cors = true;
};

class Service {
 public:
  Service(GenerationModel model, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the socket; returns the bound port.
  int bind();
  /// Blocks serving requests until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace infoscc
