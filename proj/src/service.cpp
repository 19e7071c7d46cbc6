#include "infoscc/service.hpp"

#include "infoscc/image_io.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace infoscc {

namespace {

struct BadRequest {
  std::string field;
  std::string message;
};

ServiceResponse json_response(int status, const Json& body) { return {status, body.dump(), "application/json"}; }

ServiceResponse error_response(int status, const std::string& message, const std::string& field = {},
                               const std::string& hash = {}) {
  Json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  if (!hash.empty()) body["checkpoint"] = hash;
  return json_response(status, body);
}

const Json& require(const Json& body, const std::string& key) {
  if (!body.contains(key)) throw BadRequest{key, "missing"};
  return body.at(key);
}

std::int64_t get_int(const Json& v, const std::string& field) {
  if (!v.is_number_integer()) throw BadRequest{field, "must be an integer"};
  return v.get<std::int64_t>();
}

double get_number(const Json& v, const std::string& field) {
  if (!v.is_number()) throw BadRequest{field, "must be a number"};
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw BadRequest{field, "must be finite"};
  return x;
}

double clamp_override(double v) { return std::clamp(v, -kOverrideLimit, kOverrideLimit); }

struct Override {
  int layer = 0;
  int dim = 0;
  float value = 0.0f;
};

struct Common {
  Matrix<float> label;        // K x 1, as fed to the generator
  std::vector<float> echo;    // requested label as a K-vector
  std::uint64_t seed = 0;
  bool raw = false;
};

class Handler {
 public:
  explicit Handler(const GanState& s) : s_(s), arch_(s.generator.arch()), dims_(arch_.layer_dims()) {}

  Common common(const Json& body, bool raw_query) const {
    Common c;
    c.echo = parse_label(require(body, "label"));
    c.label = Matrix<float>::Zero(arch_.num_classes, 1);
    if (s_.config.conditional) {
      for (int k = 0; k < arch_.num_classes; ++k) c.label(k, 0) = c.echo[std::size_t(k)];
    }
    if (body.contains("seed")) {
      const Json& v = body.at("seed");
      if (!v.is_number_unsigned() && !v.is_number_integer()) throw BadRequest{"seed", "must be an integer"};
      if (v.is_number_integer() && v.get<std::int64_t>() < 0) throw BadRequest{"seed", "must be >= 0"};
      c.seed = v.get<std::uint64_t>();
    } else {
      c.seed = std::random_device{}();
    }
    c.raw = raw_query;
    if (body.contains("format")) {
      const Json& f = body.at("format");
      if (!f.is_string() || (f != "png" && f != "raw")) throw BadRequest{"format", "must be \"png\" or \"raw\""};
      c.raw = f == "raw";
    }
    return c;
  }

  std::vector<float> parse_label(const Json& v) const {
    const int k = arch_.num_classes;
    std::vector<float> y(std::size_t(k), 0.0f);
    if (v.is_number_integer()) {
      if (arch_.kind != LabelKind::categorical) {
        throw BadRequest{"label", "multilabel models take a multi-hot vector of length " + std::to_string(k)};
      }
      const auto c = v.get<std::int64_t>();
      if (c < 0 || c >= k) throw BadRequest{"label", "class index out of range [0, " + std::to_string(k) + ")"};
      y[std::size_t(c)] = 1.0f;
      return y;
    }
    if (!v.is_array() || int(v.size()) != k) {
      throw BadRequest{"label", "must be a class index or a vector of length " + std::to_string(k)};
    }
    int ones = 0;
    for (int i = 0; i < k; ++i) {
      const Json& b = v[std::size_t(i)];
      if (!b.is_number() || (b.get<double>() != 0.0 && b.get<double>() != 1.0)) {
        throw BadRequest{"label[" + std::to_string(i) + "]", "must be 0 or 1"};
      }
      y[std::size_t(i)] = float(b.get<double>());
      ones += b.get<double>() == 1.0;
    }
    if (arch_.kind == LabelKind::categorical && ones != 1) throw BadRequest{"label", "must be one-hot"};
    return y;
  }

  std::vector<Override> overrides(const Json& body) const {
    std::vector<Override> out;
    if (!body.contains("overrides")) return out;
    const Json& list = body.at("overrides");
    if (!list.is_array()) throw BadRequest{"overrides", "must be an array"};
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string at = "overrides[" + std::to_string(i) + "]";
      const Json& o = list[i];
      if (!o.is_object()) throw BadRequest{at, "must be an object {layer, dim, value}"};
      Override ov;
      ov.layer = check_layer(get_int(require_in(o, "layer", at), at + ".layer"), at + ".layer");
      ov.dim = check_dim(ov.layer, get_int(require_in(o, "dim", at), at + ".dim"), at + ".dim");
      ov.value = float(clamp_override(get_number(require_in(o, "value", at), at + ".value")));
      out.push_back(ov);
    }
    return out;
  }

  int check_layer(std::int64_t layer, const std::string& field) const {
    if (layer < 0 || layer >= arch_.num_layers()) {
      throw BadRequest{field, "layer out of range [0, " + std::to_string(arch_.num_layers()) + ")"};
    }
    return int(layer);
  }

  int check_dim(int layer, std::int64_t dim, const std::string& field) const {
    const int q = dims_[std::size_t(layer)];
    if (dim < 0 || dim >= q) throw BadRequest{field, "dim out of range [0, " + std::to_string(q) + ")"};
    return int(dim);
  }

  LatentCode<float> sample(std::uint64_t seed, int i) const {
    Rng rng(derive_seed(seed, {std::uint64_t(i)}));
    return sample_latent<float>(arch_, 1, rng);
  }

  LatentCode<float> parse_latent(const Json& v, const std::string& field) const {
    if (!v.is_object()) throw BadRequest{field, "must be an object {layers, base_noise}"};
    LatentCode<float> z;
    const Json& layers = require_in(v, "layers", field);
    if (!layers.is_array() || int(layers.size()) != arch_.num_layers()) {
      throw BadRequest{field + ".layers", "must hold " + std::to_string(arch_.num_layers()) + " layer codes"};
    }
    for (int l = 0; l < arch_.num_layers(); ++l) {
      z.layer_codes.push_back(column(layers[std::size_t(l)], dims_[std::size_t(l)],
                                     field + ".layers[" + std::to_string(l) + "]"));
    }
    z.base_noise = column(require_in(v, "base_noise", field), arch_.noise_dim, field + ".base_noise");
    return z;
  }

  Json latent_json(const LatentCode<float>& z) const {
    Json layers = Json::array();
    for (const auto& c : z.layer_codes) layers.push_back(std::vector<float>(c.data(), c.data() + c.size()));
    return {{"layers", layers},
            {"base_noise", std::vector<float>(z.base_noise.data(), z.base_noise.data() + z.base_noise.size())}};
  }

  Json image_json(const ImageBatch<float>& img, bool raw) const {
    if (!raw) return httplib::detail::base64_encode(encode_png(img));
    std::string bytes(std::size_t(img.pixels.size()) * sizeof(float), '\0');
    std::memcpy(bytes.data(), img.pixels.data(), bytes.size());
    return {{"dtype", "float32"},
            {"shape", {img.channels, img.height, img.width}},
            {"data", httplib::detail::base64_encode(bytes)}};
  }

  ImageBatch<float> render(const Matrix<float>& label, const LatentCode<float>& z) const {
    return s_.generator.generate(label, z);
  }

  const GanState& state() const { return s_; }
  const GeneratorArch& arch() const { return arch_; }

 private:
  static const Json& require_in(const Json& o, const std::string& key, const std::string& at) {
    if (!o.contains(key)) throw BadRequest{at + "." + key, "missing"};
    return o.at(key);
  }

  static Matrix<float> column(const Json& v, int n, const std::string& field) {
    if (!v.is_array() || int(v.size()) != n) throw BadRequest{field, "must be an array of " + std::to_string(n) + " numbers"};
    Matrix<float> m(n, 1);
    for (int i = 0; i < n; ++i) m(i, 0) = float(get_number(v[std::size_t(i)], field));
    return m;
  }

  const GanState& s_;
  const GeneratorArch& arch_;
  std::vector<int> dims_;
};

Json parse_body(const std::string& body) {
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BadRequest{"body", "must be a JSON object"};
  return j;
}

template <typename F>
ServiceResponse guarded(const std::string& hash, F&& f) {
  try {
    return f();
  } catch (const BadRequest& e) {
    return error_response(400, e.message, e.field, hash);
  } catch (const Error& e) {
    return error_response(400, e.what(), {}, hash);
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    return error_response(500, e.what(), {}, hash);
  }
}

}  // namespace

GenerationModel::GenerationModel(GanState state)
    : state_(std::make_shared<const GanState>(std::move(state))), hash_(state_->generator_hash()) {}

GenerationModel GenerationModel::load(const std::filesystem::path& checkpoint) {
  return GenerationModel(load_gan_state(checkpoint));
}

ServiceResponse GenerationModel::meta() const {
  if (!loaded()) return error_response(503, "no model loaded");
  const GeneratorArch& a = state_->generator.arch();
  std::vector<std::string> names = state_->attribute_names;
  for (int k = int(names.size()); k < a.num_classes; ++k) names.push_back("class_" + std::to_string(k));
  return json_response(200, {{"L", a.num_layers()},
                             {"q", a.layer_dims()},
                             {"image_size", a.image_size},
                             {"channels", a.channels},
                             {"label_kind", to_string(a.kind)},
                             {"K", a.num_classes},
                             {"attributes", names},
                             {"conditional", state_->config.conditional},
                             {"noise_dim", a.noise_dim},
                             {"iteration", state_->iteration},
                             {"override_range", {-kOverrideLimit, kOverrideLimit}},
                             {"max_count", kMaxCount},
                             {"checkpoint", hash_}});
}

ServiceResponse GenerationModel::generate(const std::string& body, bool raw_query) const {
  if (!loaded()) return error_response(503, "no model loaded");
  return guarded(hash_, [&] {
    const Handler h(*state_);
    const Json req = parse_body(body);
    const Common c = h.common(req, raw_query);
    const std::vector<Override> ov = h.overrides(req);

    std::vector<LatentCode<float>> latents;
    if (req.contains("latents")) {
      const Json& list = req.at("latents");
      if (!list.is_array() || list.empty() || list.size() > std::size_t(kMaxCount)) {
        throw BadRequest{"latents", "must be an array of 1.." + std::to_string(kMaxCount) + " latent codes"};
      }
      if (req.contains("count") && req.at("count") != list.size()) {
        throw BadRequest{"count", "does not match the number of latents"};
      }
      for (std::size_t i = 0; i < list.size(); ++i) {
        latents.push_back(h.parse_latent(list[i], "latents[" + std::to_string(i) + "]"));
      }
    } else {
      const std::int64_t count = req.contains("count") ? get_int(req.at("count"), "count") : 1;
      if (count < 1 || count > kMaxCount) {
        throw BadRequest{"count", "must be in [1, " + std::to_string(kMaxCount) + "]"};
      }
      for (int i = 0; i < int(count); ++i) latents.push_back(h.sample(c.seed, i));
    }

    Json images = Json::array(), echoes = Json::array();
    for (auto& z : latents) {
      for (const Override& o : ov) z.layer_codes[std::size_t(o.layer)](o.dim, 0) = o.value;
      images.push_back(h.image_json(h.render(c.label, z), c.raw));
      echoes.push_back(h.latent_json(z));
    }
    return json_response(200, {{"checkpoint", hash_},
                               {"seed", c.seed},
                               {"label", c.echo},
                               {"format", c.raw ? "raw" : "png"},
                               {"count", latents.size()},
                               {"images", images},
                               {"latents", echoes}});
  });
}

ServiceResponse GenerationModel::traverse(const std::string& body, bool raw_query) const {
  if (!loaded()) return error_response(503, "no model loaded");
  return guarded(hash_, [&] {
    const Handler h(*state_);
    const Json req = parse_body(body);
    const Common c = h.common(req, raw_query);
    const int layer = h.check_layer(get_int(require(req, "layer"), "layer"), "layer");
    const int dim = h.check_dim(layer, get_int(require(req, "dim"), "dim"), "dim");
    const double lo = clamp_override(req.contains("min") ? get_number(req.at("min"), "min") : -3.0);
    const double hi = clamp_override(req.contains("max") ? get_number(req.at("max"), "max") : 3.0);
    const std::int64_t steps = req.contains("steps") ? get_int(req.at("steps"), "steps") : 7;
    if (steps < kMinSteps || steps > kMaxSteps) {
      throw BadRequest{"steps", "must be in [" + std::to_string(kMinSteps) + ", " + std::to_string(kMaxSteps) + "]"};
    }
    LatentCode<float> z = req.contains("latent") ? h.parse_latent(req.at("latent"), "latent") : h.sample(c.seed, 0);
    for (const Override& o : h.overrides(req)) z.layer_codes[std::size_t(o.layer)](o.dim, 0) = o.value;

    std::vector<double> values;
    for (int i = 0; i < int(steps); ++i) values.push_back(lo + (hi - lo) * double(i) / double(steps - 1));
    values.back() = hi;
    const std::vector<ImageBatch<float>> strip = h.state().generator.traverse(c.label, z, layer, dim, values);
    Json images = Json::array();
    for (const auto& img : strip) images.push_back(h.image_json(img, c.raw));
    return json_response(200, {{"checkpoint", hash_},
                               {"seed", c.seed},
                               {"label", c.echo},
                               {"layer", layer},
                               {"dim", dim},
                               {"values", values},
                               {"format", c.raw ? "raw" : "png"},
                               {"images", images},
                               {"latent", h.latent_json(z)}});
  });
}

struct Service::Impl {
  Impl(GenerationModel m, ServiceOptions o) : model(std::move(m)), options(std::move(o)) {}
  GenerationModel model;
  ServiceOptions options;
  httplib::Server server;
};

Service::Service(GenerationModel model, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(options))) {
  Impl& s = *impl_;
  auto send = [&s](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    if (s.model.loaded()) res.set_header("X-Checkpoint-Hash", s.model.hash());
    res.set_content(r.body, r.content_type);
  };
  auto raw = [](const httplib::Request& req) { return req.has_param("format") && req.get_param_value("format") == "raw"; };

  s.server.Get("/model/meta", [&s, send](const httplib::Request&, httplib::Response& res) { send(res, s.model.meta()); });
  s.server.Post("/generate", [&s, send, raw](const httplib::Request& req, httplib::Response& res) {
    send(res, s.model.generate(req.body, raw(req)));
  });
  s.server.Post("/traverse", [&s, send, raw](const httplib::Request& req, httplib::Response& res) {
    send(res, s.model.traverse(req.body, raw(req)));
  });
  if (s.options.cors) {
    s.server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    s.server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Expose-Headers", "X-Checkpoint-Hash");
    });
  }
  s.server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

Service::~Service() { stop(); }

int Service::bind() {
  const auto& o = impl_->options;
  const int port = o.port == 0 ? impl_->server.bind_to_any_port(o.host)
                               : (impl_->server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port < 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));
  return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace infoscc
