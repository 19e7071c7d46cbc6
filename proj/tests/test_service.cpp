#include "infoscc/service.hpp"

#include "fixtures.hpp"
#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <thread>

using namespace infoscc;
using testing::tiny_train_config;
using testing::tiny_world;

namespace {

const GanState& tiny_gan() {
  static const GanState s = [] {
    const auto& w = tiny_world();
    TrainConfig cfg = tiny_train_config();
    cfg.iterations = 5;
    return train_generator(w.data, w.encoder, w.classifier, cfg);
  }();
  return s;
}

// A live service on a free port for the duration of a test.
class Running {
 public:
  explicit Running(GenerationModel model, bool cors = true)
      : service_(std::move(model), ServiceOptions{"127.0.0.1", 0, cors}) {
    port_ = service_.bind();
    thread_ = std::thread([this] { service_.listen(); });
  }
  ~Running() {
    service_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

 private:
  Service service_;
  int port_ = 0;
  std::thread thread_;
};

Json post(httplib::Client& c, const std::string& path, const Json& body, int expect = 200) {
  const auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return Json::parse(res->body);
}

}  // namespace

TEST_CASE("service contract over HTTP") {
  GenerationModel model(tiny_gan());
  const std::string hash = tiny_gan().generator_hash();
  Running server(model);
  httplib::Client c = server.client();

  SUBCASE("meta echoes the checkpoint configuration") {
    const auto res = c.Get("/model/meta");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("X-Checkpoint-Hash") == hash);
    const Json m = Json::parse(res->body);
    CHECK(m.at("L") == 2);
    CHECK(m.at("q") == Json::array({2, 2}));
    CHECK(m.at("image_size") == 16);
    CHECK(m.at("K") == 3);
    CHECK(m.at("label_kind") == "categorical");
    CHECK(m.at("iteration") == 5);
    CHECK(m.at("checkpoint") == hash);
    CHECK(m.at("attributes").size() == 3);
  }

  SUBCASE("generation is deterministic and batch independent") {
    const Json req = {{"label", 1}, {"seed", 42}, {"count", 3}};
    const auto a = c.Post("/generate", req.dump(), "application/json");
    const auto b = c.Post("/generate", req.dump(), "application/json");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->status == 200);
    CHECK(a->body == b->body);
    const Json ja = Json::parse(a->body);
    CHECK(ja.at("images").size() == 3);
    CHECK(ja.at("seed") == 42);
    CHECK(ja.at("checkpoint") == hash);
    const Json single = post(c, "/generate", {{"label", 1}, {"seed", 42}, {"count", 1}});
    CHECK(single.at("images")[0] == ja.at("images")[0]);
    const Json other = post(c, "/generate", {{"label", 1}, {"seed", 43}, {"count", 1}});
    CHECK(other.at("images")[0] != ja.at("images")[0]);
    const Json unseeded = post(c, "/generate", {{"label", 0}});
    CHECK(unseeded.at("seed").is_number_unsigned());
  }

  SUBCASE("an echoed latent reproduces its image") {
    const Json first = post(c, "/generate", {{"label", 2}, {"seed", 7}, {"count", 2}});
    const Json again = post(c, "/generate", {{"label", 2}, {"latents", Json::array({first.at("latents")[1]})}});
    CHECK(again.at("images")[0] == first.at("images")[1]);
    CHECK(again.at("latents")[0] == first.at("latents")[1]);
  }

  SUBCASE("overrides set one latent coordinate") {
    const Json base = post(c, "/generate", {{"label", 0}, {"seed", 9}});
    const Json moved =
        post(c, "/generate", {{"label", 0}, {"seed", 9}, {"overrides", {{{"layer", 1}, {"dim", 0}, {"value", 2.5}}}}});
    CHECK(moved.at("latents")[0].at("layers")[1][0] == 2.5);
    CHECK(moved.at("latents")[0].at("layers")[0] == base.at("latents")[0].at("layers")[0]);
    const Json clamped =
        post(c, "/generate", {{"label", 0}, {"seed", 9}, {"overrides", {{{"layer", 0}, {"dim", 1}, {"value", 99}}}}});
    CHECK(clamped.at("latents")[0].at("layers")[0][1] == kOverrideLimit);
  }

  SUBCASE("traversal endpoints match direct generation") {
    const Json t = post(c, "/traverse", {{"label", 1}, {"seed", 5}, {"layer", 0}, {"dim", 1}, {"min", -2}, {"max", 2},
                                         {"steps", 5}});
    REQUIRE(t.at("images").size() == 5);
    CHECK(t.at("values") == Json::array({-2.0, -1.0, 0.0, 1.0, 2.0}));
    const Json latent = t.at("latent");
    for (int end : {0, 4}) {
      const double v = end == 0 ? -2.0 : 2.0;
      const Json g = post(c, "/generate", {{"label", 1}, {"latents", Json::array({latent})},
                                           {"overrides", {{{"layer", 0}, {"dim", 1}, {"value", v}}}}});
      CHECK(g.at("images")[0] == t.at("images")[std::size_t(end)]);
    }
    // Without an explicit latent the strip uses the seed's first latent.
    const Json g0 = post(c, "/generate", {{"label", 1}, {"seed", 5}});
    CHECK(g0.at("latents")[0].at("base_noise") == latent.at("base_noise"));
  }

  SUBCASE("raw float output") {
    const auto res = c.Post("/generate?format=raw", Json{{"label", 0}, {"seed", 1}}.dump(), "application/json");
    REQUIRE(res);
    const Json j = Json::parse(res->body);
    CHECK(j.at("format") == "raw");
    const Json& img = j.at("images")[0];
    CHECK(img.at("dtype") == "float32");
    CHECK(img.at("shape") == Json::array({3, 16, 16}));
    const std::string bytes = img.at("data").get<std::string>();
    // base64 of 3*16*16 floats
    CHECK(bytes.size() == (3 * 16 * 16 * 4 + 2) / 3 * 4);
  }

  SUBCASE("bad requests name the offending field") {
    CHECK(post(c, "/generate", {{"label", 3}}, 400).at("field") == "label");
    CHECK(post(c, "/generate", {{"seed", 1}}, 400).at("field") == "label");
    CHECK(post(c, "/generate", {{"label", 0}, {"count", 0}}, 400).at("field") == "count");
    CHECK(post(c, "/generate", {{"label", 0}, {"count", 17}}, 400).at("field") == "count");
    CHECK(post(c, "/generate", {{"label", 0}, {"format", "gif"}}, 400).at("field") == "format");
    CHECK(post(c, "/traverse", {{"label", 0}, {"layer", 2}, {"dim", 0}}, 400).at("field") == "layer");
    CHECK(post(c, "/traverse", {{"label", 0}, {"layer", 0}, {"dim", 5}}, 400).at("field") == "dim");
    CHECK(post(c, "/traverse", {{"label", 0}, {"layer", 0}, {"dim", 0}, {"steps", 1}}, 400).at("field") == "steps");
    const Json bad_latent = {{"layers", {{0.0}, {0.0, 0.0}}}, {"base_noise", {0.0}}};
    CHECK(post(c, "/generate", {{"label", 0}, {"latents", {bad_latent}}}, 400).at("field").get<std::string>().starts_with(
        "latents[0]"));
    const auto res = c.Post("/generate", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(Json::parse(res->body).at("checkpoint") == hash);
  }

  SUBCASE("CORS headers and preflight") {
    const auto res = c.Get("/model/meta");
    REQUIRE(res);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
    const auto pre = c.Options("/generate");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  }
}

TEST_CASE("service without a model answers 503") {
  Running server(GenerationModel{}, false);
  httplib::Client c = server.client();
  const auto res = c.Get("/model/meta");
  REQUIRE(res);
  CHECK(res->status == 503);
  CHECK(Json::parse(res->body).at("error") == "no model loaded");
  CHECK(post(c, "/generate", {{"label", 0}}, 503).contains("error"));
  CHECK(post(c, "/traverse", {{"label", 0}, {"layer", 0}, {"dim", 0}}, 503).contains("error"));
  CHECK_FALSE(res->has_header("Access-Control-Allow-Origin"));
}

TEST_CASE("service loads checkpoints from disk") {
  testing::TempDir dir;
  save_gan_state(tiny_gan(), dir / "g.ckpt");
  const GenerationModel m = GenerationModel::load(dir / "g.ckpt");
  CHECK(m.loaded());
  CHECK(m.hash() == tiny_gan().generator_hash());
  CHECK(m.generate(R"({"label": 0, "seed": 3})").body == GenerationModel(tiny_gan()).generate(R"({"label": 0, "seed": 3})").body);
  CHECK_THROWS_AS(GenerationModel::load(dir / "missing.ckpt"), CheckpointError);
}
