#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <thread>

#include "nanolens/service.hpp"
#include "nanolens/synthetic.hpp"
#include "test_support.hpp"

namespace nanolens {
namespace {

using test::TempDir;
namespace fs = std::filesystem;

ModelSpec<float> small_cae() {
  AutoencoderConfig c;
  c.input_size = 16;
  c.channel_schedule = {4, 3};
  c.seed = 3;
  return build_autoencoder<float>(c);
}

ModelSpec<float> small_classifier() {
  ClassifierConfig c;
  c.input_size = 16;
  c.conv_channels = {4, 4};
  c.hidden_units = 8;
  c.seed = 4;
  return build_classifier<float>(c);
}

std::vector<std::uint8_t> sample_png(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  const auto img = synthetic::stripes(24, rng);
  return encode_png(quantize(img.pixels, img.width, img.height));
}

std::string as_string(const std::vector<std::uint8_t>& b) { return std::string(b.begin(), b.end()); }
std::vector<std::uint8_t> as_bytes(const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); }

/// A running service over its own scratch checkpoint and store directories.
class Running {
 public:
  explicit Running(const fs::path& ckpt_dir, const fs::path& store, std::size_t max_upload = 32u << 20,
                   std::optional<fs::path> static_dir = std::nullopt) {
    ServiceConfig cfg;
    cfg.ckpt_dir = ckpt_dir;
    cfg.store_dir = store;
    cfg.workers = 2;
    cfg.max_upload_bytes = max_upload;
    cfg.static_dir = static_dir;
    service_ = std::make_unique<Service>(cfg);
    port_ = service_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { service_->serve(); });
    for (int i = 0; i < 200 && !service_->running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~Running() {
    service_->stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

 private:
  std::unique_ptr<Service> service_;
  int port_ = 0;
  std::thread thread_;
};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::create_directories(dir_ / "ckpts");
    save_checkpoint(small_cae(), dir_ / "ckpts" / "cae.ckpt");
    save_checkpoint(small_classifier(), dir_ / "ckpts" / "cls.ckpt");
    auto broken = serialize_checkpoint(small_cae());
    broken[broken.size() / 2] ^= 0x10;
    write_file_atomic(dir_ / "ckpts" / "broken.ckpt", broken);
    write_file_atomic(dir_ / "ckpts" / "README.txt", std::string_view("not a checkpoint, ignored"));
  }

  std::string upload(httplib::Client& c, const std::vector<std::uint8_t>& bytes) {
    auto r = c.Post("/api/images", as_string(bytes), "image/png");
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, 201);
    return json::parse(r->body).at("image_id").get<std::string>();
  }

  static json lens(httplib::Client& c, const std::string& model, const std::string& image, json depth, int* status) {
    const json body = {{"model_id", model}, {"image_id", image}, {"depth", depth}};
    auto r = c.Post("/api/lens", body.dump(), "application/json");
    EXPECT_TRUE(r);
    *status = r->status;
    return json::parse(r->body);
  }

  static json wait_job(httplib::Client& c, const std::string& id) {
    for (int i = 0; i < 6000; ++i) {
      auto r = c.Get("/api/jobs/" + id);
      EXPECT_TRUE(r);
      EXPECT_EQ(r->status, 200);
      json j = json::parse(r->body);
      if (j["state"] == "done" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ADD_FAILURE() << "job " << id << " did not finish";
    return {};
  }

  static std::string artifact(httplib::Client& c, const std::string& id, const std::string& type) {
    auto r = c.Get("/api/artifacts/" + id);
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), type);
    return r->body;
  }

  TempDir dir_{"service"};
};

TEST_F(ServiceTest, EmptyCheckpointDirectoryListsNothing) {
  fs::create_directories(dir_ / "empty");
  Running s(dir_ / "empty", dir_ / "store");
  auto c = s.client();
  auto r = c.Get("/api/models");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body), json::array());
  EXPECT_EQ(json::parse(c.Get("/api/models/invalid")->body), json::array());
  EXPECT_EQ(json::parse(c.Get("/api/health")->body)["status"], "ok");
}

TEST_F(ServiceTest, MissingCheckpointDirectoryIsRejected) {
  ServiceConfig cfg;
  cfg.ckpt_dir = dir_ / "nope";
  cfg.store_dir = dir_ / "store";
  EXPECT_THROW(Service{cfg}, IoError);
}

TEST_F(ServiceTest, CatalogMatchesCheckpointsAndListsCorruptOnes) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const json models = json::parse(c.Get("/api/models")->body);
  ASSERT_EQ(models.size(), 2u);
  for (const auto& entry : models) {
    const auto m = load_checkpoint(dir_ / "ckpts" / (entry["id"].get<std::string>() + ".ckpt"));
    const auto shapes = propagate_shapes(m);
    ASSERT_EQ(entry["layers"].size(), m.layers.size());
    EXPECT_EQ(entry["encoder_len"], m.encoder_len);
    EXPECT_EQ(entry["max_depth"], m.max_depth());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto& l = entry["layers"][i];
      EXPECT_EQ(l["index"], i);
      EXPECT_EQ(l["kind"], std::string(to_string(m.layers[i].kind)));
      EXPECT_EQ(l["output_shape"], json::array({shapes[i].c, shapes[i].h, shapes[i].w}));
      EXPECT_EQ(l["filters"], m.layers[i].kind == LayerKind::kConv2D ? m.layers[i].units : 0);
    }
  }
  EXPECT_EQ(models[0]["id"], "cae");
  EXPECT_EQ(models[1]["id"], "cls");
  const json invalid = json::parse(c.Get("/api/models/invalid")->body);
  ASSERT_EQ(invalid.size(), 1u);
  EXPECT_EQ(invalid[0]["file"], "broken.ckpt");
  EXPECT_NE(invalid[0]["reason"].get<std::string>().find("CRC"), std::string::npos) << invalid[0]["reason"];
}

TEST_F(ServiceTest, UploadsAreContentAddressed) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const auto png = sample_png();
  const std::string id = upload(c, png);
  EXPECT_EQ(id, sha256_hex(png));
  EXPECT_EQ(upload(c, png), id);
  EXPECT_NE(upload(c, sample_png(2)), id);

  httplib::MultipartFormDataItems items = {{"image", as_string(png), "a.png", "image/png"}};
  auto r = c.Post("/api/images", items);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  EXPECT_EQ(json::parse(r->body)["image_id"], id);

  r = c.Post("/api/images", "just some text", "text/plain");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  const json err = json::parse(r->body);
  EXPECT_EQ(err["code"], "undecodable_image");
  EXPECT_TRUE(err.contains("message"));
  EXPECT_TRUE(err.contains("details"));
}

TEST_F(ServiceTest, OversizeUploadIs413) {
  Running s(dir_ / "ckpts", dir_ / "store", 4096);
  auto c = s.client();
  auto r = c.Post("/api/images", std::string(8192, 'x'), "image/png");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 413);
  EXPECT_EQ(json::parse(r->body)["code"], "payload_too_large");
  EXPECT_EQ(upload(c, sample_png()), sha256_hex(sample_png()));  // small files still pass
}

TEST_F(ServiceTest, LensDepthSweepGivesOneDistinctGridPerDepth) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const auto png = sample_png();
  const std::string image = upload(c, png);
  const auto model = small_cae();
  const auto x = preprocess(png, 16);
  std::set<std::string> seen;
  for (std::size_t d = 1; d <= model.encoder_len; ++d) {
    int status = 0;
    const json r = lens(c, "cae", image, d, &status);
    ASSERT_EQ(status, 200) << r;
    EXPECT_EQ(r["layer"], d - 1);
    const std::string bytes = artifact(c, r["artifact_id"], "image/png");
    seen.insert(bytes);
    // matches the library rendering exactly
    const auto grid = extract_activations(model, d, x);
    EXPECT_EQ(as_bytes(bytes), encode_png(grid.image));
    EXPECT_EQ(artifact(c, r["csv_artifact_id"], "text/csv"), activation_csv(grid));
    EXPECT_EQ(r["tiles"].size(), grid.shape.c);
    EXPECT_EQ(r["layout"]["cols"], grid.layout.cols);
    const auto decoded = decode_png8(as_bytes(bytes));
    EXPECT_EQ(decoded.width, grid.layout.width());
    EXPECT_EQ(decoded.height, grid.layout.height());
  }
  EXPECT_EQ(seen.size(), model.encoder_len);
}

TEST_F(ServiceTest, LensRejectsBadDepthWithRange) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const std::string image = upload(c, sample_png());
  for (json depth : {json(0), json(5), json(-1), json("2"), json(1.5)}) {
    int status = 0;
    const json r = lens(c, "cae", image, depth, &status);
    EXPECT_EQ(status, 422) << depth;
    EXPECT_EQ(r["code"], "invalid_depth");
    EXPECT_EQ(r["details"]["valid_range"], json::array({1, 4}));
    EXPECT_NE(r["message"].get<std::string>().find("[1, 4]"), std::string::npos) << r;
  }
  int status = 0;
  lens(c, "cls", image, 7, &status);  // classifiers accept every layer
  EXPECT_EQ(status, 200);
  lens(c, "cls", image, 8, &status);
  EXPECT_EQ(status, 422);
}

TEST_F(ServiceTest, LensUnknownIdsAre404AndBadJsonIs400) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const std::string image = upload(c, sample_png());
  int status = 0;
  EXPECT_EQ(lens(c, "nope", image, 1, &status)["code"], "unknown_model");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(lens(c, "broken", image, 1, &status)["code"], "unknown_model");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(lens(c, "cae", std::string(64, 'a'), 1, &status)["code"], "unknown_image");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(lens(c, "cae", "../../etc/passwd", 1, &status)["code"], "unknown_image");
  EXPECT_EQ(status, 404);
  auto r = c.Post("/api/lens", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body)["code"], "bad_request");
  r = c.Post("/api/lens", "[1,2]", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST_F(ServiceTest, LensIsPureAcrossRepeatsAndRestarts) {
  const auto png = sample_png();
  std::string first_id, first_bytes;
  {
    Running s(dir_ / "ckpts", dir_ / "store_a");
    auto c = s.client();
    const std::string image = upload(c, png);
    int status = 0;
    const json a = lens(c, "cls", image, 3, &status);
    const json b = lens(c, "cls", image, 3, &status);
    EXPECT_EQ(a, b);
    first_id = a["artifact_id"];
    first_bytes = artifact(c, first_id, "image/png");
  }
  Running s(dir_ / "ckpts", dir_ / "store_b");
  auto c = s.client();
  int status = 0;
  const json again = lens(c, "cls", upload(c, png), 3, &status);
  EXPECT_EQ(again["artifact_id"], first_id);
  EXPECT_EQ(artifact(c, first_id, "image/png"), first_bytes);
}

TEST_F(ServiceTest, ConcurrentLensRequestsMatchSerial) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const std::string image = upload(c, sample_png());
  std::vector<json> serial;
  for (std::size_t d = 1; d <= 4; ++d) {
    int status = 0;
    serial.push_back(lens(c, "cae", image, d, &status));
  }
  std::vector<std::vector<json>> parallel(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      auto cc = s.client();
      for (std::size_t d = 1; d <= 4; ++d) {
        int status = 0;
        parallel[t].push_back(lens(cc, "cae", image, d, &status));
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& p : parallel) EXPECT_EQ(p, serial);
}

TEST_F(ServiceTest, FilterJobLifecycle) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const json req = {{"model_id", "cls"}, {"layer", 2}, {"filter", 1}, {"steps", 8}, {"seed", 5}};
  auto r = c.Post("/api/filters", req.dump(), "application/json");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 202) << r->body;
  const std::string id = json::parse(r->body)["job_id"];
  const json done = wait_job(c, id);
  ASSERT_EQ(done["state"], "done") << done;
  EXPECT_EQ(done["kind"], "filter");
  EXPECT_EQ(done["request"], req);
  ASSERT_EQ(done["artifacts"].size(), 1u);
  const std::string png = artifact(c, done["artifacts"][0]["id"], "image/png");
  GradientAscentConfig cfg;
  cfg.steps = 8;
  cfg.seed = 5;
  const auto v = visualize_filter(small_classifier(), 2, 1, filter_seed_config(cfg, 1));
  EXPECT_EQ(as_bytes(png), encode_png(deprocess(v.image)));
  EXPECT_EQ(done["results"][0]["score"], v.score);
  // polling a finished job changes nothing
  EXPECT_EQ(json::parse(c.Get("/api/jobs/" + id)->body), done);
}

TEST_F(ServiceTest, AtlasJobsWithTheSameSeedAgree) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  const json req = {{"model_id", "cae"}, {"layer", 0}, {"steps", 5}, {"seed", 2}, {"init", "gray_noise"}};
  std::vector<std::string> ids;
  for (int i = 0; i < 2; ++i) ids.push_back(json::parse(c.Post("/api/filters", req.dump(), "application/json")->body)["job_id"]);
  EXPECT_NE(ids[0], ids[1]);
  const json a = wait_job(c, ids[0]);
  const json b = wait_job(c, ids[1]);
  ASSERT_EQ(a["state"], "done");
  EXPECT_EQ(a["kind"], "atlas");
  EXPECT_EQ(a["artifacts"], b["artifacts"]);
  ASSERT_EQ(a["artifacts"].size(), 2u);
  const auto grid = decode_png8(as_bytes(artifact(c, a["artifacts"][0]["id"], "image/png")));
  const auto layout = GridLayout::make(4, 16, 16);
  EXPECT_EQ(grid.width, layout.width());
  EXPECT_EQ(grid.height, layout.height());
  const std::string csv = artifact(c, a["artifacts"][1]["id"], "text/csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST_F(ServiceTest, FilterRequestValidation) {
  Running s(dir_ / "ckpts", dir_ / "store");
  auto c = s.client();
  auto post = [&](const json& body, int expect, const std::string& code) {
    auto r = c.Post("/api/filters", body.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, expect) << body << " -> " << r->body;
    EXPECT_EQ(json::parse(r->body)["code"], code) << body;
  };
  post({{"model_id", "ghost"}, {"layer", 0}}, 404, "unknown_model");
  post({{"model_id", "cls"}, {"layer", 1}}, 422, "invalid_layer");   // max-pool
  post({{"model_id", "cls"}, {"layer", 99}}, 422, "invalid_layer");
  post({{"model_id", "cls"}, {"layer", 0}, {"filter", 4}}, 422, "invalid_filter");
  post({{"model_id", "cls"}, {"layer", 0}, {"steps", 0}}, 422, "invalid_config");
  post({{"model_id", "cls"}, {"layer", 0}, {"step_size", -1}}, 422, "invalid_config");
  post({{"model_id", "cls"}, {"layer", 0}, {"init", "plasma"}}, 422, "invalid_config");
  post({{"model_id", "cls"}, {"layer", "0"}}, 422, "invalid_layer");
  EXPECT_EQ(c.Get("/api/jobs/job-404")->status, 404);
  EXPECT_EQ(c.Get("/api/artifacts/" + std::string(64, '0'))->status, 404);
  EXPECT_EQ(c.Get("/api/artifacts/xyz")->status, 404);
}

TEST_F(ServiceTest, ServesStaticAssets) {
  write_file_atomic(dir_ / "ui" / "index.html", std::string_view("<html>explorer</html>"));
  Running s(dir_ / "ckpts", dir_ / "store", 32u << 20, dir_ / "ui");
  auto c = s.client();
  auto r = c.Get("/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>explorer</html>");
  EXPECT_EQ(c.Get("/api/health")->status, 200);
}

}  // namespace
}  // namespace nanolens
