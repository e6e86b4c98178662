#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "vlpd/pipeline.hpp"
#include "vlpd/tensor_io.hpp"

using namespace vlpd;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig short_config(const testutil::TempDir& tmp, const std::string& out, int iterations) {
  RunConfig cfg;
  cfg.iterations = iterations;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-3;
  cfg.output_dir = (tmp / out).string();
  return cfg;
}

}  // namespace

TEST_CASE("combined loss") {
  RunConfig cfg;
  CHECK(combined_loss(1.0, 0.01, 10.0, cfg) == doctest::Approx(2.001).epsilon(1e-12));
  CHECK(combined_loss(0, 0, 0, cfg) == 0.0);
  cfg.lambda1 = cfg.lambda2 = 0;
  CHECK(combined_loss(0.7, 5, 9, cfg) == 0.7);
  CHECK_THROWS_AS(combined_loss(NAN, 0, 0, cfg), DivergenceError);
  try {
    combined_loss(1, 0, INFINITY, cfg);
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("l_psc") != std::string::npos);
  }
}

TEST_CASE("synthetic dataset is byte-identical on rerun") {
  testutil::TempDir tmp("pipe");
  const auto a = make_synthetic_dataset(7, 8, 96, 128, tmp / "a");
  make_synthetic_dataset(7, 8, 96, 128, tmp / "b");
  CHECK(a.records.size() == 8);
  CHECK(slurp(tmp / "a/annotations.txt") == slurp(tmp / "b/annotations.txt"));
  for (const auto& r : a.records) {
    CHECK(slurp(r.image_path) == slurp(tmp / "b/images" / r.image_path.filename()));
    const auto img = read_ppm(r.image_path);
    CHECK(img.height == 96);
    CHECK(img.width == 128);
    CHECK_FALSE(r.boxes.empty());
    for (const auto& b : r.boxes) {
      CHECK(b.visible_ratio.has_value());
      CHECK(b.w == doctest::Approx(0.41 * b.h).epsilon(0.02));
    }
  }
  const auto loaded = load_dataset(tmp / "a");
  REQUIRE(loaded.records.size() == 8);
  CHECK(loaded.records[3].boxes.size() == a.records[3].boxes.size());
  CHECK_THROWS_AS(make_synthetic_dataset(7, 0, 96, 128, tmp / "c"), InvalidArgument);
  CHECK_THROWS_AS(make_synthetic_dataset(7, 2, 96, 100, tmp / "c"), InvalidArgument);
}

TEST_CASE("half-covered pedestrian has visible ratio 0.5") {
  SceneSpec spec;
  spec.objects.push_back({ObjectRole::kPedestrian, ShapeKind::kRectangle, 40, 10, 30, 72, {20, 20, 20}});
  spec.objects.push_back({ObjectRole::kOccluder, ShapeKind::kRectangle, 40, 46, 30, 36, {200, 0, 0}});
  const auto r = render_scene(spec);
  REQUIRE(r.boxes.size() == 1);
  CHECK(std::abs(*r.boxes[0].visible_ratio - 0.5) <= 0.02);
}

TEST_CASE("reflect padding and ppm roundtrip") {
  testutil::TempDir tmp("pipe");
  RgbImage img(3, 5);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = std::uint8_t(i * 7);
  write_ppm(tmp / "x.ppm", img);
  const auto back = read_ppm(tmp / "x.ppm");
  CHECK(back.rgb == img.rgb);
  const auto p = reflect_pad(img, 4);
  CHECK(p.height == 4);
  CHECK(p.width == 8);
  CHECK(std::memcmp(p.pixel(3, 0), img.pixel(1, 0), 3) == 0);
  CHECK(std::memcmp(p.pixel(0, 5), img.pixel(0, 3), 3) == 0);
}

TEST_CASE("loss log format roundtrips") {
  testutil::TempDir tmp("pipe");
  LossRecord r{3, 1.25, 0.001, 2.5, 1.35025, 0.5, 0.25, 0.125, 17};
  {
    std::ofstream out(tmp / "log.csv");
    out << loss_log_header() << '\n' << format_loss_record(r) << '\n';
  }
  const auto back = read_loss_log(tmp / "log.csv");
  REQUIRE(back.size() == 1);
  CHECK(back[0].combined == r.combined);
  CHECK(back[0].psc_queries == 17);
}

TEST_CASE("short training run: frozen encoder, log bookkeeping, checkpoint") {
  testutil::TempDir tmp("pipe");
  const auto ds = make_synthetic_dataset(5, 4, 64, 96, tmp / "ds");
  const RunConfig cfg = short_config(tmp, "run", 12);
  const auto s = train(cfg, ds);
  CHECK(s.frozen_hash_before == s.frozen_hash_after);
  CHECK(s.trainee_encoder_hash_at_init == s.frozen_hash_before);
  const auto log = read_loss_log(std::filesystem::path(cfg.output_dir) / "loss_log.csv");
  REQUIRE(log.size() == 12);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].iteration == long(i));
    CHECK(log[i].combined ==
          doctest::Approx(log[i].l_det + cfg.lambda1 * log[i].l_vls + cfg.lambda2 * log[i].l_psc).epsilon(1e-6));
  }
  const auto det = Detector::load(s.checkpoint_dir);
  CHECK(det.iteration() == 12);
  CHECK(run_config_to_json(det.config()) == run_config_to_json(cfg));
}

TEST_CASE("ablation run still reports every loss term") {
  testutil::TempDir tmp("pipe");
  const auto ds = make_synthetic_dataset(6, 2, 64, 64, tmp / "ds");
  RunConfig cfg = short_config(tmp, "run", 6);
  cfg.lambda1 = cfg.lambda2 = 0;
  const auto s = train(cfg, ds);
  bool psc_nonzero = false;
  for (const auto& r : s.log) {
    CHECK(r.combined == r.l_det);
    psc_nonzero = psc_nonzero || r.l_psc > 0;
  }
  CHECK(psc_nonzero);
  CHECK(s.log.back().l_vls > 0.0);
}

TEST_CASE("f64 checkpoint reload reproduces forward outputs and detections bit-exactly") {
  testutil::TempDir tmp("pipe");
  const auto ds = make_synthetic_dataset(8, 2, 64, 64, tmp / "ds");
  RunConfig cfg = short_config(tmp, "run", 4);
  cfg.precision = Precision::kF64;
  const auto s = train(cfg, ds);
  const auto a = Detector::load(s.checkpoint_dir);
  const auto img = read_ppm(ds.records[0].image_path);
  const auto fa = a.forward_f64(img);

  save_checkpoint(tmp / "copy", cfg, [&] {
    VlpdNet<double> net(cfg, class_vectors_for(cfg));
    std::map<std::string, AnyArray> state;
    for (const auto& e : std::filesystem::directory_iterator(s.checkpoint_dir / "params")) {
      state.emplace(e.path().stem().string(), load_tensor_container(e.path()));
    }
    net.load_state(state);
    return net;
  }(), 4, s.frozen_hash_before);
  const auto b = Detector::load(tmp / "copy");
  const auto fb = b.forward_f64(img);
  CHECK(fa.head.center_logits == fb.head.center_logits);
  CHECK(fa.head.scale_pred == fb.head.scale_pred);
  CHECK(fa.s_bar.s == fb.s_bar.s);
  const auto da = a.detect(img, 0.01), db = b.detect(img, 0.01);
  REQUIRE(da.size() == db.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    CHECK(da[i].x == db[i].x);
    CHECK(*da[i].score == *db[i].score);
  }
}

TEST_CASE("detect: determinism, padding, clipping") {
  testutil::TempDir tmp("pipe");
  const auto ds = make_synthetic_dataset(9, 2, 64, 64, tmp / "ds");
  const auto s = train(short_config(tmp, "run", 3), ds);
  const auto det = Detector::load(s.checkpoint_dir);
  RgbImage odd(50, 70);
  Rng rng(3);
  for (auto& v : odd.rgb) v = std::uint8_t(rng.integer(0, 255));
  const auto a = det.detect(odd, 0.01), b = det.detect(odd, 0.01);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].x >= 0.0);
    CHECK(a[i].y >= 0.0);
    CHECK(a[i].x + a[i].w <= 70.0 + 1e-9);
    CHECK(a[i].y + a[i].h <= 50.0 + 1e-9);
    CHECK(a[i].w > 0.0);
    CHECK(*a[i].score >= 0.01);
  }
  RgbImage blank(64, 64);
  CHECK(det.detect(blank, 0.999999).empty());
}

TEST_CASE("cached pseudo labels match on-the-fly generation and are checked against the config") {
  testutil::TempDir tmp("pipe");
  auto ds = make_synthetic_dataset(10, 2, 64, 64, tmp / "ds");
  RunConfig cfg = short_config(tmp, "a", 3);
  cache_pseudo_labels(ds, cfg, tmp / "vls");
  const auto cached = load_tensor_as<float>(tmp / "vls" / (ds.records[0].image_id + ".vls"));
  CHECK(cached.dims() == Dims{4, 4, 9});
  const auto on_the_fly = train(cfg, ds);
  auto with_cache = ds;
  attach_pseudo_labels(with_cache, tmp / "vls");
  cfg.output_dir = (tmp / "b").string();
  const auto from_cache = train(cfg, with_cache);
  REQUIRE(on_the_fly.log.size() == from_cache.log.size());
  for (std::size_t i = 0; i < on_the_fly.log.size(); ++i) {
    CHECK(on_the_fly.log[i].combined == from_cache.log[i].combined);
  }
  cfg.seed = 99;
  CHECK_THROWS_AS(train(cfg, with_cache), ConfigError);
  CHECK_THROWS_AS(attach_pseudo_labels(ds, tmp / "nowhere"), IoError);
}

TEST_CASE("training rejects empty datasets and bad images") {
  testutil::TempDir tmp("pipe");
  CHECK_THROWS_AS(train(short_config(tmp, "x", 1), Dataset{}), InvalidArgument);
}

TEST_CASE("evaluate_detector covers every dataset image") {
  testutil::TempDir tmp("pipe");
  const auto ds = make_synthetic_dataset(12, 3, 64, 64, tmp / "ds");
  const auto s = train(short_config(tmp, "run", 2), ds);
  const auto ev = evaluate_detector(Detector::load(s.checkpoint_dir), ds, SubsetSpec::predefined(), 0.01);
  CHECK(ev.detections.size() == 3);
  CHECK_FALSE(ev.subsets.empty());
  for (const auto& e : ev.subsets) {
    CHECK(e.mr2 >= 0.0);
    CHECK(e.mr2 <= 1.0);
  }
}
