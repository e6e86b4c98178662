#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "cases.hpp"
#include "oracles.hpp"
#include "vlpd/detection.hpp"

using namespace vlpd;

using namespace cases;

TEST_CASE("targets: centered box puts a unit peak on its cell") {
  BoundingBox b{40 - 10.25, 20 - 25, 20.5, 50};  // center (40, 20) -> cell (10, 5), offset 0
  const auto t = build_targets<double>({b}, 12, 16, 4);
  CHECK(t.center(5, 10) == 1.0);
  CHECK(t.positives() == 1);
  CHECK(t.pos_mask[5 * 16 + 10] == 1);
  CHECK(t.scale(5, 10) == doctest::Approx(std::log(50.0 / 4)));
  CHECK(t.offset(5, 10, 0) == 0.0);
  CHECK(t.offset(5, 10, 1) == 0.0);
  for (double v : t.center.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  BoundingBox mid{38 - 10.25, 18 - 25, 20.5, 50};  // center mid-cell
  const auto tm = build_targets<double>({mid}, 12, 16, 4);
  CHECK(tm.offset(4, 9, 0) == 0.5);
  CHECK(tm.offset(4, 9, 1) == 0.5);
}

TEST_CASE("targets: empty, duplicate and tiny boxes") {
  const auto e = build_targets<double>({}, 6, 8, 4);
  CHECK(e.positives() == 0);
  CHECK(e.gaussian_support() == 0);
  for (double v : e.center.values()) CHECK(v == 0.0);
  const BoundingBox b{10, 2, 8.2, 20};
  const auto one = build_targets<double>({b}, 6, 8, 4), two = build_targets<double>({b, b}, 6, 8, 4);
  CHECK(one.center == two.center);
  CHECK(one.scale == two.scale);
  CHECK(one.offset == two.offset);
  const auto tiny = build_targets<double>({BoundingBox{5, 5, 1, 2}}, 6, 8, 4);
  CHECK(tiny.positives() == 1);
  CHECK_THROWS_AS(build_targets<double>({BoundingBox{100, 5, 4, 10}}, 6, 8, 4), InvalidArgument);
}

TEST_CASE("detection loss: perfect and empty predictions give zero") {
  Rng rng(31);
  const auto boxes = fixtures::random_layout(rng, 6, 8, 4, 2);
  const auto t = build_targets<double>(boxes, 6, 8, 4);
  HeadOutputs<double> p{t.center, t.scale, t.offset};
  for (std::size_t i = 0; i < t.center.size(); ++i) {
    p.center_logits[i] = t.pos_mask[i] ? INFINITY : -INFINITY;
  }
  const auto l = detection_loss(p, t);
  CHECK(l.total == 0.0);
  CHECK(l.center == 0.0);

  const auto none = build_targets<double>({}, 6, 8, 4);
  HeadOutputs<double> z{Array<double>({6, 8}, -INFINITY), Array<double>({6, 8}), Array<double>({6, 8, 2})};
  CHECK(detection_loss(z, none).total == 0.0);
  HeadOutputs<double> bad{Array<double>({6, 7}), Array<double>({6, 8}), Array<double>({6, 8, 2})};
  CHECK_THROWS_AS(detection_loss(bad, none), ShapeError);
}

TEST_CASE("detection loss matches the loop oracle and is non-negative") {
  Rng rng(32);
  for (int k = 0; k < 20; ++k) {
    const auto c = random_det_case(rng);
    const auto got = detection_loss(c.p, c.t);
    const auto want = oracle::detection(c.p.center_logits, c.p.scale_pred, c.p.offset_pred, c.t.center, c.t.scale,
                                        c.t.offset, c.t.pos_mask);
    CHECK(got.total >= 0.0);
    CHECK(got.total == doctest::Approx(want.total).epsilon(1e-6));
    CHECK(got.center == doctest::Approx(want.center).epsilon(1e-6));
    CHECK(got.scale == doctest::Approx(want.scale).epsilon(1e-6));
    CHECK(got.offset == doctest::Approx(want.offset).epsilon(1e-6));
  }
}

TEST_CASE("detection loss gradient matches finite differences") {
  Rng rng(33);
  for (int k = 0; k < 20; ++k) {
    auto c = random_det_case(rng);
    HeadOutputs<double> g;
    detection_loss_with_grad(c.p, c.t, g);
    CHECK(oracle::max_rel_err(flat(g.center_logits), oracle::numeric_grad(c.p.center_logits, [&] {
                                return det_oracle_loss(c);
                              }), kFdFloor) <= 1e-4);
    CHECK(oracle::max_rel_err(flat(g.scale_pred),
                              oracle::numeric_grad(c.p.scale_pred, [&] { return det_oracle_loss(c); }), kFdFloor) <= 1e-4);
    CHECK(oracle::max_rel_err(flat(g.offset_pred),
                              oracle::numeric_grad(c.p.offset_pred, [&] { return det_oracle_loss(c); }), kFdFloor) <= 1e-4);
  }
}

TEST_CASE("detection head shapes, determinism and channel sensitivity") {
  DetectionHead<double> head(16, 8, 5);
  Rng rng(34);
  const auto x = oracle::random_array(rng, {16, 6, 8});
  const auto a = head.forward(x), b = head.forward(x);
  CHECK(a.center_logits.dims() == Dims{6, 8});
  CHECK(a.scale_pred.dims() == Dims{6, 8});
  CHECK(a.offset_pred.dims() == Dims{6, 8, 2});
  CHECK(a.center_logits == b.center_logits);
  auto x2 = x;
  for (std::size_t p = 0; p < 48; ++p) x2[12 * 48 + p] += 0.5;
  const auto c = head.forward(x2);
  CHECK(max_abs_diff(a.center_logits, c.center_logits) + max_abs_diff(a.scale_pred, c.scale_pred) +
            max_abs_diff(a.offset_pred, c.offset_pred) >
        0.0);
  CHECK_THROWS_AS(head.forward(oracle::random_array(rng, {15, 6, 8})), ShapeError);
}

TEST_CASE("detection head backward matches finite differences") {
  DetectionHead<double> head(5, 4, 9);
  Rng rng(35);
  auto x = oracle::random_array(rng, {5, 4, 5});
  const auto wc = oracle::random_array(rng, {4, 5}), ws = oracle::random_array(rng, {4, 5}),
             wo = oracle::random_array(rng, {4, 5, 2});
  auto f = [&] {
    const auto o = head.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < wc.size(); ++i) s += o.center_logits[i] * wc[i] + o.scale_pred[i] * ws[i];
    for (std::size_t i = 0; i < wo.size(); ++i) s += o.offset_pred[i] * wo[i];
    return s;
  };
  typename DetectionHead<double>::Trace tr;
  head.forward(x, &tr);
  for (auto* p : head.parameters()) p->zero_grad();
  const auto dx = head.backward(tr, HeadOutputs<double>{wc, ws, wo});
  CHECK(oracle::max_rel_err(flat(dx), oracle::numeric_grad(x, f)) <= 1e-4);
  for (auto* p : head.parameters()) {
    const auto analytic = flat(p->grad);
    CHECK(oracle::max_rel_err(analytic, oracle::numeric_grad(p->value, f)) <= 1e-4);
  }
}

TEST_CASE("decode: height and width rule, threshold, roundtrip example") {
  HeadOutputs<double> o{Array<double>({6, 8}, -10.0), Array<double>({6, 8}), Array<double>({6, 8, 2}, 0.5)};
  CHECK(decode_boxes(o, 0.5, 4, 0.41).empty());
  o.center_logits(2, 3) = 5.0;
  o.scale_pred(2, 3) = std::log(50.0 / 4);
  const auto boxes = decode_boxes(o, 0.5, 4, 0.41);
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].h == doctest::Approx(50.0));
  CHECK(boxes[0].w == doctest::Approx(20.5));
  CHECK(boxes[0].center_x() == doctest::Approx(14.0));
  CHECK(boxes[0].center_y() == doctest::Approx(10.0));

  const BoundingBox b{40 - 10.25, 20 - 25, 20.5, 50};
  const auto st = fixtures::encode_decode({b}, 12, 16, 4);
  CHECK(st.recovered == 1);
  CHECK(st.worst_center_err <= 2.0);
  CHECK(st.worst_height_rel_err <= 0.01);
}

TEST_CASE("encode/decode roundtrip on random layouts") {
  Rng rng(36);
  for (int k = 0; k < 100; ++k) {
    const auto boxes = fixtures::random_layout(rng, 24, 32, 4, 4);
    const auto st = fixtures::encode_decode(boxes, 24, 32, 4);
    CHECK(st.recovered == st.boxes);
    CHECK(st.worst_center_err <= 2.0);
    CHECK(st.worst_height_rel_err <= 1e-3);
    CHECK(st.worst_width_rule_err <= 1e-12);
  }
}

TEST_CASE("nms examples") {
  BoundingBox a{0, 0, 10, 20};
  a.score = 0.9;
  CHECK(nms({a}).size() == 1);
  BoundingBox b = a;
  b.score = 0.8;
  const auto kept = nms({b, a});
  REQUIRE(kept.size() == 1);
  CHECK(*kept[0].score == 0.9);
}

TEST_CASE("nms: hand-placed triple and random sets agree with the exhaustive oracle") {
  // Pairwise ious: (0,1) = 0.6, (0,2) ~ 0.2, (1,2) ~ 0.1.
  BoundingBox b0{0, 0, 10, 10}, b1{2.5, 0, 10, 10}, b2{0, 6.6667, 10, 10};
  b0.score = 0.9;
  b1.score = 0.8;
  b2.score = 0.7;
  CHECK(iou(b0, b1) == doctest::Approx(0.6));
  CHECK(iou(b0, b2) == doctest::Approx(0.2).epsilon(1e-3));
  const std::vector<BoundingBox> three{b0, b1, b2};
  const auto kept = nms(three, 0.5);
  const auto want = oracle::nms_exhaustive(three, 0.5);
  REQUIRE(kept.size() == want.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].x == three[want[i]].x);

  Rng rng(37);
  for (int t = 0; t < 200; ++t) {
    std::vector<BoundingBox> boxes;
    const std::size_t n = std::size_t(rng.integer(1, 9));
    for (std::size_t i = 0; i < n; ++i) {
      BoundingBox b{double(rng.integer(0, 20)), double(rng.integer(0, 20)), double(rng.integer(5, 15)),
                    double(rng.integer(5, 15))};
      b.score = double(rng.integer(1, 4)) / 4.0;  // frequent ties
      boxes.push_back(b);
    }
    const auto got = nms(boxes, 0.5);
    const auto idx = oracle::nms_exhaustive(boxes, 0.5);
    REQUIRE(got.size() == idx.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].x == boxes[idx[i]].x);
      CHECK(got[i].y == boxes[idx[i]].y);
      CHECK(*got[i].score == *boxes[idx[i]].score);
    }
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(iou(got[i], got[j]) < 0.5);
  }
}

TEST_CASE("detection line format") {
  BoundingBox b{1.5, 2.25, 3, 4};
  b.score = 0.125;
  std::ostringstream os;
  write_detection_line(os, "img7", b);
  CHECK(os.str() == "img7 1.500000 2.250000 3.000000 4.000000 0.125000\n");
}
