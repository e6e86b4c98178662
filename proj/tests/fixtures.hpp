#pragma once

#include <cmath>
#include <vector>

#include "vlpd/detection.hpp"
#include "vlpd/evaluation.hpp"
#include "vlpd/rng.hpp"

namespace fixtures {

using vlpd::BoundingBox;

// Up to `n` pedestrian boxes (w = 0.41 h) on an H x W stride grid whose
// center cells are at least 3 cells apart in x or y.
inline std::vector<BoundingBox> random_layout(vlpd::Rng& rng, std::size_t grid_h, std::size_t grid_w, int stride,
                                              std::size_t n) {
  std::vector<BoundingBox> out;
  for (int attempt = 0; attempt < 200 && out.size() < n; ++attempt) {
    const double h = rng.uniform(20.0, 90.0), w = 0.41 * h;
    const double cx = rng.uniform(0.0, double(grid_w * std::size_t(stride)) - 1e-6);
    const double cy = rng.uniform(0.0, double(grid_h * std::size_t(stride)) - 1e-6);
    bool clash = false;
    for (const auto& b : out) {
      const double ox = std::floor(b.center_x() / stride), oy = std::floor(b.center_y() / stride);
      if (std::abs(ox - std::floor(cx / stride)) < 3 && std::abs(oy - std::floor(cy / stride)) < 3) clash = true;
    }
    if (clash) continue;
    BoundingBox b;
    b.x = cx - w / 2;
    b.y = cy - h / 2;
    b.w = w;
    b.h = h;
    b.visible_ratio = 1.0;
    out.push_back(b);
  }
  return out;
}

// Feeds targets back as predictions: logit(G) (saturated at +-30), exact
// scale and offset.
inline vlpd::HeadOutputs<double> targets_as_predictions(const vlpd::DetectionTargets<double>& t) {
  vlpd::HeadOutputs<double> p{t.center, t.scale, t.offset};
  for (auto& v : p.center_logits.values()) {
    v = v >= 1.0 ? 30.0 : (v <= 0.0 ? -30.0 : std::log(v / (1.0 - v)));
  }
  return p;
}

struct RoundtripStats {
  std::size_t boxes = 0;
  std::size_t recovered = 0;
  double worst_center_err = 0.0;
  double worst_height_rel_err = 0.0;
  double worst_width_rule_err = 0.0;  // |w - 0.41 h| over decoded boxes
};

inline RoundtripStats encode_decode(const std::vector<BoundingBox>& boxes, std::size_t gh, std::size_t gw,
                                    int stride) {
  RoundtripStats s;
  const auto t = vlpd::build_targets<double>(boxes, gh, gw, stride);
  const auto dec = vlpd::decode_boxes(targets_as_predictions(t), 0.99, stride, 0.41);
  s.boxes = boxes.size();
  for (const auto& d : dec) s.worst_width_rule_err = std::max(s.worst_width_rule_err, std::abs(d.w - 0.41 * d.h));
  for (const auto& b : boxes) {
    double best = 1e300;
    const BoundingBox* hit = nullptr;
    for (const auto& d : dec) {
      const double err = std::hypot(d.center_x() - b.center_x(), d.center_y() - b.center_y());
      if (err < best) {
        best = err;
        hit = &d;
      }
    }
    if (!hit || best > stride / 2.0) continue;
    const double rel = std::abs(hit->h - b.h) / b.h;
    if (rel > 1e-3) continue;
    ++s.recovered;
    s.worst_center_err = std::max(s.worst_center_err, best);
    s.worst_height_rel_err = std::max(s.worst_height_rel_err, rel);
  }
  return s;
}

inline BoundingBox gt_box(double x, double y, double h, double vis = 1.0) {
  BoundingBox b{x, y, 0.41 * h, h};
  b.visible_ratio = vis;
  return b;
}

inline BoundingBox det_box(const BoundingBox& at, double score, double dx = 0.0) {
  BoundingBox b{at.x + dx, at.y, at.w, at.h};
  b.score = score;
  return b;
}

// Four images, one reasonable gt each. Score schedule, descending:
//   0.9 TP (img0), 0.8 FP (img1), 0.7 TP (img2), 0.6 FP (img3), 0.5 FP (img0).
// Curve (fppi, mr): (0, .75) (.25, .75) (.25, .5) (.5, .5) (.75, .5).
// References 1e-2 .. 10^-0.75 see fppi 0 -> mr .75 (6 points); 10^-0.5,
// 10^-0.25 and 1 see mr .5 (3 points). MR = .75^(6/9) * .5^(3/9).
struct FourImageScenario {
  vlpd::BoxesByImage gts, dets;
  double expected_mr2 = std::pow(0.75, 6.0 / 9.0) * std::pow(0.5, 3.0 / 9.0);
};

inline FourImageScenario four_image_scenario() {
  FourImageScenario s;
  for (int i = 0; i < 4; ++i) s.gts["img" + std::to_string(i)] = {gt_box(10, 10, 100)};
  const BoundingBox far{200, 10, 41, 100};
  s.dets["img0"] = {det_box(s.gts["img0"][0], 0.9), det_box(far, 0.5)};
  s.dets["img1"] = {det_box(far, 0.8)};
  s.dets["img2"] = {det_box(s.gts["img2"][0], 0.7, 2.0)};
  s.dets["img3"] = {det_box(far, 0.6)};
  return s;
}

}  // namespace fixtures
