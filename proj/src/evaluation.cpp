#include "vlpd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vlpd/error.hpp"

namespace vlpd {

bool SubsetSpec::contains(const BoundingBox& gt) const {
  const double v = gt.visible_ratio.value_or(-1.0);
  return gt.h >= h_min && gt.h <= h_max && v >= v_min && v <= v_max;
}

SubsetSpec SubsetSpec::reasonable() { return {"Reasonable", 50.0, INFINITY, 0.65, 1.0}; }
SubsetSpec SubsetSpec::small() { return {"Small", 50.0, 75.0, 0.65, 1.0}; }
SubsetSpec SubsetSpec::heavy_occlusion() { return {"HO", 50.0, INFINITY, 0.2, 0.65}; }
SubsetSpec SubsetSpec::reasonable_plus_ho() { return {"R+HO", 50.0, INFINITY, 0.2, 1.0}; }
SubsetSpec SubsetSpec::heavy() { return {"Heavy", 50.0, INFINITY, 0.0, 0.65}; }

std::vector<SubsetSpec> SubsetSpec::predefined() {
  return {reasonable(), small(), heavy_occlusion(), reasonable_plus_ho(), heavy()};
}

SubsetSpec SubsetSpec::by_name(const std::string& name) {
  for (auto& s : predefined()) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("unknown subset '" + name + "' (expected Reasonable, Small, HO, R+HO or Heavy)");
}

SubsetPartition filter_subset(const std::vector<BoundingBox>& gts, const SubsetSpec& spec) {
  SubsetPartition out;
  for (const auto& g : gts) {
    if (!g.visible_ratio) throw AnnotationError("ground-truth box without visible_ratio");
    if (!g.ignore && spec.contains(g)) {
      out.evaluated.push_back(g);
    } else {
      BoundingBox ig = g;
      ig.ignore = true;
      out.ignored.push_back(ig);
    }
  }
  return out;
}

MatchResult match_detections(const std::vector<BoundingBox>& dets, const std::vector<BoundingBox>& gts,
                             const std::vector<BoundingBox>& ignores, double iou_threshold) {
  MatchResult r{std::vector<MatchLabel>(dets.size(), MatchLabel::kFalsePositive),
                std::vector<bool>(gts.size(), false)};
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score.value_or(0.0) > dets[b].score.value_or(0.0);
  });
  for (std::size_t di : order) {
    double best = iou_threshold;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double o = iou(dets[di], gts[g]);
      if (o >= best && (!best_gt || o > best)) {
        best = o;
        best_gt = g;
      }
    }
    if (best_gt) {
      r.gt_matched[*best_gt] = true;
      r.labels[di] = MatchLabel::kTruePositive;
      continue;
    }
    for (const auto& ig : ignores) {
      if (iou(dets[di], ig) >= iou_threshold) {
        r.labels[di] = MatchLabel::kIgnored;
        break;
      }
    }
  }
  return r;
}

std::array<double, 9> fppi_reference_points() {
  std::array<double, 9> refs{};
  for (int i = 0; i < 9; ++i) refs[std::size_t(i)] = std::pow(10.0, -2.0 + 2.0 * i / 8.0);
  return refs;
}

SubsetEvaluation evaluate_subset(const BoxesByImage& dets, const BoxesByImage& gts, const SubsetSpec& spec,
                                 double iou_threshold) {
  std::set<std::string> images;
  for (const auto& [id, _] : gts) images.insert(id);
  for (const auto& [id, _] : dets) images.insert(id);

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> scored;
  std::size_t n_gt = 0;
  static const std::vector<BoundingBox> kNone;
  for (const auto& id : images) {
    const auto git = gts.find(id);
    const auto dit = dets.find(id);
    const auto& g = git == gts.end() ? kNone : git->second;
    const auto& d = dit == dets.end() ? kNone : dit->second;
    const SubsetPartition part = filter_subset(g, spec);
    n_gt += part.evaluated.size();
    const MatchResult m = match_detections(d, part.evaluated, part.ignored, iou_threshold);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (m.labels[i] == MatchLabel::kIgnored) continue;
      scored.push_back({d[i].score.value_or(0.0), m.labels[i] == MatchLabel::kTruePositive});
    }
  }
  if (n_gt == 0) throw UndefinedMetricError(spec.name);

  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  SubsetEvaluation ev;
  ev.subset = spec.name;
  ev.num_images = images.size();
  ev.num_gt = n_gt;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size();) {
    const double s = scored[i].score;
    // All detections sharing a score enter at the same threshold.
    for (; i < scored.size() && scored[i].score == s; ++i) (scored[i].tp ? tp : fp) += 1;
    CurvePoint p;
    p.score_threshold = s;
    p.tp = tp;
    p.fp = fp;
    p.fn = n_gt - tp;
    p.fppi = double(fp) / double(images.size());
    p.miss_rate = 1.0 - double(tp) / double(n_gt);
    ev.curve.push_back(p);
  }

  ev.reference_fppi = fppi_reference_points();
  double log_sum = 0.0;
  for (std::size_t r = 0; r < 9; ++r) {
    const double ref = ev.reference_fppi[r];
    double mr = 1.0;
    for (const auto& p : ev.curve) {
      if (p.fppi <= ref * (1.0 + 1e-12)) {
        mr = p.miss_rate;
      } else {
        break;
      }
    }
    ev.reference_miss_rate[r] = mr;
    log_sum += std::log(std::max(mr, kMissRateFloor));
  }
  ev.mr2 = std::exp(log_sum / 9.0);
  return ev;
}

double log_average_miss_rate(const BoxesByImage& dets, const BoxesByImage& gts, const SubsetSpec& spec) {
  return evaluate_subset(dets, gts, spec).mr2;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

BoxesByImage read_box_file(const std::string& path, bool is_gt) {
  BoxesByImage out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string id;
    BoundingBox b;
    double last = 0.0;
    if (!(is >> id >> b.x >> b.y >> b.w >> b.h >> last)) {
      throw AnnotationError(path + ":" + std::to_string(lineno) + ": expected 'image_id x y w h " +
                            (is_gt ? "visible_ratio'" : "score'"));
    }
    if (is_gt) {
      b.visible_ratio = last;
    } else {
      b.score = last;
    }
    if (!b.valid()) throw AnnotationError(path + ":" + std::to_string(lineno) + ": invalid box");
    out[id].push_back(b);
  }
  return out;
}

void write_box_file(const std::string& path, const BoxesByImage& boxes, bool is_gt) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  char buf[256];
  for (const auto& [id, list] : boxes) {
    for (const auto& b : list) {
      const double last = is_gt ? b.visible_ratio.value_or(1.0) : b.score.value_or(0.0);
      std::snprintf(buf, sizeof buf, "%s %.6f %.6f %.6f %.6f %.6f\n", id.c_str(), b.x, b.y, b.w, b.h, last);
      out << buf;
    }
  }
}

}  // namespace

BoxesByImage read_ground_truth_file(const std::string& path) { return read_box_file(path, true); }
void write_ground_truth_file(const std::string& path, const BoxesByImage& gts) { write_box_file(path, gts, true); }
BoxesByImage read_detection_file(const std::string& path) { return read_box_file(path, false); }
void write_detection_file(const std::string& path, const BoxesByImage& dets) { write_box_file(path, dets, false); }

std::string evaluation_report_json(const std::vector<SubsetEvaluation>& evals) {
  nlohmann::json root;
  root["subsets"] = nlohmann::json::array();
  for (const auto& e : evals) {
    nlohmann::json s;
    s["name"] = e.subset;
    s["mr2"] = e.mr2;
    s["num_images"] = e.num_images;
    s["num_gt"] = e.num_gt;
    s["reference_fppi"] = e.reference_fppi;
    s["reference_miss_rate"] = e.reference_miss_rate;
    auto curve = nlohmann::json::array();
    for (const auto& p : e.curve) {
      curve.push_back({{"threshold", p.score_threshold},
                       {"fppi", p.fppi},
                       {"miss_rate", p.miss_rate},
                       {"tp", p.tp},
                       {"fp", p.fp},
                       {"fn", p.fn}});
    }
    s["curve"] = std::move(curve);
    root["subsets"].push_back(std::move(s));
  }
  return root.dump(2);
}

std::vector<SubsetEvaluation> parse_evaluation_report(const std::string& json_text) {
  std::vector<SubsetEvaluation> out;
  try {
    const auto root = nlohmann::json::parse(json_text);
    for (const auto& s : root.at("subsets")) {
      SubsetEvaluation e;
      e.subset = s.at("name").get<std::string>();
      e.mr2 = s.at("mr2").get<double>();
      e.num_images = s.at("num_images").get<std::size_t>();
      e.num_gt = s.at("num_gt").get<std::size_t>();
      e.reference_fppi = s.at("reference_fppi").get<std::array<double, 9>>();
      e.reference_miss_rate = s.at("reference_miss_rate").get<std::array<double, 9>>();
      for (const auto& p : s.at("curve")) {
        CurvePoint c;
        c.score_threshold = p.at("threshold").get<double>();
        c.fppi = p.at("fppi").get<double>();
        c.miss_rate = p.at("miss_rate").get<double>();
        c.tp = p.at("tp").get<std::size_t>();
        c.fp = p.at("fp").get<std::size_t>();
        c.fn = p.at("fn").get<std::size_t>();
        e.curve.push_back(c);
      }
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("report", ex.what());
  }
  return out;
}

}  // namespace vlpd
