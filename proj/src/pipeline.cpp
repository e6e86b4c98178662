#include "vlpd/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vlpd/tensor_io.hpp"

namespace vlpd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "vlpd-checkpoint-1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json read_json_file(const fs::path& p, const char* what) {
  std::ifstream in(p);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(what, e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& dir, const RunConfig& cfg, const VlpdNet<T>& net, long iteration,
                     std::uint64_t frozen_hash) {
  fs::create_directories(dir / "params");
  json params = json::array();
  for (const auto& [name, value] : net.state()) {
    const std::string file = "params/" + name + ".vt";
    save_tensor_container(value, dir / file);
    params.push_back({{"name", name}, {"file", file}});
  }
  json m;
  m["format"] = kCheckpointFormat;
  m["config"] = json::parse(run_config_to_json(cfg));
  m["iteration"] = iteration;
  m["precision"] = cfg.precision == Precision::kF64 ? "f64" : "f32";
  m["frozen_encoder_hash"] = hex64(frozen_hash);
  m["parameters"] = params;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write checkpoint manifest in '" + dir.string() + "'");
  out << m.dump(2) << '\n';
}

template void save_checkpoint(const fs::path&, const RunConfig&, const VlpdNet<float>&, long, std::uint64_t);
template void save_checkpoint(const fs::path&, const RunConfig&, const VlpdNet<double>&, long, std::uint64_t);

Detector Detector::load(const fs::path& dir) {
  const json m = read_json_file(dir / "manifest.json", "checkpoint manifest");
  if (m.value("format", "") != kCheckpointFormat) throw FormatError("checkpoint", "unknown checkpoint format");
  Detector d;
  try {
    d.cfg_ = run_config_from_json(m.at("config").dump());
    d.iteration_ = m.at("iteration").get<long>();
  } catch (const json::exception& e) {
    throw FormatError("checkpoint", e.what());
  }
  std::map<std::string, AnyArray> state;
  for (const auto& p : m.at("parameters")) {
    state.emplace(p.at("name").get<std::string>(), load_tensor_container(dir / p.at("file").get<std::string>()));
  }
  const LinguisticVectors vectors = class_vectors_for(d.cfg_);
  if (d.cfg_.precision == Precision::kF64) {
    auto net = std::make_shared<VlpdNet<double>>(d.cfg_, vectors);
    net->load_state(state);
    d.net_ = std::shared_ptr<const VlpdNet<double>>(std::move(net));
  } else {
    auto net = std::make_shared<VlpdNet<float>>(d.cfg_, vectors);
    net->load_state(state);
    d.net_ = std::shared_ptr<const VlpdNet<float>>(std::move(net));
  }
  return d;
}

std::vector<BoundingBox> Detector::detect(const RgbImage& image, double threshold) const {
  if (image.height == 0 || image.width == 0) throw InvalidArgument("empty image");
  const RgbImage padded = reflect_pad(image, kInputDivisor);
  std::vector<BoundingBox> boxes = std::visit(
      [&](const auto& net) {
        using T = typename std::decay_t<decltype(*net)>::value_type;
        const auto x = standardize<T>(padded, cfg_.image_mean, cfg_.image_std);
        return decode_boxes(net->forward(x).head, threshold, cfg_.stride, cfg_.aspect_ratio);
      },
      net_);
  boxes = nms(std::move(boxes), cfg_.nms_iou);
  std::vector<BoundingBox> out;
  const double iw = double(image.width), ih = double(image.height);
  for (auto b : boxes) {
    const double x0 = std::clamp(b.x, 0.0, iw), y0 = std::clamp(b.y, 0.0, ih);
    const double x1 = std::clamp(b.x + b.w, 0.0, iw), y1 = std::clamp(b.y + b.h, 0.0, ih);
    if (x1 <= x0 || y1 <= y0) continue;
    b.x = x0;
    b.y = y0;
    b.w = x1 - x0;
    b.h = y1 - y0;
    out.push_back(b);
  }
  return out;
}

ForwardResult<double> Detector::forward_f64(const RgbImage& image) const {
  if (const auto* p = std::get_if<std::shared_ptr<const VlpdNet<double>>>(&net_)) {
    return (*p)->forward(standardize<double>(image, cfg_.image_mean, cfg_.image_std));
  }
  const auto& net = std::get<std::shared_ptr<const VlpdNet<float>>>(net_);
  const ForwardResult<float> f = net->forward(standardize<float>(image, cfg_.image_mean, cfg_.image_std));
  ForwardResult<double> r;
  r.s_bar.s = f.s_bar.s.cast<double>();
  r.s_bar.classes = f.s_bar.classes;
  r.s_bar.zero_norm_pixels = f.s_bar.zero_norm_pixels;
  r.e = f.e.cast<double>();
  r.s_dot = f.s_dot.cast<double>();
  r.head.center_logits = f.head.center_logits.cast<double>();
  r.head.scale_pred = f.head.scale_pred.cast<double>();
  r.head.offset_pred = f.head.offset_pred.cast<double>();
  r.encoded.projected.v = f.encoded.projected.v.cast<double>();
  return r;
}

DatasetEvaluation evaluate_detector(const Detector& det, const Dataset& dataset, const std::vector<SubsetSpec>& subsets,
                                    double threshold, bool skip_undefined) {
  DatasetEvaluation out;
  BoxesByImage gts;
  for (const auto& r : dataset.records) {
    gts[r.image_id] = r.boxes;
    out.detections[r.image_id] = det.detect(read_ppm(r.image_path), threshold);
  }
  for (const auto& s : subsets) {
    try {
      out.subsets.push_back(evaluate_subset(out.detections, gts, s));
    } catch (const UndefinedMetricError&) {
      if (!skip_undefined) throw;
    }
  }
  return out;
}

}  // namespace vlpd
