#include "vlpd/vlpd.h"

#include <fstream>
#include <sstream>
#include <string>

#include "vlpd/pipeline.hpp"
#include "vlpd/plot.hpp"

struct vlpd_model {
  vlpd::Detector detector;
};

struct vlpd_boxes {
  std::vector<vlpd::BoundingBox> boxes;
};

struct vlpd_report {
  std::vector<vlpd::SubsetEvaluation> subsets;
};

namespace {

thread_local std::string g_last_error;

vlpd_status status_of(vlpd::ErrorKind k) {
  switch (k) {
    case vlpd::ErrorKind::kIo: return VLPD_ERR_IO;
    case vlpd::ErrorKind::kFormat: return VLPD_ERR_FORMAT;
    case vlpd::ErrorKind::kShape: return VLPD_ERR_SHAPE;
    case vlpd::ErrorKind::kConfig: return VLPD_ERR_CONFIG;
    case vlpd::ErrorKind::kPolicy: return VLPD_ERR_POLICY;
    case vlpd::ErrorKind::kTemplate: return VLPD_ERR_TEMPLATE;
    case vlpd::ErrorKind::kAnnotation: return VLPD_ERR_ANNOTATION;
    case vlpd::ErrorKind::kUndefinedMetric: return VLPD_ERR_UNDEFINED_METRIC;
    case vlpd::ErrorKind::kDivergence: return VLPD_ERR_DIVERGENCE;
    case vlpd::ErrorKind::kInvalidArgument: return VLPD_ERR_INVALID_ARGUMENT;
  }
  return VLPD_ERR_INTERNAL;
}

template <typename F>
vlpd_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return VLPD_OK;
  } catch (const vlpd::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return VLPD_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VLPD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return VLPD_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw vlpd::InvalidArgument(std::string(what) + " must not be null");
}

std::vector<vlpd::SubsetSpec> parse_subsets(const char* csv) {
  if (csv == nullptr || *csv == '\0') return vlpd::SubsetSpec::predefined();
  std::vector<vlpd::SubsetSpec> out;
  std::stringstream ss(csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (!name.empty()) out.push_back(vlpd::SubsetSpec::by_name(name));
  }
  if (out.empty()) throw vlpd::InvalidArgument("no subsets requested");
  return out;
}

}  // namespace

extern "C" {

const char* vlpd_last_error(void) { return g_last_error.c_str(); }

const char* vlpd_status_name(vlpd_status s) {
  switch (s) {
    case VLPD_OK: return "ok";
    case VLPD_ERR_IO: return "io error";
    case VLPD_ERR_FORMAT: return "format error";
    case VLPD_ERR_SHAPE: return "shape error";
    case VLPD_ERR_CONFIG: return "config error";
    case VLPD_ERR_POLICY: return "policy error";
    case VLPD_ERR_TEMPLATE: return "template error";
    case VLPD_ERR_ANNOTATION: return "annotation error";
    case VLPD_ERR_UNDEFINED_METRIC: return "undefined metric";
    case VLPD_ERR_DIVERGENCE: return "training diverged";
    case VLPD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VLPD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* vlpd_version(void) { return "0.1.0"; }

vlpd_status vlpd_synth(uint64_t seed, size_t n, size_t height, size_t width, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    vlpd::make_synthetic_dataset(seed, n, height, width, out_dir);
  });
}

vlpd_status vlpd_pseudolabel(const char* dataset_dir, const char* out_dir, const char* config_path) {
  return guarded([&] {
    require(dataset_dir, "dataset_dir");
    require(out_dir, "out_dir");
    const vlpd::RunConfig cfg = config_path ? vlpd::load_run_config(config_path) : vlpd::RunConfig{};
    vlpd::cache_pseudo_labels(vlpd::load_dataset(dataset_dir), cfg, out_dir);
  });
}

vlpd_status vlpd_train(const char* config_path, int deterministic, vlpd_progress_fn progress, void* user,
                       vlpd_train_summary* summary) {
  return guarded([&] {
    require(config_path, "config_path");
    const vlpd::RunConfig cfg = vlpd::load_run_config(config_path);
    if (cfg.dataset_dir.empty()) throw vlpd::ConfigError("dataset_dir is required for training");
    vlpd::Dataset ds = vlpd::load_dataset(cfg.dataset_dir);
    if (!cfg.pseudo_label_dir.empty()) vlpd::attach_pseudo_labels(ds, cfg.pseudo_label_dir);
    vlpd::TrainOptions opt;
    opt.deterministic = deterministic != 0;
    if (progress) {
      opt.on_record = [&](const vlpd::LossRecord& r) {
        const bool last = r.iteration + 1 == cfg.iterations;
        if (!last && (cfg.log_every <= 0 || r.iteration % cfg.log_every != 0)) return;
        const vlpd_loss_record rec{r.iteration, r.l_det, r.l_vls, r.l_psc, r.combined};
        progress(&rec, user);
      };
    }
    const vlpd::TrainSummary s = vlpd::train(cfg, ds, opt);
    if (summary) {
      *summary = {s.initial.combined, s.final.combined, s.frozen_hash_before, s.frozen_hash_after,
                  long(s.log.size())};
    }
  });
}

vlpd_status vlpd_model_load(const char* checkpoint_dir, vlpd_model** out) {
  return guarded([&] {
    require(checkpoint_dir, "checkpoint_dir");
    require(out, "out");
    *out = nullptr;
    *out = new vlpd_model{vlpd::Detector::load(checkpoint_dir)};
  });
}

void vlpd_model_free(vlpd_model* model) { delete model; }

double vlpd_model_threshold(const vlpd_model* model) {
  return model ? model->detector.config().detection_threshold : 0.0;
}

vlpd_status vlpd_detect_file(const vlpd_model* model, const char* image_path, double threshold, vlpd_boxes** out) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    require(out, "out");
    *out = nullptr;
    auto boxes = model->detector.detect(vlpd::read_ppm(image_path), threshold);
    *out = new vlpd_boxes{std::move(boxes)};
  });
}

size_t vlpd_boxes_count(const vlpd_boxes* boxes) { return boxes ? boxes->boxes.size() : 0; }

vlpd_status vlpd_boxes_get(const vlpd_boxes* boxes, size_t index, vlpd_box* out) {
  return guarded([&] {
    require(boxes, "boxes");
    require(out, "out");
    if (index >= boxes->boxes.size()) throw vlpd::InvalidArgument("box index out of range");
    const auto& b = boxes->boxes[index];
    *out = {b.x, b.y, b.w, b.h, b.score.value_or(0.0)};
  });
}

void vlpd_boxes_free(vlpd_boxes* boxes) { delete boxes; }

vlpd_status vlpd_evaluate(const vlpd_model* model, const char* dataset_dir, const char* subsets, double threshold,
                          const char* report_path, const char* detections_path, vlpd_report** out) {
  return guarded([&] {
    require(model, "model");
    require(dataset_dir, "dataset_dir");
    if (out) *out = nullptr;
    const auto specs = parse_subsets(subsets);
    auto ev = vlpd::evaluate_detector(model->detector, vlpd::load_dataset(dataset_dir), specs, threshold);
    if (report_path) {
      std::ofstream f(report_path);
      if (!f) throw vlpd::IoError(std::string("cannot write report '") + report_path + "'");
      f << vlpd::evaluation_report_json(ev.subsets) << '\n';
    }
    if (detections_path) vlpd::write_detection_file(detections_path, ev.detections);
    if (out) *out = new vlpd_report{std::move(ev.subsets)};
  });
}

size_t vlpd_report_count(const vlpd_report* report) { return report ? report->subsets.size() : 0; }

vlpd_status vlpd_report_get(const vlpd_report* report, size_t index, const char** subset, double* mr2,
                            size_t* num_gt) {
  return guarded([&] {
    require(report, "report");
    if (index >= report->subsets.size()) throw vlpd::InvalidArgument("subset index out of range");
    const auto& s = report->subsets[index];
    if (subset) *subset = s.subset.c_str();
    if (mr2) *mr2 = s.mr2;
    if (num_gt) *num_gt = s.num_gt;
  });
}

void vlpd_report_free(vlpd_report* report) { delete report; }

vlpd_status vlpd_plot(const char* report_path, const char* out_png) {
  return guarded([&] {
    require(report_path, "report_path");
    require(out_png, "out_png");
    std::ifstream in(report_path);
    if (!in) throw vlpd::IoError(std::string("cannot open report '") + report_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    vlpd::plot_miss_rate_curves(vlpd::parse_evaluation_report(ss.str()), out_png);
  });
}

}  // extern "C"
