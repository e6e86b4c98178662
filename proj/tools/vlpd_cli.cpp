// Command-line front end over the C API.
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlpd/vlpd.h"

namespace {

int fail(vlpd_status s) {
  std::fprintf(stderr, "vlpd: %s: %s\n", vlpd_status_name(s), vlpd_last_error());
  return int(s);
}

bool deterministic_env() {
  const char* v = std::getenv("VLPD_DETERMINISTIC");
  return v != nullptr && std::strcmp(v, "1") == 0;
}

void print_progress(const vlpd_loss_record* r, void*) {
  std::printf("iter %6ld  combined %.6f  det %.6f  vls %.6f  psc %.6f\n", r->iteration, r->combined, r->l_det, r->l_vls,
              r->l_psc);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-language pedestrian detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vlpd_version());

  std::string ds_dir, out_dir, config, ckpt, image, report, png, subsets, dets_out;
  double threshold = -1.0;
  uint64_t seed = 7;
  size_t n = 8, height = 96, width = 128;

  auto* pl = app.add_subcommand("pseudolabel", "cache frozen-encoder score maps for a dataset");
  pl->add_option("dataset", ds_dir, "dataset directory")->required();
  pl->add_option("out", out_dir, "cache directory")->required();
  pl->add_option("--config", config, "run config (encoder seed, classes, prompt)");

  auto* tr = app.add_subcommand("train", "train a detector from a run config");
  tr->add_option("config", config, "run config JSON")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("checkpoint", ckpt)->required();
  ev->add_option("dataset", ds_dir)->required();
  ev->add_option("--subsets", subsets, "comma-separated: Reasonable,Small,HO,R+HO,Heavy");
  ev->add_option("--threshold", threshold, "score threshold (default from checkpoint)");
  ev->add_option("--report", report, "write JSON report");
  ev->add_option("--detections", dets_out, "write detection file");

  auto* dt = app.add_subcommand("detect", "detect pedestrians in one image");
  dt->add_option("checkpoint", ckpt)->required();
  dt->add_option("image", image, "PPM image")->required();
  dt->add_option("--threshold", threshold, "score threshold (default from checkpoint)");

  auto* sy = app.add_subcommand("synth", "write a synthetic dataset");
  sy->add_option("seed", seed)->required();
  sy->add_option("n", n)->required();
  sy->add_option("out", out_dir)->required();
  sy->add_option("--height", height);
  sy->add_option("--width", width);

  auto* pt = app.add_subcommand("plot", "plot miss-rate curves of an evaluation report");
  pt->add_option("report", report)->required();
  pt->add_option("out", png, "output PNG")->required();

  CLI11_PARSE(app, argc, argv);

  if (*pl) {
    const vlpd_status s = vlpd_pseudolabel(ds_dir.c_str(), out_dir.c_str(), config.empty() ? nullptr : config.c_str());
    if (s != VLPD_OK) return fail(s);
    std::printf("pseudo labels written to %s\n", out_dir.c_str());
  } else if (*tr) {
    vlpd_train_summary sum{};
    const vlpd_status s = vlpd_train(config.c_str(), deterministic_env(), print_progress, nullptr, &sum);
    if (s != VLPD_OK) return fail(s);
    std::printf("trained %ld iterations: combined %.6f -> %.6f (x%.1f)\n", sum.iterations, sum.initial_combined,
                sum.final_combined, sum.initial_combined / sum.final_combined);
    std::printf("frozen encoder hash %016" PRIx64 " -> %016" PRIx64 "\n", sum.frozen_hash_before,
                sum.frozen_hash_after);
  } else if (*ev || *dt) {
    vlpd_model* model = nullptr;
    vlpd_status s = vlpd_model_load(ckpt.c_str(), &model);
    if (s != VLPD_OK) return fail(s);
    const double thr = threshold >= 0.0 ? threshold : vlpd_model_threshold(model);
    if (*ev) {
      vlpd_report* rep = nullptr;
      s = vlpd_evaluate(model, ds_dir.c_str(), subsets.empty() ? nullptr : subsets.c_str(), thr,
                        report.empty() ? nullptr : report.c_str(), dets_out.empty() ? nullptr : dets_out.c_str(),
                        &rep);
      if (s == VLPD_OK) {
        std::printf("%-12s %8s %6s\n", "subset", "MR-2(%)", "gts");
        for (size_t i = 0; i < vlpd_report_count(rep); ++i) {
          const char* name = nullptr;
          double mr2 = 0.0;
          size_t gts = 0;
          vlpd_report_get(rep, i, &name, &mr2, &gts);
          std::printf("%-12s %8.2f %6zu\n", name, mr2 * 100.0, gts);
        }
      }
      vlpd_report_free(rep);
    } else {
      vlpd_boxes* boxes = nullptr;
      s = vlpd_detect_file(model, image.c_str(), thr, &boxes);
      if (s == VLPD_OK) {
        std::string id = image.substr(image.find_last_of('/') + 1);
        id = id.substr(0, id.find_last_of('.'));
        for (size_t i = 0; i < vlpd_boxes_count(boxes); ++i) {
          vlpd_box b{};
          vlpd_boxes_get(boxes, i, &b);
          std::printf("%s %.6f %.6f %.6f %.6f %.6f\n", id.c_str(), b.x, b.y, b.w, b.h, b.score);
        }
      }
      vlpd_boxes_free(boxes);
    }
    vlpd_model_free(model);
    if (s != VLPD_OK) return fail(s);
  } else if (*sy) {
    const vlpd_status s = vlpd_synth(seed, n, height, width, out_dir.c_str());
    if (s != VLPD_OK) return fail(s);
    std::printf("wrote %zu images to %s\n", n, out_dir.c_str());
  } else if (*pt) {
    const vlpd_status s = vlpd_plot(report.c_str(), png.c_str());
    if (s != VLPD_OK) return fail(s);
    std::printf("wrote %s\n", png.c_str());
  }
  return 0;
}
