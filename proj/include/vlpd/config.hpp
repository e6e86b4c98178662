#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "vlpd/class_policy.hpp"

namespace vlpd {

enum class Precision { kF32, kF64 };

struct EncoderArch {
  int c1 = 16;
  int c2 = 16;
  int c3 = 32;
  int c4 = 32;
  int c5 = 32;
  int d_prime = 64;  // projected / linguistic vector width
};

struct HeadArch {
  int deconv_s3 = 16;
  int deconv_s4 = 8;
  int deconv_s5 = 8;
  int hidden = 32;

  int feature_dim() const { return deconv_s3 + deconv_s4 + deconv_s5; }
};

struct RunConfig {
  // Combined objective L = L_det + lambda1 * L_vls + lambda2 * L_psc.
  double lambda1 = 100.0;
  double lambda2 = 1e-4;
  double tau = 7e-2;        // contrastive temperature
  double tau_prime = 1e-3;  // score-map softmax temperature

  int stride = 4;  // detection feature / head output stride
  double aspect_ratio = 0.41;
  ClassPolicy class_policy = ClassPolicy::urban_default();
  std::string prompt_template = "A picture of [CLS]";

  double learning_rate = 1e-4;
  int batch_size = 4;
  int iterations = 2000;
  std::uint64_t seed = 7;
  Precision precision = Precision::kF32;

  EncoderArch encoder;
  HeadArch head;
  std::array<double, 3> image_mean{0.5, 0.5, 0.5};
  std::array<double, 3> image_std{0.25, 0.25, 0.25};

  double detection_threshold = 0.01;
  double nms_iou = 0.5;

  // Paths used by the `train` command; relative paths resolve against the
  // config file's directory.
  std::string dataset_dir;
  std::string pseudo_label_dir;  // empty: generate on the fly
  std::string output_dir;
  int log_every = 100;

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

}  // namespace vlpd
