#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "vlpd/config.hpp"
#include "vlpd/dataset.hpp"
#include "vlpd/evaluation.hpp"
#include "vlpd/model.hpp"

namespace vlpd {

// L = l_det + lambda1 * l_vls + lambda2 * l_psc. Throws DivergenceError naming
// the first non-finite term.
double combined_loss(double l_det, double l_vls, double l_psc, const RunConfig& cfg);

struct LossRecord {
  long iteration = 0;
  double l_det = 0.0;
  double l_vls = 0.0;
  double l_psc = 0.0;
  double combined = 0.0;
  double det_center = 0.0;
  double det_scale = 0.0;
  double det_offset = 0.0;
  std::size_t psc_queries = 0;
};

std::string loss_log_header();
std::string format_loss_record(const LossRecord& r);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

// True when VLPD_DETERMINISTIC=1.
bool deterministic_mode_from_env();

struct TrainOptions {
  bool deterministic = false;
  bool write_outputs = true;  // checkpoint + loss log into cfg.output_dir
  std::function<void(const LossRecord&)> on_record;
};

struct ObjectiveValue {
  double l_det = 0.0;
  double l_vls = 0.0;
  double l_psc = 0.0;
  double combined = 0.0;
};

struct TrainSummary {
  std::vector<LossRecord> log;
  ObjectiveValue initial;  // whole training set, before the first update
  ObjectiveValue final;    // whole training set, after the last update
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  std::uint64_t trainee_encoder_hash_at_init = 0;
  std::filesystem::path checkpoint_dir;
};

TrainSummary train(const RunConfig& cfg, const Dataset& dataset, const TrainOptions& options = {});

// Loaded checkpoint ready for inference.
class Detector {
 public:
  static Detector load(const std::filesystem::path& checkpoint_dir);

  // encode -> head over concat(E, detached S_dot) -> decode -> NMS. Inputs
  // not divisible by 32 are reflect-padded and boxes clipped to the original.
  std::vector<BoundingBox> detect(const RgbImage& image, double threshold) const;

  // Raw forward on a standardised, unpadded image (f64 view of the outputs).
  ForwardResult<double> forward_f64(const RgbImage& image) const;

  const RunConfig& config() const { return cfg_; }
  long iteration() const { return iteration_; }

 private:
  RunConfig cfg_;
  long iteration_ = 0;
  std::variant<std::shared_ptr<const VlpdNet<float>>, std::shared_ptr<const VlpdNet<double>>> net_;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, const VlpdNet<T>& net, long iteration,
                     std::uint64_t frozen_hash);

LinguisticVectors class_vectors_for(const RunConfig& cfg);

// Writes <out>/<id>.vls score maps from the frozen encoder plus a manifest
// recording the encoder seed/arch and class list.
void cache_pseudo_labels(const Dataset& dataset, const RunConfig& cfg, const std::filesystem::path& out);

struct DatasetEvaluation {
  std::vector<SubsetEvaluation> subsets;
  BoxesByImage detections;
};

// Subsets with no evaluated ground truth are skipped when `skip_undefined`.
DatasetEvaluation evaluate_detector(const Detector& det, const Dataset& dataset, const std::vector<SubsetSpec>& subsets,
                                    double threshold, bool skip_undefined = true);

}  // namespace vlpd
