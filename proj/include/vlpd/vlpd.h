#ifndef VLPD_VLPD_H
#define VLPD_VLPD_H

#include <stddef.h>
#include <stdint.h>

#if defined(VLPD_BUILDING_LIBRARY)
#define VLPD_API __attribute__((visibility("default")))
#else
#define VLPD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vlpd_status {
  VLPD_OK = 0,
  VLPD_ERR_IO = 1,
  VLPD_ERR_FORMAT = 2,
  VLPD_ERR_SHAPE = 3,
  VLPD_ERR_CONFIG = 4,
  VLPD_ERR_POLICY = 5,
  VLPD_ERR_TEMPLATE = 6,
  VLPD_ERR_ANNOTATION = 7,
  VLPD_ERR_UNDEFINED_METRIC = 8,
  VLPD_ERR_DIVERGENCE = 9,
  VLPD_ERR_INVALID_ARGUMENT = 10,
  VLPD_ERR_INTERNAL = 99
} vlpd_status;

/* Message of the last failed call on this thread ("" if none). */
VLPD_API const char* vlpd_last_error(void);
VLPD_API const char* vlpd_status_name(vlpd_status status);
VLPD_API const char* vlpd_version(void);

/* Writes n synthetic scenes (images/<id>.ppm + annotations.txt) to out_dir. */
VLPD_API vlpd_status vlpd_synth(uint64_t seed, size_t n, size_t height, size_t width, const char* out_dir);

/* Caches frozen-encoder score maps for every image of a dataset. config_path
   may be NULL for the default run configuration. */
VLPD_API vlpd_status vlpd_pseudolabel(const char* dataset_dir, const char* out_dir, const char* config_path);

typedef struct vlpd_loss_record {
  long iteration;
  double l_det;
  double l_vls;
  double l_psc;
  double combined;
} vlpd_loss_record;

typedef void (*vlpd_progress_fn)(const vlpd_loss_record* record, void* user);

typedef struct vlpd_train_summary {
  double initial_combined;
  double final_combined;
  uint64_t frozen_hash_before;
  uint64_t frozen_hash_after;
  long iterations;
} vlpd_train_summary;

/* Trains from a JSON config; writes loss_log.csv and checkpoint/ under the
   config's output_dir. progress (called every log_every iterations and on the
   last one) and summary may be NULL. */
VLPD_API vlpd_status vlpd_train(const char* config_path, int deterministic, vlpd_progress_fn progress, void* user,
                                vlpd_train_summary* summary);

typedef struct vlpd_model vlpd_model;
typedef struct vlpd_boxes vlpd_boxes;
typedef struct vlpd_report vlpd_report;

typedef struct vlpd_box {
  double x;
  double y;
  double w;
  double h;
  double score;
} vlpd_box;

VLPD_API vlpd_status vlpd_model_load(const char* checkpoint_dir, vlpd_model** out);
VLPD_API void vlpd_model_free(vlpd_model* model);
/* Default detection threshold stored in the checkpoint's config. */
VLPD_API double vlpd_model_threshold(const vlpd_model* model);

VLPD_API vlpd_status vlpd_detect_file(const vlpd_model* model, const char* image_path, double threshold,
                                      vlpd_boxes** out);
VLPD_API size_t vlpd_boxes_count(const vlpd_boxes* boxes);
VLPD_API vlpd_status vlpd_boxes_get(const vlpd_boxes* boxes, size_t index, vlpd_box* out);
VLPD_API void vlpd_boxes_free(vlpd_boxes* boxes);

/* Evaluates a model on a dataset. subsets is a comma-separated list of subset
   names (NULL for all predefined subsets). report_path and detections_path
   may be NULL; out may be NULL. */
VLPD_API vlpd_status vlpd_evaluate(const vlpd_model* model, const char* dataset_dir, const char* subsets,
                                   double threshold, const char* report_path, const char* detections_path,
                                   vlpd_report** out);
VLPD_API size_t vlpd_report_count(const vlpd_report* report);
VLPD_API vlpd_status vlpd_report_get(const vlpd_report* report, size_t index, const char** subset, double* mr2,
                                     size_t* num_gt);
VLPD_API void vlpd_report_free(vlpd_report* report);

/* Renders the curves of an evaluation report (JSON) to a PNG file. */
VLPD_API vlpd_status vlpd_plot(const char* report_path, const char* out_png);

#ifdef __cplusplus
}
#endif

#endif
