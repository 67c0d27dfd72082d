#ifndef ZOOMVQA_H
#define ZOOMVQA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZvStatus {
  ZV_STATUS_OK = 0,
  ZV_STATUS_NULL_ARGUMENT = 1,
  ZV_STATUS_INVALID_ARGUMENT = 2,
  ZV_STATUS_IO = 3,
  ZV_STATUS_FORMAT = 4,
  ZV_STATUS_CHECKPOINT = 5,
  ZV_STATUS_DEGENERATE = 6,
  ZV_STATUS_NON_FINITE = 7,
  ZV_STATUS_PANIC = 99,
} ZvStatus;

// Run configuration: preprocessing geometry, view counts and seed.
typedef struct ZvConfig ZvConfig;

// Trained frame-branch weights.
typedef struct ZvIqaModel ZvIqaModel;

// A decoded raw video.
typedef struct ZvVideo ZvVideo;

// Trained clip-branch weights.
typedef struct ZvVqaModel ZvVqaModel;

typedef struct ZvMetrics {
  double srcc;
  double plcc;
  double main_score;
} ZvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the length the full message
// needs including the terminator.
size_t zv_last_error(char *buf, size_t len);

// Reads a `.rgb24` payload and its `.json` sidecar.
enum ZvStatus zv_video_open(const char *path, struct ZvVideo **video);

// Wraps packed RGB24 frames already in memory. `data` must hold
// `width * height * 3 * num_frames` bytes; they are copied.
enum ZvStatus zv_video_from_rgb24(size_t width,
                                  size_t height,
                                  uint64_t fps_num,
                                  uint64_t fps_den,
                                  size_t num_frames,
                                  const uint8_t *data,
                                  size_t data_len,
                                  struct ZvVideo **video);

enum ZvStatus zv_video_info(const struct ZvVideo *video,
                            size_t *width,
                            size_t *height,
                            size_t *num_frames);

void zv_video_free(struct ZvVideo *video);

enum ZvStatus zv_iqa_load(const char *path, struct ZvIqaModel **model);

void zv_iqa_free(struct ZvIqaModel *model);

enum ZvStatus zv_vqa_load(const char *path, struct ZvVqaModel **model);

void zv_vqa_free(struct ZvVqaModel *model);

// Full-size defaults.
enum ZvStatus zv_config_default(struct ZvConfig **config);

// The small configuration used for desk-scale experiments.
enum ZvStatus zv_config_toy(struct ZvConfig **config);

// Loads and validates a JSON run configuration.
enum ZvStatus zv_config_load(const char *path, struct ZvConfig **config);

enum ZvStatus zv_config_set_seed(struct ZvConfig *config, uint64_t seed);

void zv_config_free(struct ZvConfig *config);

// Frame-branch score: mean over sampled, resized, center-cropped frames.
enum ZvStatus zv_score_iqa(const struct ZvConfig *config,
                           const struct ZvIqaModel *model,
                           const struct ZvVideo *video,
                           double *score);

// Clip-branch score averaged over the configured number of views.
enum ZvStatus zv_score_vqa(const struct ZvConfig *config,
                           const struct ZvVqaModel *model,
                           const struct ZvVideo *video,
                           double *score);

// Both branch scores and their fusion.
enum ZvStatus zv_score_video(const struct ZvConfig *config,
                             const struct ZvIqaModel *iqa_model,
                             const struct ZvVqaModel *vqa_model,
                             const struct ZvVideo *video,
                             double *y_iqa,
                             double *y_vqa,
                             double *y_fused);

double zv_fuse(double y_iqa, double y_vqa);

enum ZvStatus zv_srcc(const double *pred, const double *label, size_t n, double *value);

enum ZvStatus zv_plcc(const double *pred, const double *label, size_t n, double *value);

enum ZvStatus zv_main_score(const double *pred,
                            const double *label,
                            size_t n,
                            struct ZvMetrics *metrics);

// Smooth L1 of one prediction; `grad` receives d loss / d pred.
enum ZvStatus zv_smooth_l1(double pred, double label, double *loss, double *grad);

// Correlation loss over a batch. `grad`, if not null, receives `n` values.
enum ZvStatus zv_plcc_loss(const double *pred,
                           const double *label,
                           size_t n,
                           double *loss,
                           double *grad);

// Pairwise ranking hinge over a batch. `grad`, if not null, receives `n` values.
enum ZvStatus zv_rank_loss(const double *pred,
                           const double *label,
                           size_t n,
                           double *loss,
                           double *grad);

enum ZvStatus zv_combined_loss(const double *pred,
                               const double *label,
                               size_t n,
                               double beta,
                               double *loss,
                               double *grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZOOMVQA_H */
