#ifndef ADAND_H
#define ADAND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdandStatus {
  ADAND_STATUS_OK = 0,
  ADAND_STATUS_NULL_POINTER = 1,
  ADAND_STATUS_INVALID_ARGUMENT = 2,
  ADAND_STATUS_DIM_MISMATCH = 3,
  ADAND_STATUS_IO = 4,
  ADAND_STATUS_FORMAT = 5,
  ADAND_STATUS_EMPTY_INPUT = 6,
  ADAND_STATUS_ONE_CLASS_ONLY = 7,
  ADAND_STATUS_PANIC = 99,
} AdandStatus;

typedef enum AdandMethod {
  ADAND_METHOD_FROZEN = 0,
  ADAND_METHOD_ADAND = 1,
} AdandMethod;

typedef enum AdandPseudoSource {
  ADAND_PSEUDO_SOURCE_ZS_CLIP = 0,
  ADAND_PSEUDO_SOURCE_DETECTOR = 1,
  ADAND_PSEUDO_SOURCE_ORACLE = 2,
} AdandPseudoSource;

/*
 Opaque handle over a parsed feature file.
 */
typedef struct AdandFeatureFile AdandFeatureFile;

/*
 Opaque pipeline handle.
 */
typedef struct AdandPipeline AdandPipeline;

/*
 Pipeline settings. `fixed_threshold` outside `[0, 1]` (conventionally
 `-1`) selects the adaptive threshold.
 */
typedef struct AdandConfig {
  double tau;
  uint64_t inject_every;
  uint64_t queue_len;
  uint64_t score_window;
  uint64_t warmup_steps;
  double lr;
  enum AdandMethod method;
  enum AdandPseudoSource pseudo_source;
  double fixed_threshold;
  uint64_t seed;
} AdandConfig;

/*
 One verdict. `prediction` and `truth` use class indices, with `-1` for
 noisy. `detector_score` is NaN when the detector was not consulted.
 */
typedef struct AdandDecision {
  uint64_t index;
  int32_t truth;
  int32_t prediction;
  uint8_t stage;
  uint8_t injected;
  uint8_t pseudo_label_noise;
  double mcm_score;
  double detector_score;
  double lambda;
} AdandDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Writes the default configuration to `out`.

 # Safety
 `out` must be null or valid for writes.
 */
enum AdandStatus adand_config_default(struct AdandConfig *out);

/*
 Creates a pipeline over `num_classes` unit-norm prototypes of length
 `dim`, stored row-major. `noise` may be null (injection off); otherwise it
 holds `noise_count` rows of length `dim`.

 # Safety
 Array pointers must be valid for the stated lengths; `out` must be valid
 for writes.
 */
enum AdandStatus adand_pipeline_new(const struct AdandConfig *config,
                                    const double *prototypes,
                                    size_t num_classes,
                                    size_t dim,
                                    const double *noise,
                                    size_t noise_count,
                                    struct AdandPipeline **out);

/*
 Releases a pipeline. Null is ignored.

 # Safety
 `p` must come from [`adand_pipeline_new`] and not be used afterwards.
 */
void adand_pipeline_free(struct AdandPipeline *p);

/*
 Judges one original sample. `truth` is its class index, or `-1` for
 noisy; it only matters for the oracle pseudo-label source and is echoed
 back in the decision.

 # Safety
 `feature` must hold `dim` values; `p` and `out` must be valid.
 */
enum AdandStatus adand_pipeline_process(struct AdandPipeline *p,
                                        const double *feature,
                                        size_t dim,
                                        int32_t truth,
                                        struct AdandDecision *out);

/*
 Injects one noise sample when one is due. `*injected` is set to 1 and
 `out` filled when that happened, 0 otherwise.

 # Safety
 All pointers must be valid.
 */
enum AdandStatus adand_pipeline_inject_if_due(struct AdandPipeline *p,
                                              struct AdandDecision *out,
                                              uint8_t *injected);

/*
 Completed optimizer steps so far.

 # Safety
 `p` must be a live pipeline or null.
 */
uint64_t adand_pipeline_steps(const struct AdandPipeline *p);

/*
 Current stage, 1 or 2; 0 for a null handle.

 # Safety
 `p` must be a live pipeline or null.
 */
uint8_t adand_pipeline_stage(const struct AdandPipeline *p);

/*
 AUROC of `scores` with clean as the positive class.

 # Safety
 `scores` and `is_clean` must hold `n` entries; `out` must be valid.
 */
enum AdandStatus adand_auroc(const double *scores, const uint8_t *is_clean, size_t n, double *out);

/*
 False-positive rate at 95% true-positive rate.

 # Safety
 As for [`adand_auroc`].
 */
enum AdandStatus adand_fpr95(const double *scores, const uint8_t *is_clean, size_t n, double *out);

/*
 Parses a feature file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum AdandStatus adand_feature_file_open(const char *path, struct AdandFeatureFile **out);

/*
 # Safety
 `f` must come from [`adand_feature_file_open`] and not be used afterwards.
 */
void adand_feature_file_free(struct AdandFeatureFile *f);

/*
 # Safety
 `f` must be a live handle or null.
 */
size_t adand_feature_file_dim(const struct AdandFeatureFile *f);

/*
 # Safety
 `f` must be a live handle or null.
 */
size_t adand_feature_file_classes(const struct AdandFeatureFile *f);

/*
 # Safety
 `f` must be a live handle or null.
 */
size_t adand_feature_file_records(const struct AdandFeatureFile *f);

/*
 Row-major `classes x dim` prototypes, valid while the handle lives.

 # Safety
 `f` must be a live handle or null.
 */
const double *adand_feature_file_prototypes(const struct AdandFeatureFile *f);

/*
 Row-major `records x dim` features, valid while the handle lives.

 # Safety
 `f` must be a live handle or null.
 */
const double *adand_feature_file_features(const struct AdandFeatureFile *f);

/*
 Per-record labels (`-1` for noisy), valid while the handle lives.

 # Safety
 `f` must be a live handle or null.
 */
const int32_t *adand_feature_file_labels(const struct AdandFeatureFile *f);

/*
 Copies the calling thread's last error message into `buf` (truncated and
 NUL-terminated). Returns the full message length in bytes, excluding the
 terminator.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t adand_last_error(char *buf, size_t len);

/*
 Static name of a status code.
 */
const char *adand_status_name(enum AdandStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAND_H */
