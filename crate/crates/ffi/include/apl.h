#ifndef APL_H
#define APL_H

#include <stddef.h>
#include <stdint.h>

typedef enum AplStatus {
  APL_STATUS_OK = 0,
  APL_STATUS_NULL_POINTER = 1,
  APL_STATUS_INVALID_ARGUMENT = 2,
  APL_STATUS_COMPUTATION = 3,
  APL_STATUS_IO = 4,
  APL_STATUS_FORMAT = 5,
  APL_STATUS_PANIC = 6,
} AplStatus;

/**
 * A trained instance-consistency discriminator.
 */
typedef struct AplDiscriminator AplDiscriminator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or NULL if none has
 * failed. Valid until the next failing call on the same thread.
 */
const char *apl_last_error_message(void);

/**
 * Temporal IoU of `[s1, e1]` and `[s2, e2]`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AplStatus apl_tiou(double s1, double e1, double s2, double e2, double *out);

/**
 * Squared center distance over squared cover length.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AplStatus apl_tnd(double s1, double e1, double s2, double e2, double *out);

/**
 * `tiou - tnd`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AplStatus apl_diou(double s1, double e1, double s2, double e2, double *out);

/**
 * `max(tiou_hat - tnd_hat, epsilon) * cls` for one frame and class.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AplStatus apl_joint_score(double cls,
                               double tiou_hat,
                               double tnd_hat,
                               double epsilon,
                               double *out);

/**
 * Positive threshold `mean + std` over the scores above `tau_neg`.
 * `*no_survivors` (if non-NULL) is set to 1 and the threshold to 1 when no
 * score exceeds `tau_neg`.
 *
 * # Safety
 * `scores` must point to `n` readable doubles; `out` must be valid for
 * writes; `no_survivors` may be NULL.
 */
enum AplStatus apl_dynamic_threshold(const double *scores,
                                     size_t n,
                                     double tau_neg,
                                     double *out,
                                     int32_t *no_survivors);

/**
 * Fine-grained InfoNCE over `n` row-major feature vectors of length `dim`.
 *
 * # Safety
 * `features` must point to `n * dim` readable doubles, `labels` to `n`
 * readable values; `out` must be valid for writes.
 */
enum AplStatus apl_infonce_loss(const double *features,
                                size_t n,
                                size_t dim,
                                const size_t *labels,
                                double temperature,
                                double *out);

/**
 * Loads an ICD1 model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 * Release the handle with [`apl_discriminator_free`].
 */
enum AplStatus apl_discriminator_load(const char *path, struct AplDiscriminator **out);

/**
 * Decodes an ICD1 model from memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` must be valid for
 * writes.
 */
enum AplStatus apl_discriminator_from_bytes(const uint8_t *bytes,
                                            size_t len,
                                            struct AplDiscriminator **out);

/**
 * Input feature dimension `D` of the model.
 *
 * # Safety
 * `h` must be a live handle; `out` must be valid for writes.
 */
enum AplStatus apl_discriminator_dim(const struct AplDiscriminator *h, size_t *out);

/**
 * Probability that pooled features `a` and `b` (each `dim` long) share a
 * class.
 *
 * # Safety
 * `h` must be a live handle; `a` and `b` must point to `dim` readable
 * doubles; `out` must be valid for writes.
 */
enum AplStatus apl_discriminator_pair_probability(const struct AplDiscriminator *h,
                                                  const double *a,
                                                  const double *b,
                                                  size_t dim,
                                                  double *out);

/**
 * Mean pair probability of `pred` against `n_labeled` pooled labeled
 * features stored row-major.
 *
 * # Safety
 * `h` must be a live handle; `pred` must point to `dim` readable doubles and
 * `labeled` to `n_labeled * dim`; `out` must be valid for writes.
 */
enum AplStatus apl_discriminator_similarity(const struct AplDiscriminator *h,
                                            const double *pred,
                                            const double *labeled,
                                            size_t n_labeled,
                                            size_t dim,
                                            double *out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void apl_discriminator_free(struct AplDiscriminator *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APL_H */
