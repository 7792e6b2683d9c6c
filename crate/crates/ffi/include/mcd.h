/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MCD_H
#define MCD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McdStatus {
  MCD_STATUS_OK = 0,
  MCD_STATUS_NULL_POINTER = 1,
  MCD_STATUS_INVALID_ARGUMENT = 2,
  MCD_STATUS_IO = 3,
  MCD_STATUS_DATA = 4,
  MCD_STATUS_RUNTIME = 5,
  MCD_STATUS_PANIC = 6,
} McdStatus;

typedef enum McdThresholdMethod {
  MCD_THRESHOLD_METHOD_OTSU = 0,
  MCD_THRESHOLD_METHOD_ISODATA = 1,
} McdThresholdMethod;

/**
 * Boxes with scores, as produced by proposal, classification or detection.
 */
typedef struct McdBoxList McdBoxList;

/**
 * 8-bit grayscale image.
 */
typedef struct McdImage McdImage;

/**
 * Binary mask (anterior chamber or segmentation).
 */
typedef struct McdMask McdMask;

/**
 * Trained patch classifier.
 */
typedef struct McdModel McdModel;

/**
 * Candidate-proposal settings; start from [`mcd_mirp_default`].
 */
typedef struct McdMirpParams {
  double lambda;
  size_t s_min;
  size_t s_max;
  size_t box_w;
  size_t box_h;
} McdMirpParams;

/**
 * Half-open box `[x_tl, x_br) × [y_tl, y_br)` with a score.
 */
typedef struct McdBox {
  int64_t x_tl;
  int64_t y_tl;
  int64_t x_br;
  int64_t y_br;
  double score;
} McdBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `mcd_*` call on this thread.
 */
const char *mcd_last_error_message(void);

/**
 * Library version as a NUL-terminated string with static lifetime.
 */
const char *mcd_version(void);

/**
 * Copies `width * height` row-major pixels.
 *
 * # Safety
 * `pixels` must point to `width * height` readable bytes; `out` must be
 * writable.
 */
enum McdStatus mcd_image_from_gray(const uint8_t *pixels,
                                   size_t width,
                                   size_t height,
                                   struct McdImage **out);

/**
 * Loads a PNG / PGM / PPM; color images are converted to gray.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum McdStatus mcd_image_load(const char *path, struct McdImage **out);

/**
 * # Safety
 * `image` must be null or a handle from this library, freed at most once.
 */
void mcd_image_free(struct McdImage *image);

/**
 * # Safety
 * `image` must be a live handle; `width` and `height` must be writable.
 */
enum McdStatus mcd_image_dims(const struct McdImage *image, size_t *width, size_t *height);

/**
 * Copies `width * height` row-major bytes; nonzero means set.
 *
 * # Safety
 * `bits` must point to `width * height` readable bytes; `out` must be
 * writable.
 */
enum McdStatus mcd_mask_from_bytes(const uint8_t *bits,
                                   size_t width,
                                   size_t height,
                                   struct McdMask **out);

/**
 * Loads a mask image; nonzero pixels are set.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum McdStatus mcd_mask_load(const char *path, struct McdMask **out);

/**
 * # Safety
 * `mask` must be null or a handle from this library, freed at most once.
 */
void mcd_mask_free(struct McdMask *mask);

/**
 * Number of set pixels.
 *
 * # Safety
 * `mask` must be a live handle; `count` must be writable.
 */
enum McdStatus mcd_mask_count(const struct McdMask *mask, size_t *count);

/**
 * Anterior-chamber mask from the built-in region-growing segmenter.
 * `merge_ratio` controls when the two largest bright components are
 * treated as one anterior segment (0.65 by default).
 *
 * # Safety
 * `image` must be a live handle; `out` must be writable.
 */
enum McdStatus mcd_field_of_focus(const struct McdImage *image,
                                  double merge_ratio,
                                  struct McdMask **out);

struct McdMirpParams mcd_mirp_default(void);

/**
 * Candidate boxes, each scored 1.
 *
 * # Safety
 * All handles must be live; `params` must be readable; `out` writable.
 */
enum McdStatus mcd_propose(const struct McdImage *image,
                           const struct McdMask *ac_mask,
                           const struct McdMirpParams *params,
                           struct McdBoxList **out);

/**
 * Whole-image threshold baseline with components of `s_min..=25` pixels.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum McdStatus mcd_detect_threshold(const struct McdImage *image,
                                    const struct McdMask *ac_mask,
                                    enum McdThresholdMethod method,
                                    size_t s_min,
                                    struct McdBoxList **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum McdStatus mcd_model_load(const char *path, struct McdModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void mcd_model_free(struct McdModel *model);

/**
 * Cell probability for every box of `boxes`, in order.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum McdStatus mcd_classify(const struct McdModel *model,
                            const struct McdImage *image,
                            const struct McdBoxList *boxes,
                            struct McdBoxList **out);

/**
 * Full detector at threshold factor `lambda`; box size follows the model.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum McdStatus mcd_detect(const struct McdImage *image,
                          const struct McdMask *ac_mask,
                          const struct McdModel *model,
                          double lambda,
                          struct McdBoxList **out);

/**
 * Number of boxes; 0 for a null list.
 *
 * # Safety
 * `list` must be null or a live handle.
 */
size_t mcd_box_list_len(const struct McdBoxList *list);

/**
 * # Safety
 * `list` must be a live handle; `out` must be writable.
 */
enum McdStatus mcd_box_list_get(const struct McdBoxList *list, size_t index, struct McdBox *out);

/**
 * # Safety
 * `list` must be null or a handle from this library, freed at most once.
 */
void mcd_box_list_free(struct McdBoxList *list);

/**
 * IoU and Dice of two equally sized masks.
 *
 * # Safety
 * Handles must be live; `iou` and `dice` must be writable.
 */
enum McdStatus mcd_seg_metrics(const struct McdMask *pred,
                               const struct McdMask *gt,
                               double *iou,
                               double *dice);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCD_H */
