#ifndef GCVIT_H
#define GCVIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcvStatus {
  GCV_STATUS_OK = 0,
  GCV_STATUS_NULL_POINTER = 1,
  GCV_STATUS_INVALID_ARGUMENT = 2,
  GCV_STATUS_IO = 3,
  GCV_STATUS_DECODE = 4,
  GCV_STATUS_SHAPE = 5,
  GCV_STATUS_CHECKPOINT = 6,
  GCV_STATUS_PANIC = 7,
  GCV_STATUS_INTERNAL = 8,
} GcvStatus;

/**
 * A loaded model together with its class names and preprocessing.
 */
typedef struct GcvModel GcvModel;

/**
 * Aggregate classification metrics.
 */
typedef struct GcvReportSummary {
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
  double weighted_precision;
  double weighted_recall;
  double weighted_f1;
} GcvReportSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message of the last failed call on this thread, or null if
 * there is none. Release it with [`gcv_string_free`].
 */
char *gcv_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library that has not been
 * freed yet.
 */
void gcv_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gcv_version(void);

/**
 * Loads a checkpoint written by `gcvit train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GcvStatus gcv_model_load(const char *path, struct GcvModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`gcv_model_load`] not yet freed.
 */
void gcv_model_free(struct GcvModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum GcvStatus gcv_model_num_classes(const struct GcvModel *model, size_t *out);

/**
 * Expected input height and width; other sizes are resized before inference.
 *
 * # Safety
 * `model` must be a live handle and both out pointers valid.
 */
enum GcvStatus gcv_model_input_size(const struct GcvModel *model,
                                    size_t *out_height,
                                    size_t *out_width);

/**
 * Name of class `index`. Release the string with [`gcv_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum GcvStatus gcv_model_class_name(const struct GcvModel *model, size_t index, char **out);

/**
 * Classifies an image file. Writes `len` class probabilities and the top-1 index.
 *
 * # Safety
 * `model` must be a live handle, `path` a NUL-terminated string, `probs`
 * room for `len` doubles and `top1` a valid pointer.
 */
enum GcvStatus gcv_model_predict_file(const struct GcvModel *model,
                                      const char *path,
                                      double *probs,
                                      size_t len,
                                      size_t *top1);

/**
 * Classifies interleaved row-major RGB8 pixels (`height * width * 3` bytes).
 *
 * # Safety
 * `pixels` must point to `height * width * 3` readable bytes; the other
 * pointers follow [`gcv_model_predict_file`].
 */
enum GcvStatus gcv_model_predict_pixels(const struct GcvModel *model,
                                        const uint8_t *pixels,
                                        size_t height,
                                        size_t width,
                                        double *probs,
                                        size_t len,
                                        size_t *top1);

/**
 * Cosine-annealed learning rate at epoch `t` of `total`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum GcvStatus gcv_cosine_lr(size_t t, size_t total, double lr_min, double lr_max, double *out);

/**
 * Label-smoothed cross-entropy of `num_classes` logits against `label`.
 *
 * # Safety
 * `logits` must point to `num_classes` readable doubles and `out` be valid.
 */
enum GcvStatus gcv_smoothed_cross_entropy(const double *logits,
                                          size_t num_classes,
                                          size_t label,
                                          double epsilon,
                                          double *out);

/**
 * Row-major `num_classes * num_classes` counts, rows are true classes.
 *
 * # Safety
 * `labels` and `predictions` must hold `n` values; `out` must have room for
 * `num_classes * num_classes` counts.
 */
enum GcvStatus gcv_confusion_matrix(const size_t *labels,
                                    const size_t *predictions,
                                    size_t n,
                                    size_t num_classes,
                                    uint64_t *out);

/**
 * Accuracy and macro / weighted precision, recall and F1.
 *
 * # Safety
 * `labels` and `predictions` must hold `n` values and `out` be valid.
 */
enum GcvStatus gcv_classification_report(const size_t *labels,
                                         const size_t *predictions,
                                         size_t n,
                                         size_t num_classes,
                                         struct GcvReportSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCVIT_H */
