#ifndef EMBALIGN_H
#define EMBALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmbalignStatus {
  EMBALIGN_STATUS_OK = 0,
  EMBALIGN_STATUS_NULL_POINTER = 1,
  EMBALIGN_STATUS_INVALID_ARGUMENT = 2,
  EMBALIGN_STATUS_IO = 3,
  EMBALIGN_STATUS_ALL_RUNS_FAILED = 4,
  EMBALIGN_STATUS_NUMERICAL = 5,
  EMBALIGN_STATUS_FORMAT = 6,
  EMBALIGN_STATUS_DIMENSION_MISMATCH = 7,
  EMBALIGN_STATUS_PANIC = 8,
} EmbalignStatus;

typedef enum EmbalignMetric {
  EMBALIGN_METRIC_CSLS = 0,
  EMBALIGN_METRIC_NN = 1,
} EmbalignMetric;

/**
 * Loaded embeddings.
 */
typedef struct EmbalignEmbeddings EmbalignEmbeddings;

/**
 * A pair of learned transforms.
 */
typedef struct EmbalignTransform EmbalignTransform;

/**
 * Alignment settings. Start from `embalign_align_options_default`.
 */
typedef struct EmbalignAlignOptions {
  /**
   * Nonzero selects the small desk preset.
   */
  uint8_t desk;
  /**
   * Zero keeps the preset value.
   */
  size_t vocab;
  /**
   * Zero keeps the preset value; nonzero disables the preset's cap.
   */
  size_t pca_dim;
  /**
   * Zero keeps the preset value.
   */
  size_t runs;
  uint64_t seed;
  size_t epochs_pca;
  size_t epochs_raw;
  uint8_t randomize_pca;
  uint8_t randomize_order;
  /**
   * Worker threads; zero uses every core.
   */
  size_t threads;
} EmbalignAlignOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *embalign_last_error(void);

/**
 * Loads a text embedding file. `max_words` of zero loads every word.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmbalignStatus embalign_embeddings_load(const char *path,
                                             size_t max_words,
                                             struct EmbalignEmbeddings **out);

/**
 * # Safety
 * `h` must come from `embalign_embeddings_load` or be null.
 */
void embalign_embeddings_free(struct EmbalignEmbeddings *h);

/**
 * Number of words, or zero for a null handle.
 *
 * # Safety
 * `h` must be a live handle or null.
 */
size_t embalign_embeddings_len(const struct EmbalignEmbeddings *h);

/**
 * Vector dimension, or zero for a null handle.
 *
 * # Safety
 * `h` must be a live handle or null.
 */
size_t embalign_embeddings_dim(const struct EmbalignEmbeddings *h);

/**
 * Word at `index`, owned by the handle; null when out of range.
 *
 * # Safety
 * `h` must be a live handle or null.
 */
const char *embalign_embeddings_word(const struct EmbalignEmbeddings *h, size_t index);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmbalignStatus embalign_transform_load(const char *path, struct EmbalignTransform **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
enum EmbalignStatus embalign_transform_save(const struct EmbalignTransform *h, const char *path);

/**
 * # Safety
 * `h` must come from this library or be null.
 */
void embalign_transform_free(struct EmbalignTransform *h);

/**
 * # Safety
 * `h` must be a live handle or null.
 */
size_t embalign_transform_dim(const struct EmbalignTransform *h);

/**
 * Copies `T_xy` (`forward` nonzero) or `T_yx` into `out` in row-major
 * order. `len` must be at least `dim * dim`.
 *
 * # Safety
 * `h` must be a live handle and `out` must hold `len` doubles.
 */
enum EmbalignStatus embalign_transform_copy(const struct EmbalignTransform *h,
                                            uint8_t forward,
                                            double *out,
                                            size_t len);

/**
 * Defaults for the full-scale (`desk` zero) or desk preset.
 */
struct EmbalignAlignOptions embalign_align_options_default(uint8_t desk);

/**
 * Runs the full unsupervised pipeline and returns the learned transforms.
 *
 * # Safety
 * Handles must be live, `options` may be null for desk defaults, and
 * `out` must be a valid pointer.
 */
enum EmbalignStatus embalign_align(const struct EmbalignEmbeddings *source,
                                   const struct EmbalignEmbeddings *target,
                                   const struct EmbalignAlignOptions *options,
                                   struct EmbalignTransform **out);

/**
 * Refines `init` with `iterations` rounds of iterative Procrustes.
 *
 * # Safety
 * Handles must be live and `out` must be a valid pointer.
 */
enum EmbalignStatus embalign_finetune(const struct EmbalignEmbeddings *source,
                                      const struct EmbalignEmbeddings *target,
                                      const struct EmbalignTransform *init,
                                      size_t iterations,
                                      enum EmbalignMetric metric,
                                      struct EmbalignTransform **out);

/**
 * Top-`k` target rows for one source word. Writes up to `k` target
 * indices and scores, best first, and their number to `count`.
 *
 * # Safety
 * Handles must be live, `word` NUL-terminated, `indices` and `scores`
 * must hold `k` values, and `count` must be valid.
 */
enum EmbalignStatus embalign_translate(const struct EmbalignEmbeddings *source,
                                       const struct EmbalignEmbeddings *target,
                                       const struct EmbalignTransform *transform,
                                       const char *word,
                                       enum EmbalignMetric metric,
                                       size_t k,
                                       size_t *indices,
                                       double *scores,
                                       size_t *count);

/**
 * Precision@`k` against the two-column lexicon at `lexicon_path`.
 *
 * # Safety
 * Handles must be live, `lexicon_path` NUL-terminated, and the output
 * pointers valid; `n_evaluated` may be null.
 */
enum EmbalignStatus embalign_evaluate(const struct EmbalignEmbeddings *source,
                                      const struct EmbalignEmbeddings *target,
                                      const struct EmbalignTransform *transform,
                                      const char *lexicon_path,
                                      enum EmbalignMetric metric,
                                      size_t k,
                                      double *precision,
                                      size_t *n_evaluated);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBALIGN_H */
