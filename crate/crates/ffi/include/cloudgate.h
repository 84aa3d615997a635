#ifndef CLOUDGATE_H
#define CLOUDGATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CgStatus {
  CG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CG_STATUS_INVALID_UTF8 = 2,
  /**
   * A buffer length or dimension did not match.
   */
  CG_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A file could not be read or parsed.
   */
  CG_STATUS_IO = 4,
  /**
   * Weights, vocabulary, probe or context content was rejected.
   */
  CG_STATUS_INVALID_MODEL = 5,
  /**
   * Encoding or classification failed.
   */
  CG_STATUS_COMPUTE = 6,
  /**
   * Internal panic; the handle involved should be freed.
   */
  CG_STATUS_PANIC = 7,
} CgStatus;

typedef enum CgLabel {
  CG_LABEL_CLOUDY = 0,
  CG_LABEL_CLEAR = 1,
} CgLabel;

/**
 * Weights plus tokenizer vocabulary.
 */
typedef struct CgModel CgModel;

typedef struct CgProbe CgProbe;

/**
 * Two encoded text prompts, from free text or a CoOp context file.
 */
typedef struct CgPrompts CgPrompts;

typedef struct CgVerdict {
  enum CgLabel label;
  /**
   * Probability mass on `label`, in [0.5, 1].
   */
  float confidence;
  /**
   * Cloudy-side score: cosine similarity for prompts, logit for probes.
   */
  float score_positive;
  float score_negative;
} CgVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cg_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cg_last_error_message(void);

/**
 * Loads weights and a vocabulary bundle. `vocab_path` may be null, in which
 * case `vocab.bundle` next to the weights is used.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CgStatus cg_model_open(const char *weights_path, const char *vocab_path, struct CgModel **out);

/**
 * # Safety
 * `model` must be null or a handle from `cg_model_open` not yet freed.
 */
void cg_model_free(struct CgModel *model);

/**
 * Length of every embedding produced by `model`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cg_model_embed_dim(const struct CgModel *model);

/**
 * Side length of the square input image, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cg_model_image_resolution(const struct CgModel *model);

/**
 * Resizes a channel-major 3 x `height` x `width` composite with values in
 * [0, 1] to the model resolution and standardizes it. `out` must hold
 * 3 * resolution^2 floats.
 *
 * # Safety
 * `composite` must hold 3 * width * height floats, `out` `out_len` floats.
 */
enum CgStatus cg_model_preprocess(const struct CgModel *model,
                                  const float *composite,
                                  size_t width,
                                  size_t height,
                                  float *out,
                                  size_t out_len);

/**
 * Encodes preprocessed pixels (3 x resolution x resolution, channel-major)
 * into a unit-norm embedding of `cg_model_embed_dim` floats.
 *
 * # Safety
 * `pixels` must hold `pixels_len` floats and `out` `out_len` floats.
 */
enum CgStatus cg_model_encode_image(const struct CgModel *model,
                                    const float *pixels,
                                    size_t pixels_len,
                                    float *out,
                                    size_t out_len);

/**
 * Tokenizes and encodes `text` into a unit-norm embedding.
 *
 * # Safety
 * `text` must be NUL-terminated and `out` hold `out_len` floats.
 */
enum CgStatus cg_model_encode_text(const struct CgModel *model,
                                   const char *text,
                                   float *out,
                                   size_t out_len);

/**
 * Encodes a prompt pair. Null `positive`/`negative` select the default
 * prompts.
 *
 * # Safety
 * `model` must be live, strings null or NUL-terminated, `out` writable.
 */
enum CgStatus cg_prompts_new(const struct CgModel *model,
                             const char *positive,
                             const char *negative,
                             struct CgPrompts **out);

/**
 * Builds the class prompts from a trained CoOp context file.
 *
 * # Safety
 * `model` must be live, `context_path` NUL-terminated, `out` writable.
 */
enum CgStatus cg_prompts_from_context(const struct CgModel *model,
                                      const char *context_path,
                                      struct CgPrompts **out);

/**
 * # Safety
 * `prompts` must be null or a live handle.
 */
void cg_prompts_free(struct CgPrompts *prompts);

/**
 * Classifies a unit-norm image embedding against a prompt pair.
 *
 * # Safety
 * `embedding` must hold `len` floats; `out` must be writable.
 */
enum CgStatus cg_classify(const struct CgPrompts *prompts,
                          const float *embedding,
                          size_t len,
                          struct CgVerdict *out);

/**
 * Loads a linear probe written by `cloudgate train-probe`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum CgStatus cg_probe_load(const char *path, struct CgProbe **out);

/**
 * # Safety
 * `probe` must be null or a live handle.
 */
void cg_probe_free(struct CgProbe *probe);

/**
 * Feature length the probe expects: the embedding size, or twice that for
 * radar-fused probes. 0 for a null handle.
 *
 * # Safety
 * `probe` must be null or a live handle.
 */
size_t cg_probe_input_dim(const struct CgProbe *probe);

/**
 * Applies the probe to a feature vector of `cg_probe_input_dim` floats.
 *
 * # Safety
 * `features` must hold `len` floats; `out` must be writable.
 */
enum CgStatus cg_probe_predict(const struct CgProbe *probe,
                               const float *features,
                               size_t len,
                               struct CgVerdict *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOUDGATE_H */
