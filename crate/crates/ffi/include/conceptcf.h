#ifndef CONCEPTCF_H
#define CONCEPTCF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum CcfStatus {
  CCF_STATUS_OK = 0,
  CCF_STATUS_NULL_POINTER = 1,
  CCF_STATUS_INVALID_UTF8 = 2,
  // Bad input: malformed files, dimension mismatches, unknown ids.
  CCF_STATUS_VALIDATION = 3,
  // I/O, transport or numerical failure.
  CCF_STATUS_RUNTIME = 4,
  CCF_STATUS_PANIC = 5,
} CcfStatus;

// Trained linear privacy classifier.
typedef struct CcfClassifier CcfClassifier;

// Loaded dataset manifest.
typedef struct CcfManifest CcfManifest;

// Embedding provider bound to a manifest.
typedef struct CcfProvider CcfProvider;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next `ccf_*` call on the same thread.
const char *ccf_last_error_message(void);

// # Safety
// `s` must come from a `ccf_*` string out-parameter and not be freed twice.
void ccf_string_free(char *s);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CcfStatus ccf_manifest_load(const char *path, struct CcfManifest **out);

// # Safety
// `m` must be NULL or a handle from [`ccf_manifest_load`].
void ccf_manifest_free(struct CcfManifest *m);

// # Safety
// `m` must be a live manifest handle; outputs must be writable.
enum CcfStatus ccf_manifest_info(const struct CcfManifest *m, size_t *records, size_t *dimension);

// Trains a classifier with the default recipe, overriding epochs, learning
// rate, batch size and shuffle seed.
//
// # Safety
// `m` must be a live manifest handle; `out` must be writable.
enum CcfStatus ccf_classifier_train(const struct CcfManifest *m,
                                    size_t epochs,
                                    double learning_rate,
                                    size_t batch_size,
                                    uint64_t seed,
                                    struct CcfClassifier **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CcfStatus ccf_classifier_load(const char *path, struct CcfClassifier **out);

// # Safety
// `c` must be NULL or a classifier handle.
void ccf_classifier_free(struct CcfClassifier *c);

// Predicts one embedding. `is_private` receives 1 or 0, `confidence` the
// probability of the predicted class.
//
// # Safety
// `x` must point to `len` readable doubles; outputs must be writable.
enum CcfStatus ccf_classifier_predict(const struct CcfClassifier *c,
                                      const double *x,
                                      size_t len,
                                      int *is_private,
                                      double *confidence);

// Synthetic oracle provider serving image embeddings and tags from `m`.
//
// # Safety
// `m` must be a live manifest handle; `out` must be writable.
enum CcfStatus ccf_provider_synthetic(const struct CcfManifest *m,
                                      uint64_t seed,
                                      struct CcfProvider **out);

// # Safety
// `p` must be NULL or a provider handle.
void ccf_provider_free(struct CcfProvider *p);

// Explains one image and writes its explanation set as JSON.
//
// # Safety
// Handles must be live; `image_id` NUL-terminated; `out_json` writable.
enum CcfStatus ccf_explain_image_json(const struct CcfManifest *m,
                                      const struct CcfClassifier *c,
                                      const struct CcfProvider *p,
                                      const char *image_id,
                                      size_t max_length,
                                      size_t q,
                                      char **out_json);

// Scores explanation sets given as JSON lines and writes the metric report
// as JSON. `unordered_diversity` non-zero selects the unordered-mean
// diversity variant.
//
// # Safety
// Handles must be live; `explanations_jsonl` NUL-terminated; `out_json`
// writable.
enum CcfStatus ccf_evaluate_json(const struct CcfManifest *m,
                                 const struct CcfProvider *p,
                                 const char *explanations_jsonl,
                                 int unordered_diversity,
                                 char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONCEPTCF_H */
