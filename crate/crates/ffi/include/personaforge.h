#ifndef PERSONAFORGE_H
#define PERSONAFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_ARGUMENT = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_INVALID = 3,
  PF_STATUS_NOT_FOUND = 4,
  PF_STATUS_CONFLICT = 5,
  PF_STATUS_INSUFFICIENT_DATA = 6,
  PF_STATUS_NOT_TRAINED = 7,
  PF_STATUS_UNAVAILABLE = 8,
  PF_STATUS_IO = 9,
  PF_STATUS_INTERNAL = 10,
  PF_STATUS_PANIC = 11,
} PfStatus;

/**
 * Opaque pipeline handle.
 */
typedef struct PfPipeline PfPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *pf_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void pf_string_free(char *s);

/**
 * Opens (or creates) a store at `data_dir`. `config_path` may be null for
 * the default configuration.
 *
 * # Safety
 * String arguments are null or NUL-terminated; `out` is valid for writes.
 */
enum PfStatus pf_pipeline_open(const char *data_dir,
                               const char *config_path,
                               struct PfPipeline **out);

/**
 * # Safety
 * `h` is null or was returned by [`pf_pipeline_open`] and not yet freed.
 */
void pf_pipeline_free(struct PfPipeline *h);

/**
 * Either directory may be null. Writes the ingest summary.
 *
 * # Safety
 * `h` is a live handle; strings are null or NUL-terminated; `out` is valid.
 */
enum PfStatus pf_ingest(const struct PfPipeline *h,
                        const char *brand_dir,
                        const char *user_dir,
                        char **out);

/**
 * # Safety
 * `h` is a live handle; `out` is valid for writes.
 */
enum PfStatus pf_train_profiler(const struct PfPipeline *h, char **out);

/**
 * # Safety
 * `h` is a live handle; `industry` is NUL-terminated; `out` is valid.
 */
enum PfStatus pf_train_generator(const struct PfPipeline *h, const char *industry, char **out);

/**
 * `user` is an id or a handle.
 *
 * # Safety
 * `h` is a live handle; `user` is NUL-terminated; `out` is valid.
 */
enum PfStatus pf_infer(const struct PfPipeline *h, const char *user, char **out);

/**
 * Writes the round as served to clients.
 *
 * # Safety
 * `h` is a live handle; strings are NUL-terminated; `out` is valid.
 */
enum PfStatus pf_generate(const struct PfPipeline *h,
                          const char *user_id,
                          const char *industry,
                          size_t num_variants,
                          char **out);

/**
 * `feedback_json` has the same fields as the HTTP feedback request.
 *
 * # Safety
 * `h` is a live handle; `feedback_json` is NUL-terminated.
 */
enum PfStatus pf_submit_feedback(const struct PfPipeline *h, const char *feedback_json);

/**
 * # Safety
 * `h` is a live handle; `round_id` is NUL-terminated; `out` is valid.
 */
enum PfStatus pf_close_round(const struct PfPipeline *h, const char *round_id, char **out);

/**
 * Advances the logical clock. Retrain jobs started by the tick run in the
 * background.
 *
 * # Safety
 * `h` is a live handle; `out` is valid for writes.
 */
enum PfStatus pf_tick(const struct PfPipeline *h, uint64_t hours, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSONAFORGE_H */
