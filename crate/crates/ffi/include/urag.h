#ifndef URAG_H
#define URAG_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum UragStatus {
  URAG_STATUS_OK = 0,
  URAG_STATUS_NULL_ARGUMENT = 1,
  URAG_STATUS_INVALID_UTF8 = 2,
  URAG_STATUS_INVALID_ARGUMENT = 3,
  URAG_STATUS_CONFIG = 4,
  URAG_STATUS_STORE = 5,
  URAG_STATUS_PROVIDER = 6,
  URAG_STATUS_INTERNAL = 7,
} UragStatus;

// Opaque engine handle.
typedef struct UragEngine UragEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Opens the store at `store_dir`. `config_path` may be null, in which case
// `<store_dir>/urag.toml` is used when present. With `mock_providers` the
// deterministic offline providers are used; otherwise endpoints come from
// the `URAG_EMBED_*` and `URAG_GEN_*` environment variables.
//
// # Safety
// `store_dir` and a non-null `config_path` must be valid C strings; `out`
// must be a valid pointer.
enum UragStatus urag_engine_open(const char *store_dir,
                                 const char *config_path,
                                 bool mock_providers,
                                 struct UragEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` must come from [`urag_engine_open`] and not be used afterwards.
void urag_engine_free(struct UragEngine *engine);

// Answers `question`. On success `*out_json` receives the answer envelope
// as JSON: `query`, `answer_text`, `tier`, `matches`, `disclaimer_applied`,
// `latency_ms`.
//
// # Safety
// `engine` must be a live handle, `question` a valid C string and
// `out_json` a valid pointer.
enum UragStatus urag_engine_ask(const struct UragEngine *engine,
                                const char *question,
                                char **out_json);

// Re-reads the store and swaps the engine's snapshot.
//
// # Safety
// `engine` must be a live handle.
enum UragStatus urag_engine_reload(const struct UragEngine *engine);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void urag_string_free(char *s);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *urag_last_error_message(void);

// Cosine similarity of two vectors of length `len`.
//
// # Safety
// `a` and `b` must point to `len` floats; `out` must be a valid pointer.
enum UragStatus urag_cosine(const float *a, const float *b, size_t len, double *out);

// Fraction of `true` values among `n` judgments.
//
// # Safety
// `correct` must point to `n` bools; `out` must be a valid pointer.
enum UragStatus urag_accuracy(const bool *correct, size_t n, double *out);

// Mean reciprocal rank of `n` 1-based ranks; 0 means nothing relevant was
// retrieved.
//
// # Safety
// `ranks` must point to `n` values; `out` must be a valid pointer.
enum UragStatus urag_mrr(const uint32_t *ranks, size_t n, double *out);

// Library version, static storage.
const char *urag_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URAG_H */
