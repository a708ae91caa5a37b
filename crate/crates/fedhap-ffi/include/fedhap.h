/* C interface for the fedhap federated hashing library. */

#ifndef FEDHAP_H
#define FEDHAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a fedhap call. `Ok` is zero; every failure is nonzero and leaves
// a message in the thread-local error slot.
typedef enum FedhapStatus {
  FEDHAP_STATUS_OK = 0,
  // A required pointer argument was NULL.
  FEDHAP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  FEDHAP_STATUS_INVALID_UTF8 = 2,
  FEDHAP_STATUS_CONFIG = 3,
  FEDHAP_STATUS_USAGE = 4,
  FEDHAP_STATUS_TRAINING = 5,
  FEDHAP_STATUS_DOMAIN = 6,
  FEDHAP_STATUS_PROTOCOL = 7,
  FEDHAP_STATUS_PARSE = 8,
  FEDHAP_STATUS_IO = 9,
  FEDHAP_STATUS_JSON = 10,
  // An internal panic was caught at the ABI boundary.
  FEDHAP_STATUS_PANIC = 11,
} FedhapStatus;

// Opaque handle to an in-memory dataset.
typedef struct FedhapDataset FedhapDataset;

// Opaque handle to the results of a completed run.
typedef struct FedhapRunResult FedhapRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the library version as a static NUL-terminated string.
const char *fedhap_version(void);

// Returns the message for the most recent error on this thread, or an empty
// string if the last call succeeded. The pointer stays valid until the next
// fedhap call on the same thread.
const char *fedhap_last_error_message(void);

// Releases a string returned by a fedhap function. NULL is a no-op.
//
// # Safety
// `s` must be NULL or a pointer previously returned by this library and not
// yet freed.
void fedhap_string_free(char *s);

// Loads a dataset from a CSV file. On success writes a new handle to `out`.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be valid for
// writes.
enum FedhapStatus fedhap_dataset_load_csv(const char *path, struct FedhapDataset **out);

// Generates a synthetic dataset from a JSON spec (same schema as the CLI's
// `synthetic` config block). On success writes a new handle to `out`.
//
// # Safety
// `spec_json` must be a valid NUL-terminated string; `out` must be valid for
// writes.
enum FedhapStatus fedhap_dataset_generate(const char *spec_json, struct FedhapDataset **out);

// Writes a dataset to a CSV file in the format `fedhap_dataset_load_csv`
// reads.
//
// # Safety
// `dataset` must be a live handle from this library; `path` must be a valid
// NUL-terminated string.
enum FedhapStatus fedhap_dataset_save_csv(const struct FedhapDataset *dataset, const char *path);

// Number of samples in the dataset. Returns 0 on a NULL handle.
//
// # Safety
// `dataset` must be NULL or a live handle from this library.
size_t fedhap_dataset_samples(const struct FedhapDataset *dataset);

// Feature dimension of the dataset. Returns 0 on a NULL handle.
//
// # Safety
// `dataset` must be NULL or a live handle from this library.
size_t fedhap_dataset_dim(const struct FedhapDataset *dataset);

// Number of label classes in the dataset. Returns 0 on a NULL handle.
//
// # Safety
// `dataset` must be NULL or a live handle from this library.
size_t fedhap_dataset_classes(const struct FedhapDataset *dataset);

// Releases a dataset handle. NULL is a no-op.
//
// # Safety
// `dataset` must be NULL or a live handle from this library, not yet freed.
void fedhap_dataset_free(struct FedhapDataset *dataset);

// Executes a full federated run from a JSON config (same schema as the CLI's
// `run --config` file) and writes reports into `out_dir`. `jobs` caps worker
// threads; pass 0 to size the pool automatically. On success writes a new
// result handle to `out`.
//
// # Safety
// `config_json` and `out_dir` must be valid NUL-terminated strings; `out`
// must be valid for writes.
enum FedhapStatus fedhap_run_json(const char *config_json,
                                  const char *out_dir,
                                  size_t jobs,
                                  struct FedhapRunResult **out);

// Mean average precision of the final model. Returns NaN on a NULL handle.
//
// # Safety
// `result` must be NULL or a live handle from this library.
double fedhap_result_final_map(const struct FedhapRunResult *result);

// Mean average precision of the untrained round-0 model. Returns NaN on a
// NULL handle.
//
// # Safety
// `result` must be NULL or a live handle from this library.
double fedhap_result_round0_map(const struct FedhapRunResult *result);

// Serializes the full run summary (final metrics, PR curve, top-N table) as
// an owned JSON string. Free it with `fedhap_string_free`.
//
// # Safety
// `result` must be a live handle from this library; `out` must be valid for
// writes.
enum FedhapStatus fedhap_result_summary_json(const struct FedhapRunResult *result, char **out);

// Releases a run-result handle. NULL is a no-op.
//
// # Safety
// `result` must be NULL or a live handle from this library, not yet freed.
void fedhap_result_free(struct FedhapRunResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDHAP_H */
