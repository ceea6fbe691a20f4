#ifndef ACDT_H
#define ACDT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>

// Result code of every fallible call.
typedef enum AcdtStatus {
  ACDT_STATUS_OK = 0,
  // A required pointer argument was null.
  ACDT_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  ACDT_STATUS_INVALID_UTF8 = 2,
  // A file could not be read or written.
  ACDT_STATUS_IO = 3,
  // Malformed or unusable input data.
  ACDT_STATUS_DATASET = 4,
  // Invalid parameter or configuration text.
  ACDT_STATUS_CONFIG = 5,
  ACDT_STATUS_DIMENSION = 6,
  ACDT_STATUS_NUMERICAL = 7,
  // Unreadable or inconsistent model bundle.
  ACDT_STATUS_BUNDLE = 8,
  // An output buffer was too small.
  ACDT_STATUS_BUFFER_TOO_SMALL = 9,
  ACDT_STATUS_PANIC = 10,
} AcdtStatus;

// Opaque handle to a fitted model bundle.
typedef struct AcdtBundle AcdtBundle;

// Opaque handle to a dataset.
typedef struct AcdtDataset AcdtDataset;

// Message of the last failed call on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *acdt_last_error(void);

// Library version as a static NUL-terminated string.
const char *acdt_version(void);

// Loads a CSV with a header row. `response` names the response column and
// may be null for a dataset without one.
//
// # Safety
// `path` and (if non-null) `response` must be NUL-terminated strings;
// `out` must be a valid pointer.
enum AcdtStatus acdt_dataset_load_csv(const char *path,
                                      const char *response,
                                      struct AcdtDataset **out);

// Builds a dataset from a row-major `n_rows × n_cols` feature array and an
// optional response of length `n_rows` (null for none). Features are named
// `x1..xp` and the response `y`.
//
// # Safety
// `features` must point to `n_rows * n_cols` doubles; `response`, if
// non-null, to `n_rows` doubles; `out` must be a valid pointer.
enum AcdtStatus acdt_dataset_from_rows(const double *features,
                                       size_t n_rows,
                                       size_t n_cols,
                                       const double *response,
                                       struct AcdtDataset **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `data` must be null or a handle from this library.
size_t acdt_dataset_rows(const struct AcdtDataset *data);

// Number of feature columns, or 0 for a null handle.
//
// # Safety
// `data` must be null or a handle from this library.
size_t acdt_dataset_cols(const struct AcdtDataset *data);

// Releases a dataset. Null is ignored.
//
// # Safety
// `data` must be null or a handle from this library not yet freed.
void acdt_dataset_free(struct AcdtDataset *data);

// Fits the full pipeline. `test` (target rows) and `config` (newline
// separated `key = value` settings, same keys as the command line) may be
// null. When `rmse` is non-null it receives the test RMSE in z-scored
// units, or NaN when the test set has no response.
//
// # Safety
// Handles must come from this library; `config`, if non-null, must be a
// NUL-terminated string; `out` must be a valid pointer.
enum AcdtStatus acdt_fit(const struct AcdtDataset *train,
                         const struct AcdtDataset *test,
                         const char *config,
                         struct AcdtBundle **out,
                         double *rmse);

// Predicts every row of `data`. `out_raw` receives predictions on the
// response's original scale and `out_z` (may be null) the z-scored ones;
// both must hold at least `capacity` values, and `capacity` must be at
// least the row count.
//
// # Safety
// Handles must come from this library; the output buffers must be valid
// for `capacity` writes.
enum AcdtStatus acdt_bundle_predict(const struct AcdtBundle *bundle,
                                    const struct AcdtDataset *data,
                                    double *out_raw,
                                    double *out_z,
                                    size_t capacity);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AcdtStatus acdt_bundle_load(const char *path, struct AcdtBundle **out);

// # Safety
// `bundle` must come from this library and `path` be NUL-terminated.
enum AcdtStatus acdt_bundle_save(const struct AcdtBundle *bundle, const char *path);

// Number of input features the bundle expects, or 0 for a null handle.
//
// # Safety
// `bundle` must be null or a handle from this library.
size_t acdt_bundle_features(const struct AcdtBundle *bundle);

// Number of latent domains found while fitting, or 0 for a null handle.
//
// # Safety
// `bundle` must be null or a handle from this library.
size_t acdt_bundle_domains(const struct AcdtBundle *bundle);

// Releases a bundle. Null is ignored.
//
// # Safety
// `bundle` must be null or a handle from this library not yet freed.
void acdt_bundle_free(struct AcdtBundle *bundle);

#endif  /* ACDT_H */
