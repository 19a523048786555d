#ifndef FDRSVM_H
#define FDRSVM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdrsvmStatus {
  FDRSVM_STATUS_OK = 0,
  FDRSVM_STATUS_NULL_POINTER = 1,
  FDRSVM_STATUS_INVALID_ARGUMENT = 2,
  FDRSVM_STATUS_CONFIG = 3,
  FDRSVM_STATUS_DATA = 4,
  FDRSVM_STATUS_TRAINING = 5,
  FDRSVM_STATUS_IO = 6,
  FDRSVM_STATUS_PANIC = 7,
} FdrsvmStatus;

typedef enum FdrsvmNorm {
  FDRSVM_NORM_L1 = 0,
  FDRSVM_NORM_L_INF = 1,
} FdrsvmNorm;

typedef struct FdrsvmConfig FdrsvmConfig;

// Labeled samples with raw (unscaled) features.
typedef struct FdrsvmDataset FdrsvmDataset;

// Weights plus the feature scaling they were trained with.
typedef struct FdrsvmModel FdrsvmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *fdrsvm_last_error(void);

// Builds a dataset from a row-major `n x p` feature matrix and `n` labels.
//
// # Safety
// `x` must point to `n * p` doubles, `y` to `n` ints, `out` to writable storage.
enum FdrsvmStatus fdrsvm_dataset_new(const double *x,
                                     const int32_t *y,
                                     size_t n,
                                     size_t p,
                                     struct FdrsvmDataset **out);

// Loads a CSV with a header row. `positive_label` marks the +1 class.
//
// # Safety
// String arguments must be nul-terminated; `out` must be writable.
enum FdrsvmStatus fdrsvm_dataset_load_csv(const char *path,
                                          const char *label_column,
                                          const char *positive_label,
                                          struct FdrsvmDataset **out);

// Number of samples, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live dataset handle.
size_t fdrsvm_dataset_len(const struct FdrsvmDataset *data);

// Number of features, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live dataset handle.
size_t fdrsvm_dataset_dim(const struct FdrsvmDataset *data);

// # Safety
// `data` must be NULL or a handle not freed before.
void fdrsvm_dataset_free(struct FdrsvmDataset *data);

// Parses an experiment config from TOML text.
//
// # Safety
// `toml` must be nul-terminated; `out` must be writable.
enum FdrsvmStatus fdrsvm_config_from_toml(const char *toml, struct FdrsvmConfig **out);

// Reads an experiment config file. Relative dataset paths resolve
// against the current directory.
//
// # Safety
// `path` must be nul-terminated; `out` must be writable.
enum FdrsvmStatus fdrsvm_config_load(const char *path, struct FdrsvmConfig **out);

// # Safety
// `cfg` must be NULL or a handle not freed before.
void fdrsvm_config_free(struct FdrsvmConfig *cfg);

// Runs one repetition of the configured experiment: tunes on the training
// split of `seed`, refits and writes the held-out F1 and MCCR. `f1` and
// `mccr` may be NULL.
//
// # Safety
// `cfg` must be a live handle; `out` writable; `f1`/`mccr` NULL or writable.
enum FdrsvmStatus fdrsvm_train(const struct FdrsvmConfig *cfg,
                               uint64_t seed,
                               struct FdrsvmModel **out,
                               double *f1,
                               double *mccr);

// Fits the pooled distributionally robust SVM on `data` after min-max
// scaling and appending an intercept feature.
//
// # Safety
// `data` must be a live handle; `out` writable.
enum FdrsvmStatus fdrsvm_train_central(const struct FdrsvmDataset *data,
                                       double epsilon,
                                       double kappa,
                                       enum FdrsvmNorm norm,
                                       struct FdrsvmModel **out);

// Restores a model saved as JSON (the `--model-out` format of the CLI).
//
// # Safety
// `json` must be nul-terminated; `out` writable.
enum FdrsvmStatus fdrsvm_model_from_json(const char *json, struct FdrsvmModel **out);

// Serializes a model to JSON. Release the string with [`fdrsvm_string_free`].
//
// # Safety
// `model` must be a live handle; `out` writable.
enum FdrsvmStatus fdrsvm_model_to_json(const struct FdrsvmModel *model, char **out);

// # Safety
// `s` must be NULL or a string returned by this library and not freed before.
void fdrsvm_string_free(char *s);

// Number of weights, including the intercept if there is one.
//
// # Safety
// `model` must be NULL or a live handle.
size_t fdrsvm_model_num_weights(const struct FdrsvmModel *model);

// Copies the weights into `out`, which must hold exactly `len` doubles.
//
// # Safety
// `model` must be a live handle; `out` must point to `len` doubles.
enum FdrsvmStatus fdrsvm_model_weights(const struct FdrsvmModel *model, double *out, size_t len);

// Predicts `+1` / `-1` for `n` raw feature rows of width `p`.
//
// # Safety
// `model` must be a live handle; `x` must hold `n * p` doubles and `out` `n` ints.
enum FdrsvmStatus fdrsvm_model_predict(const struct FdrsvmModel *model,
                                       const double *x,
                                       size_t n,
                                       size_t p,
                                       int32_t *out);

// Scores the model on a dataset of raw features.
//
// # Safety
// `model` and `data` must be live handles; `f1`/`mccr` NULL or writable.
enum FdrsvmStatus fdrsvm_model_evaluate(const struct FdrsvmModel *model,
                                        const struct FdrsvmDataset *data,
                                        double *f1,
                                        double *mccr);

// # Safety
// `model` must be NULL or a handle not freed before.
void fdrsvm_model_free(struct FdrsvmModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDRSVM_H */
