#ifndef MODEGAN_H
#define MODEGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ModeganStatus {
  MODEGAN_STATUS_OK = 0,
  MODEGAN_STATUS_NULL_POINTER = 1,
  MODEGAN_STATUS_INVALID_ARGUMENT = 2,
  MODEGAN_STATUS_CONFIG = 3,
  MODEGAN_STATUS_DIMENSION = 4,
  MODEGAN_STATUS_USAGE = 5,
  MODEGAN_STATUS_PARSE = 6,
  MODEGAN_STATUS_CHECKPOINT = 7,
  MODEGAN_STATUS_NUMERIC = 8,
  MODEGAN_STATUS_IO = 9,
  MODEGAN_STATUS_BUFFER_TOO_SMALL = 10,
  MODEGAN_STATUS_PANIC = 11,
} ModeganStatus;

/**
 * A frozen autoencoder loaded from a checkpoint.
 */
typedef struct ModeganAutoencoder ModeganAutoencoder;

/**
 * A mode bank with its penalty-weight history.
 */
typedef struct ModeganBank ModeganBank;

/**
 * A Gaussian mixture benchmark.
 */
typedef struct ModeganMixture ModeganMixture;

/**
 * Final metrics of a sample set.
 */
typedef struct ModeganReport {
  size_t modes_found;
  double hqs;
  /**
   * Natural log, in [0, ln 2].
   */
  double jsd;
} ModeganReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *modegan_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 * Returns 0 when the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t modegan_last_error_message(char *buf, size_t len);

/**
 * Builds a benchmark mixture (`ring8`, `grid25`, `random25`, `cube27`) with
 * default geometry. `mixture_seed` only matters for `random25`.
 *
 * # Safety
 * `benchmark` must be a NUL-terminated string; `out` must be writable.
 */
enum ModeganStatus modegan_mixture_new(const char *benchmark,
                                       uint64_t mixture_seed,
                                       struct ModeganMixture **out);

/**
 * Data dimension, or 0 for a null handle.
 *
 * # Safety
 * `mix` must be null or a live handle.
 */
size_t modegan_mixture_dim(const struct ModeganMixture *mix);

/**
 * Number of components, or 0 for a null handle.
 *
 * # Safety
 * `mix` must be null or a live handle.
 */
size_t modegan_mixture_components(const struct ModeganMixture *mix);

/**
 * Draws `n` samples into `out` (`n * dim` values).
 *
 * # Safety
 * `mix` must be a live handle and `out` must hold `out_len` doubles.
 */
enum ModeganStatus modegan_mixture_sample(const struct ModeganMixture *mix,
                                          size_t n,
                                          uint64_t seed,
                                          double *out,
                                          size_t out_len);

/**
 * Scores generated samples against reference samples of the same mixture
 * with the default metric settings (3 sigma, one hit per mode, auto bins).
 *
 * # Safety
 * `mix` must be a live handle; `gens` and `reals` must hold `rows * dim`
 * doubles each; `out` must be writable.
 */
enum ModeganStatus modegan_mixture_evaluate(const struct ModeganMixture *mix,
                                            const double *gens,
                                            size_t gen_rows,
                                            const double *reals,
                                            size_t real_rows,
                                            struct ModeganReport *out);

/**
 * # Safety
 * `mix` must be null or a handle not freed before.
 */
void modegan_mixture_free(struct ModeganMixture *mix);

/**
 * Jensen-Shannon divergence (nats) of two histograms of length `len`.
 *
 * # Safety
 * `p` and `q` must hold `len` doubles; `out` must be writable.
 */
enum ModeganStatus modegan_jsd(const double *p, const double *q, size_t len, double *out);

/**
 * Loads an autoencoder checkpoint. Only frozen encoders are accepted.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ModeganStatus modegan_autoencoder_load(const char *path, struct ModeganAutoencoder **out);

/**
 * Input dimension, or 0 for a null handle.
 *
 * # Safety
 * `ae` must be null or a live handle.
 */
size_t modegan_autoencoder_data_dim(const struct ModeganAutoencoder *ae);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `ae` must be null or a live handle.
 */
size_t modegan_autoencoder_latent_dim(const struct ModeganAutoencoder *ae);

/**
 * Encodes `rows` inputs into `out` (`rows * latent_dim` values).
 *
 * # Safety
 * `ae` must be a live handle; `x` must hold `rows * data_dim` doubles and
 * `out` `out_len` doubles.
 */
enum ModeganStatus modegan_autoencoder_encode(const struct ModeganAutoencoder *ae,
                                              const double *x,
                                              size_t rows,
                                              double *out,
                                              size_t out_len);

/**
 * # Safety
 * `ae` must be null or a handle not freed before.
 */
void modegan_autoencoder_free(struct ModeganAutoencoder *ae);

/**
 * Encodes `n` distinct rows drawn from `reals` into a new bank with
 * history length `k`. All weights start at 1.
 *
 * # Safety
 * `reals` must hold `rows * data_dim` doubles; `ae` must be a live handle;
 * `out` must be writable.
 */
enum ModeganStatus modegan_bank_extract(const double *reals,
                                        size_t rows,
                                        const struct ModeganAutoencoder *ae,
                                        size_t n,
                                        size_t k,
                                        uint64_t seed,
                                        struct ModeganBank **out);

/**
 * Number of modes, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t modegan_bank_len(const struct ModeganBank *bank);

/**
 * Copies the current penalty weights (one per mode).
 *
 * # Safety
 * `bank` must be a live handle; `out` must hold `out_len` doubles.
 */
enum ModeganStatus modegan_bank_weights(const struct ModeganBank *bank,
                                        double *out,
                                        size_t out_len);

/**
 * Matches `rows` generated encodings to the bank, writes the weighted mode
 * distance to `out_dist`, then pushes the matched distances into the
 * weight history.
 *
 * # Safety
 * `bank` must be a live handle; `encodings` must hold
 * `rows * latent_dim` doubles; `out_dist` must be writable.
 */
enum ModeganStatus modegan_bank_observe(struct ModeganBank *bank,
                                        const double *encodings,
                                        size_t rows,
                                        double *out_dist);

/**
 * # Safety
 * `bank` must be null or a handle not freed before.
 */
void modegan_bank_free(struct ModeganBank *bank);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODEGAN_H */
