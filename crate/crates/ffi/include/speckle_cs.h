/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SPECKLE_CS_H
#define SPECKLE_CS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SPK_STATUS_OK = 0,
  SPK_STATUS_NULL_POINTER = 1,
  SPK_STATUS_INVALID_ARGUMENT = 2,
  SPK_STATUS_SHAPE = 3,
  SPK_STATUS_IO = 4,
  SPK_STATUS_FORMAT = 5,
  SPK_STATUS_NON_FINITE = 6,
  SPK_STATUS_MISSING_ARTIFACT = 7,
  SPK_STATUS_RECONSTRUCTION = 8,
  /**
   * The result is mathematically undefined (e.g. correlation of a constant).
   */
  SPK_STATUS_UNDEFINED = 9,
  SPK_STATUS_PANIC = 10,
} SpkStatus;

/**
 * Measurement matrix handle.
 */
typedef struct SpkMatrix SpkMatrix;

/**
 * Generator model handle.
 */
typedef struct SpkModel SpkModel;

/**
 * Summary of an l1 solve.
 */
typedef struct {
  double residual_norm;
  double l1_norm;
  double tau;
  size_t iterations;
  bool converged;
} SpkSolveInfo;

/**
 * Latent-descent settings; see [`spk_recon_options_default`].
 */
typedef struct {
  size_t steps;
  size_t restarts;
  double learning_rate;
  uint64_t seed;
} SpkReconOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spk_version(void);

/**
 * Message of the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *spk_last_error(void);

/**
 * One speckle intensity pattern, row-major, `grid * grid` values.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
SpkStatus spk_generate_speckle(size_t grid,
                               double cutoff,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

/**
 * Ideal low-pass filter of a `width x height` image at relative cutoff `cutoff`.
 *
 * # Safety
 * `pixels` and `out` must each hold `width * height` doubles.
 */
SpkStatus spk_low_pass(const double *pixels,
                       size_t width,
                       size_t height,
                       double cutoff,
                       double *out);

/**
 * Simulated speckle matrix: `count` patterns on a `grid x grid` field.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
SpkStatus spk_matrix_build(size_t count,
                           size_t grid,
                           double cutoff,
                           uint64_t seed,
                           SpkMatrix **out);

/**
 * Matrix from `rows * cols` row-major values, copied.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles; `out` must be a valid handle slot.
 */
SpkStatus spk_matrix_from_data(size_t rows, size_t cols, const double *data, SpkMatrix **out);

/**
 * Matrix from a raw file with its JSON sidecar.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` a valid handle slot.
 */
SpkStatus spk_matrix_load(const char *file, SpkMatrix **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t spk_matrix_rows(const SpkMatrix *m);

/**
 * Number of columns, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t spk_matrix_cols(const SpkMatrix *m);

/**
 * Bucket signal `y = A x` for a flattened image `x` of `cols` values.
 *
 * # Safety
 * `x` must hold `x_len` doubles and `y` `y_len` writable doubles.
 */
SpkStatus spk_matrix_measure(const SpkMatrix *m,
                             const double *x,
                             size_t x_len,
                             double *y,
                             size_t y_len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void spk_matrix_free(SpkMatrix *m);

/**
 * Basis pursuit: `min ‖x‖₁` subject to `A x = y`.
 *
 * # Safety
 * `y` must hold `y_len` doubles, `x` `x_len` writable doubles; `info` may be null.
 */
SpkStatus spk_solve_bp(const SpkMatrix *m,
                       const double *y,
                       size_t y_len,
                       double *x,
                       size_t x_len,
                       SpkSolveInfo *info);

/**
 * Basis pursuit denoising: `min ‖x‖₁` subject to `‖A x − y‖₂ ≤ delta`.
 *
 * # Safety
 * As for [`spk_solve_bp`].
 */
SpkStatus spk_solve_bpdn(const SpkMatrix *m,
                         const double *y,
                         size_t y_len,
                         double delta,
                         double *x,
                         size_t x_len,
                         SpkSolveInfo *info);

/**
 * Load a GGW1 generator file.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` a valid handle slot.
 */
SpkStatus spk_model_load(const char *file, SpkModel **out);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t spk_model_latent_dim(const SpkModel *model);

/**
 * Number of output pixels, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t spk_model_output_len(const SpkModel *model);

/**
 * Generator output `G(z)`, in the generator's own range.
 *
 * # Safety
 * `z` must hold `z_len` doubles and `out` `out_len` writable doubles.
 */
SpkStatus spk_model_forward(const SpkModel *model,
                            const double *z,
                            size_t z_len,
                            double *out,
                            size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void spk_model_free(SpkModel *model);

/**
 * Library defaults for latent descent.
 */
SpkReconOptions spk_recon_options_default(void);

/**
 * Reconstruction by gradient descent over the generator latent.
 * `image` receives `(G(ẑ) + 1) / 2`; `best_loss` may be null.
 *
 * # Safety
 * `y` must hold `y_len` doubles and `image` `image_len` writable doubles.
 */
SpkStatus spk_gan_reconstruct(const SpkModel *model,
                              const SpkMatrix *m,
                              const double *y,
                              size_t y_len,
                              SpkReconOptions options,
                              double *image,
                              size_t image_len,
                              double *best_loss);

/**
 * Pearson correlation of two equal-length vectors.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; `r` must be writable.
 */
SpkStatus spk_pearson(const double *a, const double *b, size_t len, double *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECKLE_CS_H */
