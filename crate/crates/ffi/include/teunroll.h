#ifndef TEUNROLL_H
#define TEUNROLL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TeStatus {
  TE_STATUS_OK = 0,
  TE_STATUS_NULL_POINTER = 1,
  TE_STATUS_DIMENSION = 2,
  TE_STATUS_INVALID_ARGUMENT = 3,
  TE_STATUS_NUMERIC = 4,
  TE_STATUS_IO = 5,
  TE_STATUS_PANIC = 6,
} TeStatus;

typedef enum TeProxKind {
  TE_PROX_KIND_IDENTITY = 0,
  TE_PROX_KIND_SOFT_THRESHOLD = 1,
  TE_PROX_KIND_TIKHONOV = 2,
} TeProxKind;

typedef enum TeAlgorithm {
  TE_ALGORITHM_VSQP = 0,
  TE_ALGORITHM_ADMM = 1,
  TE_ALGORITHM_ALG1 = 2,
  TE_ALGORITHM_VSQP_TE = 3,
  TE_ALGORITHM_ADMM_TE = 4,
} TeAlgorithm;

// Opaque multi-coil encoding operator.
typedef struct TeEncodingOperator TeEncodingOperator;

// Opaque trained unrolled model.
typedef struct TeModel TeModel;

// Analytic prior; `param` is the threshold or the Tikhonov weight.
typedef struct TeProx {
  enum TeProxKind kind;
  double param;
} TeProx;

typedef struct TeMetrics {
  double psnr_db;
  double ssim;
  double nmse;
} TeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *te_version(void);

// Copy the calling thread's last error message into `buf` (truncated and
// NUL-terminated when `cap > 0`). Returns the full message length in bytes,
// excluding the terminator. `buf` may be null to query the length.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t te_last_error(char *buf, size_t cap);

// Build `E = M F S` from a row-major `height x width` byte mask (nonzero =
// sampled) and interleaved coil maps of `coils x height x width` values.
//
// # Safety
// `mask` must point to `height * width` bytes, `sens` to
// `2 * coils * height * width` doubles and `out` to a writable handle slot.
enum TeStatus te_encoding_create(size_t height,
                                 size_t width,
                                 size_t coils,
                                 const uint8_t *mask,
                                 const double *sens,
                                 struct TeEncodingOperator **out);

// # Safety
// `op` must be null or a handle from [`te_encoding_create`] not yet destroyed.
void te_encoding_destroy(struct TeEncodingOperator *op);

// # Safety
// `op` must be a live handle; the output pointers must be writable or null.
enum TeStatus te_encoding_dims(const struct TeEncodingOperator *op,
                               size_t *height,
                               size_t *width,
                               size_t *coils);

// `y = E x`. Lengths count complex values.
//
// # Safety
// `x` must hold `2 * x_len` doubles and `y` room for `2 * y_len`.
enum TeStatus te_encoding_forward(const struct TeEncodingOperator *op,
                                  const double *x,
                                  size_t x_len,
                                  double *y,
                                  size_t y_len);

// `x = E^H y`. Lengths count complex values.
//
// # Safety
// `y` must hold `2 * y_len` doubles and `x` room for `2 * x_len`.
enum TeStatus te_encoding_adjoint(const struct TeEncodingOperator *op,
                                  const double *y,
                                  size_t y_len,
                                  double *x,
                                  size_t x_len);

// Equispaced column mask with a centered ACS block, written as bytes.
//
// # Safety
// `out` must point to `rows * cols` writable bytes.
enum TeStatus te_mask_equispaced(size_t rows, size_t cols, size_t r, size_t acs, uint8_t *out);

// Random column mask with a centered ACS block, written as bytes.
//
// # Safety
// `out` must point to `rows * cols` writable bytes.
enum TeStatus te_mask_random(size_t rows,
                             size_t cols,
                             double r,
                             size_t acs,
                             uint64_t seed,
                             uint8_t *out);

// Ellipse phantom of `height x width` complex values.
//
// # Safety
// `out` must point to `2 * height * width` writable doubles.
enum TeStatus te_phantom(size_t height, size_t width, size_t ellipses, uint64_t seed, double *out);

// Smooth coil maps normalized to unit root-sum-of-squares.
//
// # Safety
// `out` must point to `2 * coils * height * width` writable doubles.
enum TeStatus te_sensitivities(size_t height,
                               size_t width,
                               size_t coils,
                               uint64_t seed,
                               double *out);

// VAMP with an analytic denoiser. `y` holds the full `coils x H x W` grid.
//
// # Safety
// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
enum TeStatus te_vamp(const struct TeEncodingOperator *op,
                      const double *y,
                      size_t y_len,
                      struct TeProx prox,
                      size_t max_iters,
                      double damping,
                      double *x_out,
                      size_t x_len);

// Unrolled reconstruction with an analytic prior and constant `mu`, `rho`
// and `lambda` (unused ones are ignored).
//
// # Safety
// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
enum TeStatus te_unroll(const struct TeEncodingOperator *op,
                        const double *y,
                        size_t y_len,
                        enum TeAlgorithm algorithm_kind,
                        size_t unrolls,
                        size_t cg_iters,
                        double mu,
                        double rho,
                        double lambda,
                        struct TeProx prox,
                        double *x_out,
                        size_t x_len);

// Load a checkpoint directory written by the `train` subcommand.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` a writable handle slot.
enum TeStatus te_model_load(const char *path, struct TeModel **out);

// # Safety
// `model` must be null or a handle from [`te_model_load`] not yet destroyed.
void te_model_destroy(struct TeModel *model);

// Number of network parameters of a loaded model.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum TeStatus te_model_num_parameters(const struct TeModel *model, size_t *out);

// Reconstruct with a trained model.
//
// # Safety
// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
enum TeStatus te_model_reconstruct(const struct TeModel *model,
                                   const struct TeEncodingOperator *op,
                                   const double *y,
                                   size_t y_len,
                                   double *x_out,
                                   size_t x_len);

// PSNR, SSIM and NMSE of `test` against `reference`.
//
// # Safety
// Both images must hold `2 * height * width` doubles; `out` must be writable.
enum TeStatus te_metrics(const double *reference,
                         const double *test,
                         size_t height,
                         size_t width,
                         struct TeMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEUNROLL_H */
