#ifndef LEO_JSCC_H
#define LEO_JSCC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LjsStatus {
  LJS_STATUS_OK = 0,
  LJS_STATUS_NULL_POINTER = 1,
  LJS_STATUS_INVALID_ARGUMENT = 2,
  // Input outside the mathematical domain, e.g. elevation above 90°.
  LJS_STATUS_DOMAIN = 3,
  LJS_STATUS_IO = 4,
  // An adaptive model was called without a channel context.
  LJS_STATUS_MISSING_CONTEXT = 5,
  // Output buffer too small.
  LJS_STATUS_BUFFER_SIZE = 6,
  LJS_STATUS_PANIC = 7,
} LjsStatus;

// Trained codec loaded from a checkpoint.
typedef struct LjsModel LjsModel;

// Seeded stream of Loo gains.
typedef struct LjsSampler LjsSampler;

typedef struct LjsLinkParams {
  double orbit_height_km;
  double carrier_hz;
  double tx_power_w;
  double tx_gain_dbi;
  double rx_gain_dbi;
  double bandwidth_hz;
  double noise_figure_db;
  double antenna_temp_k;
  double ref_temp_k;
} LjsLinkParams;

typedef struct LjsSnrReport {
  double elevation_deg;
  double slant_range_km;
  double path_loss_db;
  double noise_power_dbw;
  double snr_db;
} LjsSnrReport;

// Loo statistics in dB. `mp_db` may be `-INFINITY`.
typedef struct LjsLooParams {
  double alpha_db;
  double psi_db;
  double mp_db;
} LjsLooParams;

typedef struct LjsLooInternal {
  double mu;
  double d0;
  double b0;
} LjsLooInternal;

// Channel context for adaptive models. `state`: 0 LOS, 1 shadow,
// 2 deep shadow.
typedef struct LjsContext {
  double snr_db;
  uint32_t state;
} LjsContext;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `len` bytes. Returns the full message length excluding the
// terminator, so a caller can size a buffer with a first `len = 0` call.
//
// # Safety
// `buf` must be valid for `len` bytes or null when `len` is 0.
size_t ljs_last_error(char *buf, size_t len);

// Fills `out` with the reference downlink parameters.
//
// # Safety
// `out` must point to writable memory for one `LjsLinkParams`.
enum LjsStatus ljs_link_params_default(struct LjsLinkParams *out);

// # Safety
// `out_km` must be writable.
enum LjsStatus ljs_slant_range(double elevation_deg, double orbit_height_km, double *out_km);

// # Safety
// `params` must be readable and `out` writable.
enum LjsStatus ljs_snr(const struct LjsLinkParams *params,
                       double elevation_deg,
                       struct LjsSnrReport *out);

// Per-component noise variance `σ² = P / (2·10^(SNR/10))`.
//
// # Safety
// `out` must be writable.
enum LjsStatus ljs_noise_sigma_squared(double snr_db, double signal_power, double *out);

// # Safety
// `params` must be readable and `out` writable.
enum LjsStatus ljs_loo_to_internal(const struct LjsLooParams *params, struct LjsLooInternal *out);

// Amplitude density at `r`.
//
// # Safety
// `params` must be readable and `out` writable.
enum LjsStatus ljs_loo_pdf(const struct LjsLooParams *params, double r, double *out);

// Stationary distribution of a three-state chain in LOS, shadow, deep
// shadow order. `transition` is row-major 3×3.
//
// # Safety
// `state_probs` and `out` must hold 3 doubles, `transition` 9.
enum LjsStatus ljs_stationary_distribution(const double *state_probs,
                                           const double *transition,
                                           double *out);

// # Safety
// `params` must be readable and `out` writable.
enum LjsStatus ljs_sampler_new(const struct LjsLooParams *params,
                               uint64_t seed,
                               uint64_t stream,
                               struct LjsSampler **out);

// Writes `count` gains as interleaved `re, im` pairs.
//
// # Safety
// `sampler` must come from `ljs_sampler_new`; `out` must hold `2·count`
// doubles.
enum LjsStatus ljs_sampler_draw(struct LjsSampler *sampler, size_t count, double *out);

// # Safety
// `sampler` must come from `ljs_sampler_new` or be null.
void ljs_sampler_free(struct LjsSampler *sampler);

// `ẑ = z·h + σ(N + jN)` with per-symbol (`block_fading = 0`) or one shared
// gain, signal power 1. `z` and `out` hold `2·k` interleaved doubles and
// may alias.
//
// # Safety
// Pointers must be valid for `2·k` doubles and `params` readable.
enum LjsStatus ljs_transmit(const double *z,
                            size_t k,
                            const struct LjsLooParams *params,
                            double snr_db,
                            int32_t block_fading,
                            uint64_t seed,
                            uint64_t stream,
                            double *out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum LjsStatus ljs_model_load(const char *path, struct LjsModel **out);

// # Safety
// `model` must come from `ljs_model_load` or be null.
void ljs_model_free(struct LjsModel *model);

// Pixel count per image (`bands·H·W`), complex symbols per image and
// whether the model needs a context (1) or ignores it (0).
//
// # Safety
// `model` must be live; out pointers writable.
enum LjsStatus ljs_model_shape(const struct LjsModel *model,
                               size_t *pixels,
                               size_t *symbols,
                               int32_t *adaptive);

// Encodes one image (`pixels` floats in `[0, 1]`, band-major) into
// `2·symbols` interleaved doubles. `ctx` may be null for baseline models.
//
// # Safety
// `image` must hold `pixels` floats, `out` `out_len` doubles.
enum LjsStatus ljs_model_encode(const struct LjsModel *model,
                                const float *image,
                                size_t pixels,
                                const struct LjsContext *ctx,
                                double *out,
                                size_t out_len);

// Decodes `symbols` received complex values into `pixels` floats clamped
// to `[0, 1]`.
//
// # Safety
// `z` must hold `2·symbols` doubles, `out` `pixels` floats.
enum LjsStatus ljs_model_decode(const struct LjsModel *model,
                                const double *z,
                                size_t symbols,
                                const struct LjsContext *ctx,
                                float *out,
                                size_t pixels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEO_JSCC_H */
