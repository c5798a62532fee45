#ifndef CUTDIFFUSION_H
#define CUTDIFFUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CD_METHOD_CUT 0

#define CD_METHOD_MULTI 1

#define CD_METHOD_DIRECT 2

typedef enum CdStatus {
  CD_STATUS_OK = 0,
  CD_STATUS_NULL_POINTER = 1,
  CD_STATUS_INVALID_ARGUMENT = 2,
  CD_STATUS_CONFIG = 3,
  CD_STATUS_BACKEND = 4,
  CD_STATUS_INVARIANT = 5,
  CD_STATUS_IO = 6,
  CD_STATUS_BUFFER_TOO_SMALL = 7,
  CD_STATUS_PANIC = 8,
} CdStatus;

// Parsed, validated run configuration.
typedef struct CdConfig CdConfig;

// Row-major `h x w x c` latent of doubles, channels innermost.
typedef struct CdLatent CdLatent;

typedef struct CdCostReport {
  uint64_t phase1_patches;
  uint64_t phase2_patches;
  uint64_t phase1_calls;
  uint64_t phase2_calls;
  uint64_t total_calls;
  uint64_t peak_resident_latents;
} CdCostReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cd_version(void);

// Message of the last failure on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *cd_last_error_message(void);

// Parses a TOML config document.
//
// # Safety
// `toml` must be a valid NUL-terminated string and `out` a writable pointer.
enum CdStatus cd_config_from_toml(const char *toml, struct CdConfig **out);

// Default config around a patch shape and canvas size.
//
// # Safety
// `out` must be a writable pointer.
enum CdStatus cd_config_new(size_t base_h,
                            size_t base_w,
                            size_t channels,
                            size_t target_h,
                            size_t target_w,
                            struct CdConfig **out);

// Sets seed and phase boundary in one call and revalidates.
//
// # Safety
// `config` must come from `cd_config_from_toml` or `cd_config_new`.
enum CdStatus cd_config_set_seed_t_prime(struct CdConfig *config, uint64_t seed, size_t t_prime);

// # Safety
// `config` must be null or a handle not yet freed.
void cd_config_free(struct CdConfig *config);

// Runs one pipeline. `method` is one of the `CD_METHOD_*` constants;
// `threads` of 0 uses the machine default. `report` may be null.
//
// # Safety
// `config` must be a live handle, `out` writable, `report` null or writable.
enum CdStatus cd_run(const struct CdConfig *config,
                     uint32_t method,
                     size_t threads,
                     struct CdLatent **out,
                     struct CdCostReport *report);

// # Safety
// `latent` must be a live handle; the shape pointers must be writable.
enum CdStatus cd_latent_shape(const struct CdLatent *latent, size_t *h, size_t *w, size_t *c);

// Copies `h * w * c` doubles into `buf`, which holds `len` elements.
//
// # Safety
// `latent` must be a live handle and `buf` valid for `len` writes.
enum CdStatus cd_latent_copy_data(const struct CdLatent *latent, double *buf, size_t len);

// # Safety
// `latent` must be null or a handle not yet freed.
void cd_latent_free(struct CdLatent *latent);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUTDIFFUSION_H */
