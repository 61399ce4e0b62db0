#ifndef SPRITE_H
#define SPRITE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Packed `major << 16 | minor`.
 */
#define SPRITE_ABI_VERSION (1 << 16)

typedef enum SpriteStatus {
  SPRITE_STATUS_OK = 0,
  SPRITE_STATUS_NULL_POINTER = 1,
  SPRITE_STATUS_INVALID_INPUT = 2,
  SPRITE_STATUS_ESTIMATION = 3,
  SPRITE_STATUS_DIVERGENCE = 4,
  SPRITE_STATUS_INTERNAL = 5,
} SpriteStatus;

/**
 * Solver settings; starts from the library defaults.
 */
typedef struct SpriteConfig SpriteConfig;

/**
 * A reconstructed image.
 */
typedef struct SpriteImage SpriteImage;

/**
 * Exposures collected before a reconstruction.
 */
typedef struct SpriteStack SpriteStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t sprite_abi_version(void);

/**
 * Message of the last failed call on this thread; empty when none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sprite_last_error(void);

/**
 * New empty stack of `height × width` exposures to be upsampled by `upsampling`.
 * Returns null on invalid sizes.
 */
struct SpriteStack *sprite_stack_new(size_t height, size_t width, size_t upsampling);

/**
 * # Safety
 * `stack` must be null or come from [`sprite_stack_new`] and not be freed yet.
 */
void sprite_stack_free(struct SpriteStack *stack);

/**
 * Appends one exposure. `pixels` holds `len = height·width` row-major values;
 * `shift_row`/`shift_col` are in low-resolution pixels relative to exposure 0.
 *
 * # Safety
 * `stack` must be a live stack handle and `pixels` must point to `len` readable doubles.
 */
enum SpriteStatus sprite_stack_push(struct SpriteStack *stack,
                                    const double *pixels,
                                    size_t len,
                                    double sigma,
                                    double flux,
                                    double shift_row,
                                    double shift_col);

/**
 * Number of exposures pushed so far; 0 for null.
 *
 * # Safety
 * `stack` must be null or a live stack handle.
 */
size_t sprite_stack_len(const struct SpriteStack *stack);

struct SpriteConfig *sprite_config_new(void);

/**
 * # Safety
 * `config` must be null or come from [`sprite_config_new`] and not be freed yet.
 */
void sprite_config_free(struct SpriteConfig *config);

/**
 * Transform code: 2 = second-generation starlet, 24 = biorthogonal 7/9.
 *
 * # Safety
 * `config` must be a live config handle.
 */
enum SpriteStatus sprite_config_set_transform(struct SpriteConfig *config, uint32_t code);

/**
 * # Safety
 * `config` must be a live config handle.
 */
enum SpriteStatus sprite_config_set_kappa(struct SpriteConfig *config, double kappa);

/**
 * Iteration cap per pass and number of reweighting passes.
 *
 * # Safety
 * `config` must be a live config handle.
 */
enum SpriteStatus sprite_config_set_iterations(struct SpriteConfig *config,
                                               size_t n_max,
                                               size_t k_max);

/**
 * # Safety
 * `config` must be a live config handle.
 */
enum SpriteStatus sprite_config_set_positivity(struct SpriteConfig *config, bool enabled);

/**
 * When set, noise, shifts and fluxes are estimated from the pixels and the
 * values passed to [`sprite_stack_push`] are ignored.
 *
 * # Safety
 * `config` must be a live config handle.
 */
enum SpriteStatus sprite_config_set_estimate(struct SpriteConfig *config, bool enabled);

/**
 * Runs the reconstruction; on success `*out` receives a new image handle.
 *
 * # Safety
 * `stack` and `config` must be live handles; `out` must be writable.
 */
enum SpriteStatus sprite_reconstruct(const struct SpriteStack *stack,
                                     const struct SpriteConfig *config,
                                     struct SpriteImage **out);

/**
 * # Safety
 * `image` must be null or a live image handle.
 */
size_t sprite_image_height(const struct SpriteImage *image);

/**
 * # Safety
 * `image` must be null or a live image handle.
 */
size_t sprite_image_width(const struct SpriteImage *image);

/**
 * Copies the row-major pixels into `dst`, which must hold exactly `len` values.
 *
 * # Safety
 * `image` must be a live image handle and `dst` must point to `len` writable doubles.
 */
enum SpriteStatus sprite_image_copy(const struct SpriteImage *image, double *dst, size_t len);

/**
 * # Safety
 * `image` must be null or come from [`sprite_reconstruct`] and not be freed yet.
 */
void sprite_image_free(struct SpriteImage *image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPRITE_H */
