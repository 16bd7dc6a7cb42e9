/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#ifndef CDC_H
#define CDC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CdcStatus {
  CDC_STATUS_OK = 0,
  CDC_STATUS_NULL_ARGUMENT = 1,
  CDC_STATUS_INVALID_ARGUMENT = 2,
  CDC_STATUS_BUFFER_TOO_SMALL = 3,
  CDC_STATUS_NOT_A_CDC_FILE = 4,
  CDC_STATUS_UNSUPPORTED_VERSION = 5,
  CDC_STATUS_CORRUPT_PAYLOAD = 6,
  CDC_STATUS_IO = 7,
  CDC_STATUS_CHECKPOINT = 8,
  CDC_STATUS_INTERNAL = 9,
} CdcStatus;

/**
 * A generator loaded from a training checkpoint.
 */
typedef struct CdcModel CdcModel;

/**
 * A packed (compressed) image.
 */
typedef struct CdcPacked CdcPacked;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *cdc_last_error(void);

/**
 * Compression factor `8 / (8 - bits)` as a reduced fraction.
 *
 * # Safety
 * `numer` and `denom` must be valid for writes.
 */
enum CdcStatus cdc_compression_factor(uint32_t bits, uint32_t *numer, uint32_t *denom);

/**
 * Compresses `width * height` RGB pixels (3 bytes each, row-major).
 *
 * # Safety
 * `rgb` must point to `rgb_len` readable bytes and `out` must be valid for writes.
 */
enum CdcStatus cdc_compress(const uint8_t *rgb,
                            size_t rgb_len,
                            uint32_t width,
                            uint32_t height,
                            uint32_t bits,
                            struct CdcPacked **out);

/**
 * Width in pixels, or 0 for a null handle.
 *
 * # Safety
 * `packed` must be null or a live handle.
 */
uint32_t cdc_packed_width(const struct CdcPacked *packed);

/**
 * Height in pixels, or 0 for a null handle.
 *
 * # Safety
 * `packed` must be null or a live handle.
 */
uint32_t cdc_packed_height(const struct CdcPacked *packed);

/**
 * Bits dropped per channel, or 0 for a null handle.
 *
 * # Safety
 * `packed` must be null or a live handle.
 */
uint32_t cdc_packed_bits(const struct CdcPacked *packed);

/**
 * The packed code bytes, owned by the handle. Writes the length to `len`.
 *
 * # Safety
 * `packed` must be a live handle and `len` valid for writes.
 */
const uint8_t *cdc_packed_payload(const struct CdcPacked *packed, size_t *len);

/**
 * Serializes to the `.cdc` container format. Release the bytes with [`cdc_bytes_free`].
 *
 * # Safety
 * `packed` must be a live handle; `out` and `out_len` must be valid for writes.
 */
enum CdcStatus cdc_encode(const struct CdcPacked *packed, uint8_t **out, size_t *out_len);

/**
 * Parses a `.cdc` container.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be valid for writes.
 */
enum CdcStatus cdc_decode(const uint8_t *data, size_t len, struct CdcPacked **out);

/**
 * Midpoint reconstruction into a caller buffer of at least `3 * width * height` bytes.
 *
 * # Safety
 * `packed` must be a live handle and `rgb_out` writable for `rgb_len` bytes.
 */
enum CdcStatus cdc_decompress_naive(const struct CdcPacked *packed,
                                    uint8_t *rgb_out,
                                    size_t rgb_len);

/**
 * Loads the generator from a training checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum CdcStatus cdc_model_load(const char *path, struct CdcModel **out);

/**
 * Side of the square tiles the model processes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t cdc_model_input_size(const struct CdcModel *model);

/**
 * Bits dropped in the model's training data, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t cdc_model_bits(const struct CdcModel *model);

/**
 * Learned reconstruction into a caller buffer of at least `3 * width * height` bytes.
 *
 * # Safety
 * `model` and `packed` must be live handles and `rgb_out` writable for `rgb_len` bytes.
 */
enum CdcStatus cdc_model_reconstruct(struct CdcModel *model,
                                     const struct CdcPacked *packed,
                                     uint8_t *rgb_out,
                                     size_t rgb_len);

/**
 * # Safety
 * `packed` must be null or a handle not yet freed.
 */
void cdc_packed_free(struct CdcPacked *packed);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cdc_model_free(struct CdcModel *model);

/**
 * Releases bytes returned by [`cdc_encode`].
 *
 * # Safety
 * `ptr` and `len` must come from one [`cdc_encode`] call, or `ptr` must be null.
 */
void cdc_bytes_free(uint8_t *ptr, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDC_H */
