#ifndef AUTHEX_H
#define AUTHEX_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define AUTHEX_KEY_LEN 16

#define AUTHEX_TAG_LEN 16

#define AUTHEX_HASH_LEN 32

/**
 * Result codes. Positive values mirror the core error kinds; negative
 * values are specific to the C boundary.
 */
typedef enum AuthexStatus {
  AUTHEX_STATUS_OK = 0,
  AUTHEX_STATUS_UNSUPPORTED_CIPHER = 1,
  AUTHEX_STATUS_INVALID_KEY = 2,
  AUTHEX_STATUS_AUTH_FAILURE = 3,
  AUTHEX_STATUS_STALE_SEQUENCE = 4,
  AUTHEX_STATUS_UNKNOWN_CONNECTION = 5,
  AUTHEX_STATUS_UNESTABLISHED = 6,
  AUTHEX_STATUS_NONCE_EXHAUSTED = 7,
  AUTHEX_STATUS_CHALLENGE_TOO_SHORT = 8,
  AUTHEX_STATUS_UNKNOWN_ENTRY = 9,
  AUTHEX_STATUS_UNKNOWN_BEHAVIOR = 10,
  AUTHEX_STATUS_DUPLICATE_IO_ID = 11,
  AUTHEX_STATUS_TIMEOUT = 12,
  AUTHEX_STATUS_MALFORMED_PACKAGE = 13,
  AUTHEX_STATUS_UNKNOWN_VENDOR = 14,
  AUTHEX_STATUS_CAPACITY_EXCEEDED = 15,
  AUTHEX_STATUS_UNKNOWN_MODULE = 16,
  AUTHEX_STATUS_CALLER_REJECTED = 17,
  AUTHEX_STATUS_NONCE_MISMATCH = 18,
  AUTHEX_STATUS_LEASE_HELD = 19,
  AUTHEX_STATUS_UNKNOWN_DRIVER = 20,
  AUTHEX_STATUS_UNKNOWN_DEVICE = 21,
  AUTHEX_STATUS_SCHEMA_ERROR = 22,
  AUTHEX_STATUS_NODE_UNREACHABLE = 23,
  AUTHEX_STATUS_ATTESTATION_FAILED = 24,
  AUTHEX_STATUS_SET_KEY_REJECTED = 25,
  AUTHEX_STATUS_KEY_MISMATCH = 26,
  AUTHEX_STATUS_SCENARIO_ERROR = 27,
  AUTHEX_STATUS_MALFORMED_FRAME = 28,
  AUTHEX_STATUS_BUSY = 29,
  AUTHEX_STATUS_REJECTED = 30,
  AUTHEX_STATUS_IO = 31,
  AUTHEX_STATUS_CONFIG = 32,
  AUTHEX_STATUS_NULL_POINTER = -1,
  AUTHEX_STATUS_INVALID_ARGUMENT = -2,
  AUTHEX_STATUS_PANIC = -3,
} AuthexStatus;

/**
 * A node and its event manager. Outgoing events travel over TCP.
 */
typedef struct AuthexNode AuthexNode;

/**
 * Byte buffer allocated by the library.
 */
typedef struct AuthexBuffer {
  uint8_t *data;
  size_t len;
} AuthexBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap`. Returns the full message length.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null.
 */
size_t authex_last_error(char *buf, size_t cap);

/**
 * # Safety
 * `data` must be valid for `len` bytes; `out` for 32 bytes.
 */
enum AuthexStatus authex_sha256(const uint8_t *data, size_t len, uint8_t *out);

/**
 * First 16 bytes of SHA-256(parent || data).
 *
 * # Safety
 * Buffers must be valid for their lengths; `out` for 16 bytes.
 */
enum AuthexStatus authex_kdf128(const uint8_t *parent,
                                size_t parent_len,
                                const uint8_t *data,
                                size_t data_len,
                                uint8_t *out);

/**
 * # Safety
 * `root` and `out` must be valid for 16 bytes.
 */
enum AuthexStatus authex_vendor_key(const uint8_t *root, uint16_t vendor_id, uint8_t *out);

/**
 * # Safety
 * `vendor_key` and `out` must be valid for 16 bytes, `identity` for 32.
 */
enum AuthexStatus authex_module_key(const uint8_t *vendor_key,
                                    const uint8_t *identity,
                                    uint8_t *out);

/**
 * # Safety
 * `key` and `tag` must be valid for 16 bytes, `data` for `len`.
 */
enum AuthexStatus authex_mac(const uint8_t *key, const uint8_t *data, size_t len, uint8_t *tag);

/**
 * AES-GCM-128 seal at nonce (`domain`, `counter`). `ciphertext` receives
 * `len` bytes and `tag` 16.
 *
 * # Safety
 * All buffers must be valid for the stated lengths.
 */
enum AuthexStatus authex_seal(const uint8_t *key,
                              uint8_t domain,
                              uint16_t counter,
                              const uint8_t *plaintext,
                              size_t len,
                              const uint8_t *aad,
                              size_t aad_len,
                              uint8_t *ciphertext,
                              uint8_t *tag);

/**
 * Inverse of [`authex_seal`]. Nothing is written unless the tag verifies.
 *
 * # Safety
 * All buffers must be valid for the stated lengths.
 */
enum AuthexStatus authex_open(const uint8_t *key,
                              uint8_t domain,
                              uint16_t counter,
                              const uint8_t *ciphertext,
                              size_t len,
                              const uint8_t *tag,
                              const uint8_t *aad,
                              size_t aad_len,
                              uint8_t *plaintext);

/**
 * Creates a node from a TOML configuration document.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` a valid pointer.
 */
enum AuthexStatus authex_node_new(const char *config_toml, struct AuthexNode **out);

/**
 * # Safety
 * `node` must come from [`authex_node_new`] and not be used afterwards.
 */
void authex_node_free(struct AuthexNode *node);

/**
 * Processes one encoded wire frame and returns the encoded reply frame.
 * Protocol errors come back as error frames with status `Ok`.
 *
 * # Safety
 * `node` must be a live handle, `frame` valid for `len`, `reply` writable.
 */
enum AuthexStatus authex_node_handle_frame(struct AuthexNode *node,
                                           const uint8_t *frame,
                                           size_t len,
                                           struct AuthexBuffer *reply);

/**
 * Senses `value` on an input device of the node.
 *
 * # Safety
 * `node` must be a live handle, `device` NUL-terminated, `value` valid for `len`.
 */
enum AuthexStatus authex_node_inject_input(struct AuthexNode *node,
                                           const char *device,
                                           const uint8_t *value,
                                           size_t len);

/**
 * Line-oriented physical log of one device.
 *
 * # Safety
 * `node` must be a live handle, `device` NUL-terminated, `out` writable.
 */
enum AuthexStatus authex_node_device_log(struct AuthexNode *node,
                                         const char *device,
                                         struct AuthexBuffer *out);

/**
 * Releases a buffer returned by the library and resets it.
 *
 * # Safety
 * `buf` must be null or hold a buffer produced by this library.
 */
void authex_buffer_free(struct AuthexBuffer *buf);

/**
 * Library version, NUL-terminated and static.
 */
const char *authex_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTHEX_H */
