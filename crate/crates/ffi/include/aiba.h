#ifndef AIBA_H
#define AIBA_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AibaError {
  AIBA_ERROR_OK = 0,
  AIBA_ERROR_NULL_POINTER = 1,
  AIBA_ERROR_INVALID_UTF8 = 2,
  AIBA_ERROR_INVALID_CONFIG = 3,
  AIBA_ERROR_INVALID_SESSION = 4,
  AIBA_ERROR_INVALID_DOCUMENT = 5,
  AIBA_ERROR_EXHAUSTED = 6,
  AIBA_ERROR_INVALID_ARGUMENT = 7,
  AIBA_ERROR_PANIC = 99,
} AibaError;

typedef enum AibaRecordingMode {
  AIBA_RECORDING_MODE_GUIDED = 0,
  AIBA_RECORDING_MODE_FREE_RECORDING = 1,
  AIBA_RECORDING_MODE_TEXT_ONLY = 2,
} AibaRecordingMode;

/**
 * Parsed runtime config.
 */
typedef struct AibaConfig AibaConfig;

/**
 * Prompt session state.
 */
typedef struct AibaSession AibaSession;

/**
 * The phone's local status document.
 */
typedef struct AibaStatus AibaStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL if none. Free with
 * [`aiba_string_free`].
 */
char *aiba_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void aiba_string_free(char *s);

/**
 * Parses a runtime config document of `len` bytes. An empty or
 * whitespace-only document selects free recording.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes (may be NULL when `len` is 0);
 * `out` must be writable.
 */
enum AibaError aiba_config_parse(const uint8_t *bytes,
                                 size_t len,
                                 uint32_t expected_number,
                                 struct AibaConfig **out);

/**
 * # Safety
 * `config` must be NULL or a handle from [`aiba_config_parse`], not yet freed.
 */
void aiba_config_free(struct AibaConfig *config);

/**
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_config_mode(const struct AibaConfig *config, enum AibaRecordingMode *out);

/**
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_config_list_count(const struct AibaConfig *config, size_t *out);

/**
 * Canonical serialization of the config.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_config_to_json(const struct AibaConfig *config, char **out);

/**
 * Starts a session for the phone whose hash is `phone_hash` (32 lowercase
 * hex digits).
 *
 * # Safety
 * `phone_hash` must be a NUL-terminated string; `out` must be writable.
 */
enum AibaError aiba_session_new(const char *phone_hash, int64_t now_ms, struct AibaSession **out);

/**
 * # Safety
 * `session` must be NULL or a live handle.
 */
void aiba_session_free(struct AibaSession *session);

/**
 * # Safety
 * `session` and `config` must be live handles.
 */
enum AibaError aiba_session_select_list(struct AibaSession *session,
                                        const struct AibaConfig *config,
                                        size_t index);

/**
 * The step to show next, as JSON: `{"kind":"record","text":..,"seconds":..}`,
 * `{"kind":"text_only","text":..}`, `{"kind":"terminal","text":..}` or
 * `{"kind":"free"}`.
 *
 * # Safety
 * `session` and `config` must be live handles; `out` must be writable.
 */
enum AibaError aiba_session_next_prompt(const struct AibaSession *session,
                                        const struct AibaConfig *config,
                                        char **out);

/**
 * Records a completed recording: advances the session and bumps the
 * status counter.
 *
 * # Safety
 * All handles must be live.
 */
enum AibaError aiba_session_register_recording(struct AibaSession *session,
                                               struct AibaStatus *status,
                                               const struct AibaConfig *config,
                                               int64_t now_ms);

/**
 * # Safety
 * `session` must be a live handle.
 */
enum AibaError aiba_session_start_over(struct AibaSession *session);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_session_cursor(const struct AibaSession *session, size_t *out);

/**
 * A fresh status document with defaults.
 *
 * # Safety
 * `out` must be writable.
 */
enum AibaError aiba_status_new(struct AibaStatus **out);

/**
 * Loads and validates a status document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AibaError aiba_status_from_json(const char *json, struct AibaStatus **out);

/**
 * # Safety
 * `status` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_status_to_json(const struct AibaStatus *status, char **out);

/**
 * # Safety
 * `status` must be NULL or a live handle.
 */
void aiba_status_free(struct AibaStatus *status);

/**
 * # Safety
 * `status` must be a live handle; the outs must be writable.
 */
enum AibaError aiba_status_counts(const struct AibaStatus *status,
                                  uint64_t *total,
                                  uint64_t *current);

/**
 * Folds the current count into the total and zeroes it.
 *
 * # Safety
 * `status` must be a live handle.
 */
enum AibaError aiba_status_reset_counts(struct AibaStatus *status);

/**
 * # Safety
 * `status` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_status_should_upload(const struct AibaStatus *status,
                                         int64_t now_ms,
                                         bool *out);

/**
 * Marks the status as uploaded at `now_ms`.
 *
 * # Safety
 * `status` must be a live handle.
 */
enum AibaError aiba_status_mark_uploaded(struct AibaStatus *status, int64_t now_ms);

/**
 * Draws a new neighbor code, distinct from the ones already generated,
 * records it in the status and returns it. `seed` feeds the generator.
 *
 * # Safety
 * `status` must be a live handle; `out` must be writable.
 */
enum AibaError aiba_status_generate_neighbor_code(struct AibaStatus *status,
                                                  uint64_t seed,
                                                  char **out);

/**
 * Validates a JSON object of personal-information answers against the
 * built-in question set and returns the normalized answers (ages of 90 and
 * over become `"90+"`).
 *
 * # Safety
 * `answers_json` must be a NUL-terminated string; `out` must be writable.
 */
enum AibaError aiba_validate_personal_info(const char *answers_json, char **out);

/**
 * The built-in personal-information question set as JSON.
 *
 * # Safety
 * `out` must be writable.
 */
enum AibaError aiba_personal_info_schema(char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIBA_H */
