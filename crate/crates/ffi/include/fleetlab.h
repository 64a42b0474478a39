#ifndef FLEETLAB_H
#define FLEETLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum FleetlabStatus {
  FLEETLAB_STATUS_OK = 0,
  // The cloud has nothing for this vehicle; keep local parameters.
  FLEETLAB_STATUS_SILENCE = 1,
  FLEETLAB_STATUS_NULL_ARGUMENT = -1,
  FLEETLAB_STATUS_INVALID_UTF8 = -2,
  FLEETLAB_STATUS_INVALID_JSON = -3,
  // Rejected by validation: VIN, bounds, names, allocation, batch size.
  FLEETLAB_STATUS_INVALID_INPUT = -4,
  // Unknown experiment, variant, session or device token.
  FLEETLAB_STATUS_NOT_FOUND = -5,
  // Lifecycle, layer or duplicate-id conflict.
  FLEETLAB_STATUS_ILLEGAL_STATE = -6,
  // Not enough data or mismatched shapes for a statistical test.
  FLEETLAB_STATUS_ANALYSIS_FAILED = -7,
  // Storage or audit log failure.
  FLEETLAB_STATUS_IO = -8,
  FLEETLAB_STATUS_PANIC = -100,
} FleetlabStatus;

// Opaque handle to an experiment cloud.
typedef struct FleetlabService FleetlabService;

typedef struct FleetlabWelch {
  // `mean(b) - mean(a)`.
  double delta;
  double ci_low;
  double ci_high;
  double p_value;
  double t;
  double df;
  double std_error;
} FleetlabWelch;

typedef struct FleetlabSrm {
  double chi_square;
  double p_value;
  bool flagged;
} FleetlabSrm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string. Do not free.
const char *fleetlab_version(void);

// Stable error code of the last failing call on this thread, or NULL.
// Valid until the next call into the library on this thread.
const char *fleetlab_last_error_code(void);

// Human-readable message of the last failing call on this thread, or NULL.
const char *fleetlab_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void fleetlab_string_free(char *s);

// Checks a VIN without touching any service.
//
// # Safety
// `vin` must be NULL or a valid NUL-terminated string.
enum FleetlabStatus fleetlab_vin_validate(const char *vin);

// Assignment bucket in `[0, 10000)` for `vin` under `salt` and `epoch`.
//
// # Safety
// String arguments must be valid NUL-terminated strings, `out` writable.
enum FleetlabStatus fleetlab_bucket(const char *vin,
                                    const char *salt,
                                    uint32_t epoch,
                                    uint32_t *out);

// Welch two-sample test of `b` against `a`.
//
// # Safety
// `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
enum FleetlabStatus fleetlab_welch(const double *a,
                                   size_t na,
                                   const double *b,
                                   size_t nb,
                                   struct FleetlabWelch *out);

// Sample-ratio check of `n` observed counts against `n` allocation fractions.
//
// # Safety
// `observed` and `allocation` must point to `n` elements; `out` writable.
enum FleetlabStatus fleetlab_srm(const uint64_t *observed,
                                 const double *allocation,
                                 size_t n,
                                 struct FleetlabSrm *out);

// Creates an in-memory service. `config_json` may be NULL for defaults.
//
// # Safety
// `config_json` must be NULL or a valid string; `out` must be writable.
enum FleetlabStatus fleetlab_service_new(const char *config_json, struct FleetlabService **out);

// Opens a persistent service in `dir`, replaying its audit log and store.
//
// # Safety
// As for [`fleetlab_service_new`]; `dir` must be a valid string.
enum FleetlabStatus fleetlab_service_open(const char *config_json,
                                          const char *dir,
                                          struct FleetlabService **out);

// Releases a service. NULL is ignored.
//
// # Safety
// `service` must come from `fleetlab_service_new`/`_open` and not be used again.
void fleetlab_service_free(struct FleetlabService *service);

// Registers a function specification given as JSON.
//
// # Safety
// Pointers must be valid; see the module documentation.
enum FleetlabStatus fleetlab_service_register_function(const struct FleetlabService *service,
                                                       const char *spec_json);

// Creates a draft experiment. On success `out_json` receives the stored
// experiment; it may be NULL when the caller does not need it.
//
// # Safety
// Pointers must be valid; see the module documentation.
enum FleetlabStatus fleetlab_service_create_experiment(const struct FleetlabService *service,
                                                       const char *experiment_json,
                                                       int64_t now_ms,
                                                       char **out_json);

// Applies `activate`, `pause`, `resume` or `conclude`.
//
// # Safety
// Pointers must be valid; `out_json` may be NULL.
enum FleetlabStatus fleetlab_service_transition(const struct FleetlabService *service,
                                                const char *experiment_id,
                                                const char *event,
                                                int64_t now_ms,
                                                char **out_json);

// Starts a new assignment epoch with a fresh salt.
//
// # Safety
// Pointers must be valid; `out_json` may be NULL.
enum FleetlabStatus fleetlab_service_repartition(const struct FleetlabService *service,
                                                 const char *experiment_id,
                                                 int64_t now_ms,
                                                 char **out_json);

// Replaces a treatment's cloud overrides with the JSON object `overrides_json`.
//
// # Safety
// Pointers must be valid; `out_json` may be NULL.
enum FleetlabStatus fleetlab_service_adjust(const struct FleetlabService *service,
                                            const char *experiment_id,
                                            const char *variant_id,
                                            const char *overrides_json,
                                            int64_t now_ms,
                                            char **out_json);

// Key-on handshake. Returns `Ok` with the status indicator in `out_json`, or
// `Silence` with `*out_json` set to NULL.
//
// # Safety
// Pointers must be valid; `out_json` must be writable.
enum FleetlabStatus fleetlab_service_handshake(const struct FleetlabService *service,
                                               const char *vin,
                                               int64_t now_ms,
                                               char **out_json);

// Refresh poll for an open session; same result convention as the handshake.
//
// # Safety
// Pointers must be valid; `out_json` must be writable.
enum FleetlabStatus fleetlab_service_poll(const struct FleetlabService *service,
                                          const char *session_token,
                                          int64_t now_ms,
                                          char **out_json);

// Ends a session at key-off. Unknown tokens are ignored.
//
// # Safety
// Pointers must be valid.
enum FleetlabStatus fleetlab_service_close_session(const struct FleetlabService *service,
                                                   const char *session_token);

// Issues the upload credential for a vehicle.
//
// # Safety
// Pointers must be valid; `out_token` must be writable.
enum FleetlabStatus fleetlab_service_enroll(const struct FleetlabService *service,
                                            const char *vin,
                                            char **out_token);

// Stores a JSON array of telemetry records uploaded with `device_token`.
// The receipt (accepted, inserted, rejected) goes to `out_json` if non-NULL.
//
// # Safety
// Pointers must be valid; `out_json` may be NULL.
enum FleetlabStatus fleetlab_service_ingest(const struct FleetlabService *service,
                                            const char *device_token,
                                            const char *records_json,
                                            int64_t now_ms,
                                            char **out_json);

// Running per-variant snapshot of an experiment as JSON.
//
// # Safety
// Pointers must be valid; `out_json` must be writable.
enum FleetlabStatus fleetlab_service_live(const struct FleetlabService *service,
                                          const char *experiment_id,
                                          char **out_json);

// Analysis report as JSON. A negative `epoch` selects the current one.
//
// # Safety
// Pointers must be valid; `out_json` must be writable.
enum FleetlabStatus fleetlab_service_report(const struct FleetlabService *service,
                                            const char *experiment_id,
                                            int64_t epoch,
                                            char **out_json);

// Stored records of an experiment as CSV. A negative `epoch` exports all.
//
// # Safety
// Pointers must be valid; `out_csv` must be writable.
enum FleetlabStatus fleetlab_service_export_csv(const struct FleetlabService *service,
                                                const char *experiment_id,
                                                int64_t epoch,
                                                char **out_csv);

// Runs a simulated fleet against a fresh in-process service. `scenario_json`
// may be NULL or partial; missing fields take their defaults. Run statistics
// go to `out_stats_json`; the event log (NDJSON) to `out_log` if non-NULL.
//
// # Safety
// Pointers must be valid; `out_stats_json` must be writable.
enum FleetlabStatus fleetlab_sim_run(const char *scenario_json,
                                     char **out_stats_json,
                                     char **out_log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEETLAB_H */
