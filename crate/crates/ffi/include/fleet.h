#ifndef FLEET_H
#define FLEET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FleetStatus {
  FLEET_STATUS_OK = 0,
  FLEET_STATUS_NULL_ARGUMENT = 1,
  FLEET_STATUS_INVALID_UTF8 = 2,
  FLEET_STATUS_CONFIG_ERROR = 3,
  FLEET_STATUS_PARSE_ERROR = 4,
  FLEET_STATUS_PANIC = 5,
} FleetStatus;

typedef enum FleetFormat {
  FLEET_FORMAT_TABLE = 0,
  FLEET_FORMAT_JSON = 1,
  FLEET_FORMAT_CSV = 2,
} FleetFormat;

/**
 * Opaque report handle.
 */
typedef struct FleetReport FleetReport;

/**
 * Opaque scenario handle.
 */
typedef struct FleetScenario FleetScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *fleet_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void fleet_string_free(char *s);

/**
 * Parses a scenario from JSON text. Relative paths inside resolve
 * against the working directory.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FleetStatus fleet_scenario_from_json(const char *json, struct FleetScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FleetStatus fleet_scenario_load(const char *path, struct FleetScenario **out);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum FleetStatus fleet_scenario_set_seed(struct FleetScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum FleetStatus fleet_scenario_set_devices(struct FleetScenario *scenario, uint32_t devices);

/**
 * # Safety
 * `scenario` must be NULL or a handle not yet freed.
 */
void fleet_scenario_free(struct FleetScenario *scenario);

/**
 * Runs a scenario to completion.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum FleetStatus fleet_run(const struct FleetScenario *scenario, struct FleetReport **out);

/**
 * Reads back a report previously rendered as JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FleetStatus fleet_report_from_json(const char *json, struct FleetReport **out);

/**
 * Renders a report; free the result with [`fleet_string_free`].
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum FleetStatus fleet_report_render(const struct FleetReport *report,
                                     enum FleetFormat format,
                                     char **out);

/**
 * Flow and anomaly counts of a report.
 *
 * # Safety
 * `report` must be a live handle; the out pointers must be writable.
 */
enum FleetStatus fleet_report_counts(const struct FleetReport *report,
                                     size_t *flows,
                                     size_t *anomalies);

/**
 * # Safety
 * `report` must be NULL or a handle not yet freed.
 */
void fleet_report_free(struct FleetReport *report);

/**
 * Checks signature rule text and reports how many rules it holds.
 *
 * # Safety
 * `rules` must be a NUL-terminated string; `count` must be writable.
 */
enum FleetStatus fleet_signatures_check(const char *rules, size_t *count);

/**
 * Counts the active leases in leases-file text.
 *
 * # Safety
 * `leases` must be a NUL-terminated string; `active` must be writable.
 */
enum FleetStatus fleet_leases_active(const char *leases, size_t *active);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEET_H */
