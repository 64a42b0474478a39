#include <stdio.h>
#include <string.h>

#include "fleetlab.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *m = fleetlab_last_error_message();                       \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, m ? m : "");  \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  uint32_t bucket = 0;
  CHECK(fleetlab_bucket("YV1XK40E0N2000001", "salt", 0, &bucket) == FLEETLAB_STATUS_OK);
  CHECK(bucket < 10000);
  CHECK(fleetlab_vin_validate("short") == FLEETLAB_STATUS_INVALID_INPUT);
  CHECK(strcmp(fleetlab_last_error_code(), "InvalidVin") == 0);

  double a[] = {1.0, 2.0, 3.0, 4.0};
  double b[] = {2.5, 3.0, 4.5, 5.0, 6.0};
  FleetlabWelch w;
  CHECK(fleetlab_welch(a, 4, b, 5, &w) == FLEETLAB_STATUS_OK);
  CHECK(w.delta > 0.0 && w.p_value > 0.0 && w.p_value < 1.0);

  FleetlabService *svc = NULL;
  CHECK(fleetlab_service_new(NULL, &svc) == FLEETLAB_STATUS_OK);
  char *out = NULL;
  CHECK(fleetlab_service_handshake(svc, "YV1XK40E0N2000001", 0, &out) == FLEETLAB_STATUS_SILENCE);
  CHECK(out == NULL);
  CHECK(fleetlab_service_report(svc, "missing", -1, &out) == FLEETLAB_STATUS_NOT_FOUND);
  fleetlab_service_free(svc);

  char *stats = NULL;
  CHECK(fleetlab_sim_run("{\"fleet_size\": 3, \"sim_days\": 1}", &stats, NULL) == FLEETLAB_STATUS_OK);
  CHECK(stats != NULL && stats[0] == '{');
  fleetlab_string_free(stats);

  printf("ok %s\n", fleetlab_version());
  return 0;
}
