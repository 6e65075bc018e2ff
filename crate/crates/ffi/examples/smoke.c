/* Minimal consumer of the C API; compiled with -fsyntax-only by the tests. */
#include <stdio.h>
#include "singular_mfg.h"

int main(void) {
    const char *cfg =
        "{\"schema_version\": 1, \"problem\": \"stationary\","
        " \"grid\": {\"dim\": 1, \"n\": 32}, \"model\": {\"gamma\": 1.5},"
        " \"coupling\": {\"alpha\": 1.5, \"eps_schedule\": [0.1]}}";
    SmfgStationary *h = NULL;
    if (smfg_stationary_solve(cfg, &h) != SMFG_STATUS_OK) {
        fprintf(stderr, "%s\n", smfg_last_error());
        return 1;
    }
    double hbar = 0.0;
    smfg_stationary_hbar(h, &hbar);
    printf("hbar = %.10f\n", hbar);
    smfg_stationary_free(h);
    return 0;
}
