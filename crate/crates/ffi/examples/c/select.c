/*
 * Selects a subset under a single deadline and energy budget.
 *
 *   cargo build --release -p moe2-ffi
 *   cc -I crates/ffi/include crates/ffi/examples/c/select.c \
 *      target/release/libmoe2_ffi.a -lm -lpthread -ldl -o select
 *   ./select workload.json fleet.json 2.0 12.0
 */
#include <stdio.h>
#include <stdlib.h>

#include "moe2.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) {
        perror(path);
        return NULL;
    }
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)n + 1);
    if (buf && fread(buf, 1, (size_t)n, f) != (size_t)n) {
        free(buf);
        buf = NULL;
    }
    if (buf) {
        buf[n] = '\0';
    }
    fclose(f);
    return buf;
}

static int fail(const char *what, Moe2Status s) {
    const char *msg = moe2_last_error();
    fprintf(stderr, "%s: status %d: %s\n", what, (int)s, msg ? msg : "");
    return s == MOE2_STATUS_INFEASIBLE ? 3 : 1;
}

int main(int argc, char **argv) {
    if (argc != 5) {
        fprintf(stderr, "usage: %s WORKLOAD FLEET TAU_MAX E_MAX\n", argv[0]);
        return 2;
    }
    char *wj = slurp(argv[1]);
    char *fj = slurp(argv[2]);
    if (!wj || !fj) {
        return 1;
    }
    Moe2Workload *workload = NULL;
    Moe2Fleet *fleet = NULL;
    Moe2Constraints *constraints = NULL;
    Moe2Status s;
    int rc = 0;

    if ((s = moe2_workload_from_json(wj, &workload)) != MOE2_STATUS_OK) {
        rc = fail("workload", s);
        goto done;
    }
    if ((s = moe2_fleet_from_json(fj, &fleet)) != MOE2_STATUS_OK) {
        rc = fail("fleet", s);
        goto done;
    }
    size_t m = moe2_workload_n_classes(workload);
    double *tau = malloc(m * sizeof *tau);
    for (size_t i = 0; i < m; i++) {
        tau[i] = atof(argv[3]);
    }
    s = moe2_constraints_new(tau, m, atof(argv[4]), &constraints);
    free(tau);
    if (s != MOE2_STATUS_OK) {
        rc = fail("constraints", s);
        goto done;
    }
    uint64_t mask = 0;
    if ((s = moe2_select_subset(workload, fleet, NULL, constraints, 0.0, &mask)) != MOE2_STATUS_OK) {
        rc = fail("select", s);
        goto done;
    }
    printf("selected experts:");
    for (size_t i = 0; i < moe2_fleet_len(fleet); i++) {
        if (mask >> i & 1) {
            printf(" %zu", i);
        }
    }
    printf("\n");

done:
    moe2_constraints_free(constraints);
    moe2_fleet_free(fleet);
    moe2_workload_free(workload);
    free(wj);
    free(fj);
    return rc;
}
