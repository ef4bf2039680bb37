#include <math.h>
#include <stdio.h>
#include <string.h>

#include "rooflab.h"

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            fprintf(stderr, "line %d: %s\n", __LINE__, #cond);       \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    double peak = 0.0;
    CHECK(rl_theoretical_peak(80, 32, 2, 1.312e9, &peak) == RL_STATUS_OK);
    CHECK(fabs(peak - 6.71744e12) < 1.0);

    RlMachine *m = NULL;
    CHECK(rl_machine_bundled(&m) == RL_STATUS_OK && m != NULL);
    double ridge = 0.0;
    CHECK(rl_machine_level_balance(m, RL_LEVEL_HBM, &ridge) == RL_STATUS_OK);
    CHECK(fabs(ridge - 6.71744e12 / 9e11) < 1e-9);
    CHECK(rl_machine_level_balance(m, 7, &ridge) == RL_STATUS_LOOKUP);
    CHECK(rl_last_error() != NULL);

    RlOccupancy occ;
    CHECK(rl_occupancy(NULL, 184, 128, &occ) == RL_STATUS_OK && occ.warps == 8);

    RlProblem *p = NULL;
    CHECK(rl_problem_synth(42, 4, 4, 32, &p) == RL_STATUS_OK);
    double ref[4 * RL_NW], got[4 * RL_NW];
    CHECK(rl_reference(p, ref, 4 * RL_NW) == RL_STATUS_OK);
    RlRun run;
    CHECK(rl_run_version(p, 8, &run, got, 4 * RL_NW) == RL_STATUS_OK);
    CHECK(run.max_rel_error <= 1e-10 && run.threads_per_block == 512);
    CHECK(rl_run_version(p, 0, &run, got, 1) == RL_STATUS_BUFFER_TOO_SMALL);

    char *json = NULL;
    const char *metrics = "[{\"label\":\"v0\",\"system\":\"c\",\"precision\":\"FP64\","
                          "\"counters\":{\"dadd\":0,\"dmul\":0,\"dfma\":1000000,\"ddiv\":0,\"dother\":0},"
                          "\"runtime\":0.001}]";
    CHECK(rl_analyze_json(metrics, m, 0.58, &json) == RL_STATUS_OK);
    CHECK(strstr(json, "\"trajectories\"") != NULL);
    rl_string_free(json);

    rl_problem_free(p);
    rl_machine_free(m);
    printf("ok %s\n", rl_version());
    return 0;
}
