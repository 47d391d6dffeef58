#include <math.h>
#include <stdio.h>
#include <string.h>

#include "driftmark.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        DmStatus st_ = (call);                                             \
        if (st_ != DM_STATUS_OK) {                                         \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)st_,             \
                    dm_last_error() ? dm_last_error() : "(none)");         \
            return 1;                                                      \
        }                                                                  \
    } while (0)

enum { DIM = 16, BITS = 8 };

int main(void) {
    DmSchedule *s = NULL;
    DmOracle *o = NULL;
    DmCodebook *cb = NULL;
    DmInjection *inj = NULL;
    double delta[DIM], z0[DIM];
    uint8_t bits[BITS] = {1, 0, 1, 1, 0, 0, 1, 0}, decoded[BITS];

    CHECK(dm_schedule_new_scaled_linear(50, &s));
    CHECK(dm_oracle_new_mixture(DIM, 4, 2.0, 0.5, 7, &o));
    CHECK(dm_codebook_new(DIM, BITS, 0.75, 3, &cb));
    CHECK(dm_codebook_encode(cb, bits, BITS, delta, DIM));
    CHECK(dm_injection_new_preset(DM_PRESET_R, s, delta, DIM, &inj));

    int correct = 0, total = 0;
    for (uint64_t seed = 0; seed < 20; seed++) {
        CHECK(dm_sample(DM_SAMPLER_DDIM, 0.0, o, s, 50, inj, seed, z0, DIM));
        CHECK(dm_codebook_decode(cb, z0, DIM, decoded, BITS));
        for (int i = 0; i < BITS; i++) correct += decoded[i] == bits[i];
        total += BITS;
    }

    double ab;
    if (dm_schedule_alpha_bar(s, 99, &ab) != DM_STATUS_STEP_OUT_OF_RANGE || dm_last_error() == NULL) {
        fprintf(stderr, "out-of-range step not reported\n");
        return 1;
    }

    dm_injection_free(inj);
    dm_codebook_free(cb);
    dm_oracle_free(o);
    dm_schedule_free(s);

    double acc = (double)correct / total;
    printf("version %s bit accuracy %.3f\n", dm_version(), acc);
    return acc >= 0.9 ? 0 : 1;
}
