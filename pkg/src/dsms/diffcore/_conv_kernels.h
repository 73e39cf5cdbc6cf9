/* Register-blocked gather-convolution microkernel.
 *
 *   out[o, t] = sum_i w[o, i] * rows[i][t],   0 <= t < t_out
 *
 * rows[i] points at the input sample that tap i reads for t = 0 (one entry
 * per (input channel, kernel tap) pair). Weights are packed in blocks of
 * four output channels: wp[(b * ntap + i) * 4 + j] = w[4b + j, i].
 * A full 4 x 16 output block lives in locals for the whole tap sweep; the
 * ragged tail goes through a separate loop so it cannot spill the fast path.
 */
#ifndef DSMS_CONV_KERNELS_H
#define DSMS_CONV_KERNELS_H

#include <stddef.h>

#define DSMS_V 16

#define DSMS_DEFINE_GATHER(NAME, T)                                                    \
static inline void NAME##_block(const T *const *rows, const T *restrict wb,            \
                                ptrdiff_t ntap, ptrdiff_t t, T *restrict o0,           \
                                T *restrict o1, T *restrict o2, T *restrict o3)        \
{                                                                                      \
    T a0[DSMS_V] = {0}, a1[DSMS_V] = {0}, a2[DSMS_V] = {0}, a3[DSMS_V] = {0};          \
    for (ptrdiff_t i = 0; i < ntap; i++) {                                             \
        const T *restrict xr = rows[i] + t;                                            \
        const T w0 = wb[4 * i], w1 = wb[4 * i + 1];                                    \
        const T w2 = wb[4 * i + 2], w3 = wb[4 * i + 3];                                \
        for (int j = 0; j < DSMS_V; j++) {                                             \
            const T xv = xr[j];                                                        \
            a0[j] += w0 * xv;                                                          \
            a1[j] += w1 * xv;                                                          \
            a2[j] += w2 * xv;                                                          \
            a3[j] += w3 * xv;                                                          \
        }                                                                              \
    }                                                                                  \
    for (int j = 0; j < DSMS_V; j++) {                                                 \
        o0[t + j] = a0[j];                                                             \
        o1[t + j] = a1[j];                                                             \
        o2[t + j] = a2[j];                                                             \
        o3[t + j] = a3[j];                                                             \
    }                                                                                  \
}                                                                                      \
                                                                                       \
static inline void NAME##_tail(const T *const *rows, const T *restrict wb,             \
                               ptrdiff_t ntap, ptrdiff_t t, ptrdiff_t n,               \
                               T *restrict o0, T *restrict o1, T *restrict o2,         \
                               T *restrict o3)                                         \
{                                                                                      \
    for (ptrdiff_t j = 0; j < n; j++) {                                                \
        T s0 = 0, s1 = 0, s2 = 0, s3 = 0;                                              \
        for (ptrdiff_t i = 0; i < ntap; i++) {                                         \
            const T xv = rows[i][t + j];                                               \
            s0 += wb[4 * i] * xv;                                                      \
            s1 += wb[4 * i + 1] * xv;                                                  \
            s2 += wb[4 * i + 2] * xv;                                                  \
            s3 += wb[4 * i + 3] * xv;                                                  \
        }                                                                              \
        o0[t + j] = s0;                                                                \
        o1[t + j] = s1;                                                                \
        o2[t + j] = s2;                                                                \
        o3[t + j] = s3;                                                                \
    }                                                                                  \
}                                                                                      \
                                                                                       \
static void NAME(const T *const *rows, const T *restrict wp, ptrdiff_t ntap,           \
                 ptrdiff_t nb, T *restrict out, ptrdiff_t t_out)                       \
{                                                                                      \
    for (ptrdiff_t b = 0; b < nb; b++) {                                               \
        const T *wb = wp + b * ntap * 4;                                               \
        T *o0 = out + 4 * b * t_out;                                                   \
        T *o1 = o0 + t_out, *o2 = o1 + t_out, *o3 = o2 + t_out;                        \
        ptrdiff_t t = 0;                                                               \
        for (; t + DSMS_V <= t_out; t += DSMS_V)                                       \
            NAME##_block(rows, wb, ntap, t, o0, o1, o2, o3);                           \
        if (t < t_out)                                                                 \
            NAME##_tail(rows, wb, ntap, t, t_out - t, o0, o1, o2, o3);                 \
    }                                                                                  \
}

DSMS_DEFINE_GATHER(dsms_gather_conv_f32, float)
DSMS_DEFINE_GATHER(dsms_gather_conv_f64, double)

#endif
