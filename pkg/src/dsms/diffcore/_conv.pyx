# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dilated/strided 1-D convolution kernels.

Everything reduces to one gather-convolution

    out[o, t] = sum_i sum_k W[o, i, k] * X[plane[k], i, t + off[k]]

over a polyphase-split input X (plane r holds samples r, r+s, r+2s, ...),
so inner loops always run over contiguous time whatever the stride. The
C microkernel in _conv_kernels.h keeps a 4-channel x 16-sample output
block in registers while sweeping (i, k). The weight gradient is a reduction over time and is handed
to BLAS, one GEMM per tap.
"""
import numpy as np
cimport numpy as cnp

from libc.stdlib cimport free, malloc

cdef extern from "_conv_kernels.h":
    void dsms_gather_conv_f32(const float *const *rows, const float *wp, Py_ssize_t ntap,
                              Py_ssize_t nb, float *out, Py_ssize_t t_out) nogil
    void dsms_gather_conv_f64(const double *const *rows, const double *wp, Py_ssize_t ntap,
                              Py_ssize_t nb, double *out, Py_ssize_t t_out) nogil

ctypedef fused real:
    float
    double


def _polyphase(xp, Py_ssize_t stride, Py_ssize_t q):
    """(stride, C, q) array with out[r, c, j] = xp[c, j*stride + r], zero past the end."""
    c, t_pad = xp.shape
    if stride == 1 and q == t_pad:
        return xp[None]
    out = np.zeros((stride, c, q), dtype=xp.dtype)
    for r in range(stride):
        row = xp[:, r::stride][:, :q]
        out[r, :, :row.shape[1]] = row
    return out


def _taps(Py_ssize_t K, Py_ssize_t dilation, Py_ssize_t stride):
    k = np.arange(K, dtype=np.intp) * dilation
    return k % stride, k // stride


def _pack(w):
    """(O, I, K) weights -> (ceil(O/4), I, K, 4), zero-filled past O."""
    o, i, k = w.shape
    nb = (o + 3) // 4
    packed = np.zeros((nb * 4, i, k), dtype=w.dtype)
    packed[:o] = w
    return np.ascontiguousarray(packed.reshape(nb, 4, i, k).transpose(0, 2, 3, 1))


def gather_conv(xs, w, plane, off, Py_ssize_t t_out):
    """Gather-convolution of polyphase input xs (P, I, Q) with w (O, I, K)."""
    plane = np.ascontiguousarray(plane, dtype=np.intp)
    off = np.ascontiguousarray(off, dtype=np.intp)
    if xs.shape[2] < t_out + (off.max() if off.size else 0):
        raise ValueError("gather_conv: input too short")
    out = np.zeros(((w.shape[0] + 3) // 4 * 4, t_out), dtype=w.dtype)
    _gather_conv(xs, _pack(w), plane, off, out)
    return out[:w.shape[0]]


def _gather_conv(real[:, :, ::1] xs, real[:, :, :, ::1] wp, cnp.intp_t[::1] plane,
                 cnp.intp_t[::1] off, real[:, ::1] out):
    cdef Py_ssize_t nb = wp.shape[0], c_in = wp.shape[1], K = wp.shape[2]
    cdef Py_ssize_t ntap = c_in * K, ci, k
    cdef const real **rows = <const real **> malloc(ntap * sizeof(real *))
    if rows == NULL:
        raise MemoryError()
    try:
        for ci in range(c_in):
            for k in range(K):
                rows[ci * K + k] = &xs[plane[k], ci, off[k]]
        with nogil:
            if real is float:
                dsms_gather_conv_f32(rows, &wp[0, 0, 0, 0], ntap, nb, &out[0, 0], out.shape[1])
            else:
                dsms_gather_conv_f64(rows, &wp[0, 0, 0, 0], ntap, nb, &out[0, 0], out.shape[1])
    finally:
        free(rows)


def conv1d_forward(xp, w, Py_ssize_t dilation, Py_ssize_t stride, Py_ssize_t t_out):
    plane, qoff = _taps(w.shape[2], dilation, stride)
    q = t_out + int(qoff.max())
    return gather_conv(_polyphase(xp, stride, max(q, (xp.shape[1] + stride - 1) // stride)),
                       w, plane, qoff, t_out)


def conv1d_backward_input(g, w, Py_ssize_t dilation, Py_ssize_t stride, Py_ssize_t t_pad):
    c_out, c_in, K = w.shape
    t_out = g.shape[1]
    plane, qoff = _taps(K, dilation, stride)
    wt = np.ascontiguousarray(w.transpose(1, 0, 2))
    q = (t_pad + stride - 1) // stride
    gx = np.zeros((c_in, t_pad), dtype=g.dtype)
    for r in range(stride):
        taps = np.nonzero(plane == r)[0]
        if taps.size == 0:
            continue
        # gx[:, j*s + r] = sum_k w[:, :, k]^T g[:, j - qoff[k]]: a forward gather
        # over g left-padded by P = max qoff, at offsets P - qoff[k].
        P = int(qoff[taps].max())
        gpad = np.zeros((1, c_out, q + P), dtype=g.dtype)
        gpad[0, :, P:P + t_out] = g[:, :max(0, min(t_out, q))]
        res = gather_conv(gpad, np.ascontiguousarray(wt[:, :, taps]),
                          np.zeros(taps.size, dtype=np.intp), P - qoff[taps], q)
        n = gx[:, r::stride].shape[1]
        gx[:, r::stride] = res[:, :n]
    return gx


def conv1d_backward_weight(g, xp, Py_ssize_t K, Py_ssize_t dilation, Py_ssize_t stride):
    c_out, t_out = g.shape
    c_in = xp.shape[0]
    plane, qoff = _taps(K, dilation, stride)
    q = t_out + int(qoff.max())
    xs = _polyphase(xp, stride, max(q, (xp.shape[1] + stride - 1) // stride))
    gw = np.empty((c_out, c_in, K), dtype=g.dtype)
    for k in range(K):
        o = qoff[k]
        gw[:, :, k] = g @ xs[plane[k], :, o:o + t_out].T
    return gw
