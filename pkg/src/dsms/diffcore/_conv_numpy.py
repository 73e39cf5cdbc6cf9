"""Pure-numpy conv1d kernels (fallback when the compiled extension is absent).

Same signatures and semantics as the Cython module: inputs are pre-padded,
shape (C_in, T_pad); weights are (C_out, C_in, K).
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def _columns(xp, K, dilation, stride, t_out):
    # (C_in, K, T_out) view: element [c, k, t] = xp[c, t * stride + k * dilation]
    s_c, s_t = xp.strides
    return as_strided(
        xp,
        shape=(xp.shape[0], K, t_out),
        strides=(s_c, s_t * dilation, s_t * stride),
        writeable=False,
    )


def conv1d_forward(xp, w, dilation, stride, t_out):
    c_out, c_in, K = w.shape
    cols = _columns(xp, K, dilation, stride, t_out).reshape(c_in * K, t_out)
    return w.reshape(c_out, c_in * K) @ cols


def conv1d_backward_input(g, w, dilation, stride, t_pad):
    c_out, c_in, K = w.shape
    t_out = g.shape[1]
    gcols = (w.reshape(c_out, c_in * K).T @ g).reshape(c_in, K, t_out)
    gx = np.zeros((c_in, t_pad), dtype=g.dtype)
    stop = (t_out - 1) * stride + 1
    for k in range(K):
        off = k * dilation
        gx[:, off:off + stop:stride] += gcols[:, k, :]
    return gx


def conv1d_backward_weight(g, xp, K, dilation, stride):
    c_out, t_out = g.shape
    c_in = xp.shape[0]
    cols = _columns(xp, K, dilation, stride, t_out).reshape(c_in * K, t_out)
    return (g @ cols.T).reshape(c_out, c_in, K)
