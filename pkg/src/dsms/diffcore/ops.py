"""Differentiable operations on :class:`Tensor`.

Shapes must match exactly; the only implicit broadcast is tensor-with-Python
scalar. Each op computes its forward value with numpy and registers a
vector-Jacobian product on the active tape.
"""
from __future__ import annotations

import math
import numbers
from functools import lru_cache

import numpy as np
import scipy.fft

from . import kernels
from .tensor import Tensor, as_tensor, make


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(x):
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


# --- elementwise arithmetic -------------------------------------------------

def add(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        return make(a.data + a.dtype.type(b), (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        b = as_tensor(b)
        return make(b.dtype.type(a) - b.data, (b,), lambda g: (-g,))
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return make(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(x, c):
    x = as_tensor(x)
    c = x.dtype.type(c)
    return make(x.data * c, (x,), lambda g: (g * c,))


def mul(a, b):
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        c = a.dtype.type(b)
        return make(a.data / c, (a,), lambda g: (g / c,))
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make(out, (a, b), lambda g: (g / bd, -g * out / bd))


def square(x):
    x = as_tensor(x)
    xd = x.data
    return make(xd * xd, (x,), lambda g: (2 * g * xd,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    xd = x.data
    return make(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(out > 0, g / (2 * out), 0)
        return (gx.astype(out.dtype, copy=False),)

    return make(out, (x,), vjp)


def abs(x):
    x = as_tensor(x)
    sign = np.sign(x.data)
    return make(np.abs(x.data), (x,), lambda g: (g * sign,))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make(out, (x,), lambda g: (g * out * (1 - out),))


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1 / (1 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1 + e)
    return out


def elu(x):
    x = as_tensor(x)
    xd = x.data
    neg = xd < 0
    e = np.exp(np.minimum(xd, 0))
    out = np.where(neg, e - 1, xd)
    return make(out, (x,), lambda g: (np.where(neg, g * e, g),))


def prelu(x, slope):
    """Per-channel PReLU; x is (C, T) and slope is (C,)."""
    x, slope = as_tensor(x), as_tensor(slope)
    if x.ndim != 2 or slope.shape != (x.shape[0],):
        raise ValueError(f"prelu: expected x (C, T) and slope (C,), got {x.shape}, {slope.shape}")
    xd, sd = x.data, slope.data[:, None]
    neg = xd < 0
    out = np.where(neg, sd * xd, xd)

    def vjp(g):
        gx = np.where(neg, g * sd, g)
        gs = np.where(neg, g * xd, 0).sum(axis=1).astype(xd.dtype, copy=False)
        return gx, gs

    return make(out, (x, slope), vjp)


def exp_sigmoid(x, exponent=math.log(10.0), max_value=2.0, floor=1e-7):
    """max_value * sigmoid(x) ** exponent + floor: a strictly positive gain nonlinearity."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    p = s ** x.dtype.type(exponent)
    out = x.dtype.type(max_value) * p + x.dtype.type(floor)
    # d/dx s^e = e * s^e * (1 - s)
    dout = x.dtype.type(max_value * exponent) * p * (1 - s)
    return make(out, (x,), lambda g: (g * dout,))


# --- shape ops and reductions --------------------------------------------------

def sum(x):
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    return make(np.asarray(x.data.sum(), dtype=dtype), (x,), lambda g: (np.full(shape, g, dtype=dtype),))


def mean(x):
    x = as_tensor(x)
    n = x.size
    shape, dtype = x.shape, x.dtype
    return make(np.asarray(x.data.mean(), dtype=dtype), (x,), lambda g: (np.full(shape, g / n, dtype=dtype),))


def sum_axis(x, axis):
    x = as_tensor(x)
    shape = x.shape
    return make(x.data.sum(axis=axis), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return make(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, numbers.Integral)) or i is Ellipsis or i is None for i in items)


def getitem(x, index):
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(index)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make(np.array(x.data[index]), (x,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def pad_right(x, n):
    """Zero-pad the last axis of x on the right by n samples."""
    x = as_tensor(x)
    length = x.shape[-1]
    widths = [(0, 0)] * (x.ndim - 1) + [(0, n)]
    return make(np.pad(x.data, widths), (x,), lambda g: (np.ascontiguousarray(g[..., :length]),))


# --- linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2:
            return np.outer(g, bd), ad.T @ g
        if bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return make(ad @ bd, (a, b), vjp)


def linear(x, weight, bias):
    """weight @ x + bias for x of shape (N_in,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 1 or weight.shape != (bias.shape[0], x.shape[0]) or bias.ndim != 1:
        raise ValueError(f"linear: bad shapes x{x.shape} W{weight.shape} b{bias.shape}")
    xd, wd = x.data, weight.data
    return make(wd @ xd + bias.data, (x, weight, bias), lambda g: (wd.T @ g, np.outer(g, xd), g))


def film(x, gamma, beta):
    """Feature-wise affine modulation: out[c, t] = gamma[c] * x[c, t] + beta[c]."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise ValueError(f"film: bad shapes x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    xd, gd = x.data, gamma.data[:, None]

    def vjp(g):
        return g * gd, (g * xd).sum(axis=1), g.sum(axis=1)

    return make(gd * xd + beta.data[:, None], (x, gamma, beta), vjp)


def softmax(x):
    x = as_tensor(x)
    if x.ndim != 1:
        raise ValueError("softmax expects a 1-D tensor")
    e = np.exp(x.data - x.data.max())
    s = e / e.sum()
    return make(s, (x,), lambda g: (s * (g - np.dot(g, s)),))


def attention_pool(frames, query, w_key, w_value):
    """Pool (T, D) frames to (D,) with one learned query.

    Weights are softmax_t(query . (w_key @ frames[t]) / sqrt(D)); the result
    is the weighted sum of w_value @ frames[t].
    """
    frames, query = as_tensor(frames), as_tensor(query)
    if frames.ndim != 2:
        raise ValueError("attention_pool expects frames of shape (T, D)")
    T, D = frames.shape
    if T == 0:
        raise ValueError("attention_pool needs at least one frame")
    if query.shape != (D,) or w_key.shape != (D, D) or w_value.shape != (D, D):
        raise ValueError("attention_pool: query must be (D,) and projections (D, D)")
    keys = matmul(frames, transpose(w_key))
    values = matmul(frames, transpose(w_value))
    scores = scale(matmul(keys, query), 1.0 / math.sqrt(D))
    alpha = softmax(scores)
    return matmul(alpha, values)


# --- convolution --------------------------------------------------------------------

def conv_padding(kernel_size, dilation, stride, padding):
    """(left, right) zero padding for a padding mode."""
    span = dilation * (kernel_size - 1)
    if padding == "causal":
        return span, 0
    if padding == "same":
        total = max(span + 1 - stride, 0)
        return total // 2, total - total // 2
    if padding == "valid":
        return 0, 0
    left, right = padding
    return int(left), int(right)


def conv1d(x, weight, bias=None, dilation=1, stride=1, padding="causal"):
    """Dilated, strided cross-correlation of x (C_in, T) with weight (C_out, C_in, K).

    ``padding`` is "causal" (K-1)*dilation zeros on the left, "same"
    (symmetric, output length ceil(T / stride)), "valid", or a (left, right) pair.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[0]:
        raise ValueError(f"conv1d: shape mismatch x{x.shape} weight{weight.shape}")
    if dilation < 1 or stride < 1:
        raise ValueError("conv1d: dilation and stride must be >= 1")
    if x.dtype != weight.dtype:
        raise TypeError(f"conv1d: dtype mismatch {x.dtype} vs {weight.dtype}")
    c_out, c_in, K = weight.shape
    left, right = conv_padding(K, dilation, stride, padding)
    T = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (left, right))) if (left or right) else x.data
    t_pad = xp.shape[1]
    t_out = (t_pad - dilation * (K - 1) - 1) // stride + 1
    if t_out < 1:
        raise ValueError("conv1d: input too short for kernel")
    wd = weight.data
    out = kernels.conv1d_forward(xp, wd, dilation, stride, t_out)
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ValueError(f"conv1d: bias must be ({c_out},), got {bias.shape}")
        out += bias.data[:, None]
        inputs = inputs + (bias,)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = None
        if x.requires_grad:
            gxp = kernels.conv1d_backward_input(g, wd, dilation, stride, t_pad)
            gx = np.ascontiguousarray(gxp[:, left:left + T])
        gw = kernels.conv1d_backward_weight(g, xp, K, dilation, stride) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    return make(out, inputs, vjp)


# --- spectral -----------------------------------------------------------------------

@lru_cache(maxsize=32)
def frame_index(n, win, hop):
    """Gather indices of centred, reflect-padded STFT frames of a length-n signal."""
    pad = win // 2
    if n <= pad:
        raise ValueError(f"signal of length {n} too short for reflect padding of {pad}")
    p = np.arange(-pad, n + pad)
    # numpy 'reflect' mode (edge sample not repeated)
    p = np.abs(p)
    p = np.where(p >= n, 2 * (n - 1) - p, p)
    n_frames = (n + 2 * pad - win) // hop + 1
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    out = p[idx]
    out.setflags(write=False)
    return out


def stft_magnitude(x, fft_size, win_size, hop, window):
    """|STFT| of a 1-D signal, shape (frames, fft_size // 2 + 1), differentiable in x.

    Frames are centred with reflect padding of win_size // 2 on each side.
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise ValueError("stft_magnitude expects a 1-D signal")
    if win_size > fft_size:
        raise ValueError("win_size must be <= fft_size")
    if hop < 1 or hop > win_size:
        raise ValueError("hop must be in [1, win_size]")
    n = x.shape[0]
    idx = frame_index(n, win_size, hop)
    w = np.asarray(window, dtype=x.dtype)
    frames = x.data[idx] * w
    spec = scipy.fft.rfft(frames, n=fft_size, axis=1)
    mag = np.abs(spec)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(mag > 0, spec / mag, 0)
        G = g * unit
        G[:, 1:fft_size // 2 + (fft_size % 2)] *= 0.5
        gframes = scipy.fft.irfft(G, n=fft_size, axis=1)[:, :win_size] * fft_size
        gframes *= w
        gx = np.bincount(idx.ravel(), weights=gframes.ravel(), minlength=n)
        return (gx.astype(x.dtype, copy=False),)

    return make(mag.astype(x.dtype, copy=False), (x,), vjp)
