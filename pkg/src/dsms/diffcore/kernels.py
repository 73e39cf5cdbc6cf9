"""Backend selection for the conv1d hot kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Setting ``DSMS_BACKEND=numpy`` forces the fallback.

Strided convolutions (encoder downsampling) and 1x1 convolutions are a
single BLAS GEMM over an im2col view, which beats the gather microkernel,
so those go to the numpy path even when compiled.
"""
import os

from . import _conv_numpy

try:
    from . import _conv as compiled
except ImportError:  # extension not built
    compiled = None

numpy_backend = _conv_numpy

if compiled is not None and os.environ.get("DSMS_BACKEND", "").lower() != "numpy":
    active = compiled
    BACKEND = "cython"
else:
    active = _conv_numpy
    BACKEND = "numpy"


def _contig(a):
    return a if a.flags.c_contiguous else a.copy()


def _pick(stride, K):
    return numpy_backend if stride > 1 or K == 1 else active


def conv1d_forward(xp, w, dilation, stride, t_out):
    return _pick(stride, w.shape[2]).conv1d_forward(_contig(xp), _contig(w), int(dilation), int(stride), int(t_out))


def conv1d_backward_input(g, w, dilation, stride, t_pad):
    return _pick(stride, w.shape[2]).conv1d_backward_input(_contig(g), _contig(w), int(dilation), int(stride), int(t_pad))


def conv1d_backward_weight(g, xp, K, dilation, stride):
    return active.conv1d_backward_weight(_contig(g), _contig(xp), int(K), int(dilation), int(stride))
