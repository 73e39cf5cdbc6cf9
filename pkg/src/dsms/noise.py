"""Differentiable filtered-noise synthesis from frame-wise linear-band gains.

N_n = sum_i w(n - h i) (eps * ir_i)_n, with ir_i the linear-phase, Hann
tapered impulse response of the gain vector nu_i and w a Hann window of
length 2h centred on frame i. Every stage is a tape op, and the chain is
linear in the gains.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .audio_io import SAMPLE_RATE, AudioBuffer
from .diffcore import ops
from .diffcore.tensor import Tensor, as_tensor, make
from .timefreq import hann

N_BANDS = 128
HOP = 128


@dataclass
class NoiseFrames:
    """(L, N_N) non-negative band gains at hop h."""

    gains: np.ndarray
    hop: int = HOP

    def __post_init__(self):
        g = np.asarray(self.gains.data if isinstance(self.gains, Tensor) else self.gains)
        if g.ndim != 2:
            raise ValueError("gains must be (frames, bands)")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("gains must be finite and non-negative")

    @property
    def n_frames(self):
        return self.gains.shape[0]

    @property
    def n_bands(self):
        return self.gains.shape[1]


def n_noise_frames(n_samples, hop=HOP):
    return -(-n_samples // hop)


def item_seed(item_id: str) -> int:
    """Stable per-item noise seed (CRC32 of the id)."""
    return zlib.crc32(item_id.encode("utf-8"))


# --- gains -> impulse response ----------------------------------------------------

@lru_cache(maxsize=8)
def ir_basis(n_bands, dtype_name="float64"):
    """(n_bands, 2 n_bands) matrix B with ir = nu @ B.

    Row j is band j's zero-phase response (bins 0..n_bands-1, Nyquist bin 0)
    through the inverse real DFT, rotated by n_bands to linear phase and Hann
    tapered.
    """
    n = 2 * n_bands
    eye = np.zeros((n_bands, n_bands + 1))
    eye[:, :n_bands] = np.eye(n_bands)
    irs = np.fft.irfft(eye, n=n, axis=1)
    irs = np.roll(irs, n_bands, axis=1) * hann(n)
    out = irs.astype(dtype_name)
    out.setflags(write=False)
    return out


def gains_to_ir(nu):
    """Band gains (..., N_N) -> real impulse responses (..., 2 N_N)."""
    nu = as_tensor(nu)
    if np.any(nu.data < 0):
        raise ValueError("noise gains must be non-negative")
    return ops.matmul(nu, Tensor(ir_basis(nu.shape[-1], nu.dtype.name)))


# --- noise excitation and per-frame convolution ------------------------------------

def noise_frames(seed, n_frames, hop, ir_len, dtype=np.float32):
    """Per-frame noise segments (L, 2h + K - 1) cut from one shared uniform stream.

    Segment i starts at stream index i*h, where stream index q holds the
    excitation at sample q - lead. With lead = h + K - 1 - K//2 the 'valid'
    convolution against a K-tap IR, advanced by its K//2 linear-phase delay,
    lands on samples [i*h - h, i*h + h). Returns (segments, lead).
    """
    K = ir_len
    seg = 2 * hop + K - 1
    # eps index 0 corresponds to sample -(h + K - 1 - K//2)
    lead = hop + K - 1 - K // 2
    total = (n_frames - 1) * hop + seg
    rng = np.random.default_rng(seed)
    eps = rng.uniform(-1.0, 1.0, size=total).astype(dtype)
    starts = np.arange(n_frames) * hop
    idx = starts[:, None] + np.arange(seg)[None, :]
    return eps[idx], lead


def noise_convolve(ir, eps_frames):
    """Row-wise 'valid' convolution: out[i, j] = sum_m ir[i, m] eps[i, j + K - 1 - m]."""
    ir = as_tensor(ir)
    e = np.asarray(eps_frames)
    L, K = ir.shape
    S = e.shape[1]
    n_out = S - K + 1
    nf = scipy.fft.next_fast_len(S + K - 1, real=True)
    E = scipy.fft.rfft(e, n=nf, axis=1)
    out = scipy.fft.irfft(E * scipy.fft.rfft(ir.data, n=nf, axis=1), n=nf, axis=1)[:, K - 1:K - 1 + n_out]
    out = np.ascontiguousarray(out, dtype=ir.dtype)

    def vjp(g):
        # d out[i, j] / d ir[i, m] = eps[i, j + K - 1 - m]: a correlation of g with eps
        G = scipy.fft.rfft(g, n=nf, axis=1)
        corr = scipy.fft.irfft(E * np.conj(G), n=nf, axis=1)[:, :K]
        return (np.ascontiguousarray(corr[:, ::-1], dtype=ir.dtype),)

    return make(out, (ir,), vjp)


def overlap_add(frames, hop, n_samples, offset, window=None):
    """Sum window-weighted frames (L, W) into a signal; frame i starts at i*hop - offset."""
    frames = as_tensor(frames)
    L, W = frames.shape
    w = np.ones(W, dtype=frames.dtype) if window is None else np.asarray(window, dtype=frames.dtype)
    pos = np.arange(L)[:, None] * hop - offset + np.arange(W)[None, :]
    keep = (pos >= 0) & (pos < n_samples)
    flat_pos = pos[keep]
    weights = np.broadcast_to(w, (L, W))
    vals = (frames.data * weights)[keep]
    out = np.bincount(flat_pos, weights=vals, minlength=n_samples).astype(frames.dtype)

    def vjp(g):
        gf = np.zeros((L, W), dtype=frames.dtype)
        gf[keep] = g[flat_pos]
        return (gf * weights,)

    return make(out, (frames,), vjp)


def filtered_noise_tensor(gains, n_samples, seed, hop=HOP):
    """Differentiable filtered noise from (L, N_N) gains; returns a (n_samples,) Tensor."""
    gains = as_tensor(gains)
    L, n_bands = gains.shape
    if L != n_noise_frames(n_samples, hop):
        raise ValueError(f"expected {n_noise_frames(n_samples, hop)} frames for {n_samples} samples, got {L}")
    ir = gains_to_ir(gains)
    K = ir.shape[1]
    eps, _ = noise_frames(seed, L, hop, K, dtype=gains.dtype)
    y = noise_convolve(ir, eps)
    return overlap_add(y, hop, n_samples, offset=hop, window=hann(2 * hop))


def filtered_noise(frames: NoiseFrames, n_samples, seed, sample_rate=SAMPLE_RATE) -> AudioBuffer:
    g = frames.gains.data if isinstance(frames.gains, Tensor) else np.asarray(frames.gains)
    out = filtered_noise_tensor(Tensor(g), n_samples, seed, frames.hop)
    return AudioBuffer(out.data, sample_rate)
