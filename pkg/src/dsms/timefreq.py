"""STFT and constant-Q transform shared by analysis, synthesis and metrics."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.signal

from .audio_io import SAMPLE_RATE, AudioBuffer
from .diffcore.ops import frame_index


class SpecKind(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"


@dataclass
class Spectrogram:
    """Frame-major matrix (frames, bins) with per-bin centre frequencies."""

    bins: np.ndarray
    frame_rate: float
    freqs: np.ndarray
    kind: SpecKind
    hop: int = 0
    sample_rate: int = SAMPLE_RATE
    n_samples: int = 0

    def __post_init__(self):
        self.kind = SpecKind(self.kind)
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")

    @property
    def n_frames(self):
        return self.bins.shape[0]

    def magnitude(self):
        return np.abs(self.bins)


def hann(n, dtype=np.float64):
    """Periodic Hann window (the DFT-even variant used for analysis)."""
    return scipy.signal.windows.hann(n, sym=False).astype(dtype)


def _samples(x):
    if isinstance(x, AudioBuffer):
        return x.samples, x.sample_rate
    return np.asarray(x), SAMPLE_RATE


def stft(x, fft_size=1024, win_size=None, hop=256, window="hann", sample_rate=None) -> Spectrogram:
    """Complex STFT with centred frames (reflect padding of win_size // 2).

    X[t, k] = sum_m xpad[t*hop + m] * w[m] * exp(-2i pi k m / fft_size)
    """
    sig, sr = _samples(x)
    if sample_rate is not None:
        sr = sample_rate
    win_size = fft_size if win_size is None else win_size
    if win_size > fft_size:
        raise ValueError("win_size must not exceed fft_size")
    if hop < 1 or hop > win_size:
        raise ValueError("hop must be in [1, win_size]")
    if isinstance(window, str):
        if window != "hann":
            raise ValueError(f"unsupported window {window!r}")
        w = hann(win_size, sig.dtype if sig.dtype in (np.float32, np.float64) else np.float64)
    else:
        w = np.asarray(window)
    frames = sig[frame_index(sig.shape[0], win_size, hop)] * w
    spec = scipy.fft.rfft(frames, n=fft_size, axis=1)
    freqs = np.arange(fft_size // 2 + 1) * sr / fft_size
    return Spectrogram(spec, sr / hop, freqs, SpecKind.LINEAR, hop, sr, sig.shape[0])


# --- constant-Q transform ----------------------------------------------------------

@dataclass(frozen=True)
class CqtConfig:
    f_min: float = 20.0
    bins_per_octave: int = 24
    n_octaves: int = 10
    hop: int = 256
    max_kernel_seconds: float = 2.0
    lobes: int = 8  # kernel spectrum kept within +-lobes bin widths of the centre

    @property
    def n_bins(self):
        return self.bins_per_octave * self.n_octaves

    @property
    def q(self):
        return 1.0 / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    def center_freqs(self):
        return self.f_min * 2.0 ** (np.arange(self.n_bins) / self.bins_per_octave)


def cqt_kernel_lengths(cfg: CqtConfig, sample_rate):
    """Odd kernel lengths ceil(Q * sr / f_k), capped at max_kernel_seconds."""
    raw = np.ceil(cfg.q * sample_rate / cfg.center_freqs())
    raw = np.minimum(raw, cfg.max_kernel_seconds * sample_rate)
    return (raw.astype(np.int64) // 2) * 2 + 1


def _dirichlet(phi, L):
    """sum_{m=-c}^{c} exp(-i phi m) for L = 2c + 1 (real valued)."""
    phi = np.asarray(phi, dtype=np.float64)
    half = np.sin(phi / 2.0)
    small = np.abs(half) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sin(L * phi / 2.0) / half
    # near multiples of 2 pi the limit is +-L
    return np.where(small, L * np.cos(phi * (L - 1) / 2.0) * np.sign(np.cos(phi / 2.0) + 1e-300), out)


def _hann_dtft(phi, L):
    """DTFT of the centred Hann 0.5 + 0.5 cos(2 pi m / L), m in [-c, c]."""
    step = 2.0 * np.pi / L
    return 0.5 * _dirichlet(phi, L) + 0.25 * (_dirichlet(phi - step, L) + _dirichlet(phi + step, L))


def cqt_response(bin_index, freq_hz, sample_rate=SAMPLE_RATE, cfg: CqtConfig | None = None):
    """CQT reading of a unit-amplitude sinusoid at freq_hz in bin ``bin_index``.

    Signed (real) value of the normalised kernel response; equals 1 at the bin
    centre. The negative-frequency image is ignored.
    """
    cfg = cfg or CqtConfig()
    bin_index = np.asarray(bin_index)
    L = cqt_kernel_lengths(cfg, sample_rate)[bin_index]
    fk = cfg.center_freqs()[bin_index]
    phi = 2.0 * np.pi * (np.asarray(freq_hz) - fk) / sample_rate
    return _hann_dtft(phi, L) / (0.5 * L)


@lru_cache(maxsize=8)
def _cqt_tables(cfg: CqtConfig, sample_rate, n_fft):
    """Sparse kernel spectra: flat frequency indices, per-entry row ids, real weights."""
    lengths = cqt_kernel_lengths(cfg, sample_rate)
    fk = cfg.center_freqs()
    nyq = n_fft // 2
    idx, rows, vals = [], [], []
    for k in range(cfg.n_bins):
        L = int(lengths[k])
        centre = fk[k] * n_fft / sample_rate
        width = cfg.lobes * n_fft / L
        lo = max(int(math.floor(centre - width)), 0)
        hi = min(int(math.ceil(centre + width)), nyq)
        f = np.arange(lo, hi + 1)
        phi = 2.0 * np.pi * (f / n_fft - fk[k] / sample_rate)
        # spectrum of w[m] e^{i w_k m} / sum(w): real because the window is centred
        idx.append(f)
        rows.append(np.full(f.size, k))
        vals.append(_hann_dtft(phi, L) / (0.5 * L))
    out = (np.concatenate(idx), np.concatenate(rows), np.concatenate(vals))
    for a in out:
        a.setflags(write=False)
    return out


def cqt(x, f_min=20.0, bins_per_octave=24, n_octaves=10, hop=256, sample_rate=None,
        max_kernel_seconds=2.0, return_complex=False) -> Spectrogram:
    """Constant-Q magnitude spectrogram with frame t centred at sample t * hop.

    Kernels are Hann-windowed complex exponentials of length Q * sr / f_k,
    scaled so a unit sinusoid at a bin centre reads 1.0. Computed as one
    FFT of the zero-padded signal times sparse kernel spectra; sampling the
    correlation every ``hop`` samples is done by folding each product
    spectrum modulo n_fft / hop and taking a short inverse FFT.
    """
    sig, sr = _samples(x)
    if sample_rate is not None:
        sr = sample_rate
    if hop <= 0:
        raise ValueError("hop must be positive")
    if f_min <= 0:
        raise ValueError("f_min must be positive")
    cfg = CqtConfig(float(f_min), int(bins_per_octave), int(n_octaves), int(hop), float(max_kernel_seconds))
    if cfg.f_min * 2.0 ** cfg.n_octaves > sr / 2.0 + 1e-9:
        raise ValueError(f"f_min * 2^n_octaves = {cfg.f_min * 2 ** cfg.n_octaves} exceeds Nyquist {sr / 2}")

    n = sig.shape[0]
    n_frames = max(n // hop, 1)
    l_max = int(cqt_kernel_lengths(cfg, sr).max())
    n_fft = hop * (1 << max(0, math.ceil(math.log2((n + l_max) / hop))))
    m = n_fft // hop

    X = scipy.fft.rfft(np.asarray(sig, dtype=np.float64), n=n_fft)
    idx, rows, vals = _cqt_tables(cfg, sr, n_fft)
    Z = X[idx] * vals
    flat = rows * m + idx % m
    size = cfg.n_bins * m
    folded = np.bincount(flat, weights=Z.real, minlength=size) + 1j * np.bincount(flat, weights=Z.imag, minlength=size)
    # y[t*hop] = (1/n_fft) sum_f Z(f) e^{2 pi i f t / m}; ifft carries 1/m
    y = scipy.fft.ifft(folded.reshape(cfg.n_bins, m), axis=1)[:, :n_frames] * (m / n_fft)
    # the kernel carries a factor 2 so a unit sinusoid (two half-amplitude
    # exponentials, only the positive one in band) reads 1
    y = 2.0 * y
    out = y.T if return_complex else np.abs(y.T)
    return Spectrogram(np.ascontiguousarray(out), sr / hop, cfg.center_freqs(), SpecKind.LOG, hop, sr, n)


def dump_spectrogram_csv(spec: Spectrogram, path):
    """Debug dump: one row per (frame, bin) with the magnitude."""
    mag = np.abs(spec.bins)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("frame", "bin", "value"))
        for t in range(mag.shape[0]):
            for k in range(mag.shape[1]):
                w.writerow((t, k, repr(float(mag[t, k]))))
