"""Multi-resolution spectral loss, log spectral distance and spectral flux onset error."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio_io import Instrument, Source
from .diffcore import ops
from .diffcore.tensor import Tensor, as_tensor
from .timefreq import hann, stft

EPS = 1e-7


@dataclass(frozen=True)
class MssConfig:
    resolutions: tuple = ((1024, 600, 120), (2048, 1200, 240), (512, 240, 50))
    sc_weight: float = 1.0
    mag_weight: float = 1.0
    eps: float = EPS

    def __post_init__(self):
        for fft, win, hop in self.resolutions:
            if win > fft:
                raise ValueError(f"window {win} exceeds fft size {fft}")


class SilentReferenceError(ValueError):
    pass


def _mag_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def spectral_convergence(Y, Y_hat):
    """||Y - Y_hat||_F / ||Y||_F; differentiable in Y_hat."""
    Y, Y_hat = as_tensor(Y), _mag_tensor(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    ref = float(np.sqrt(np.sum(np.square(Y.data, dtype=np.float64))))
    if ref == 0.0:
        raise SilentReferenceError("spectral convergence undefined for a silent reference")
    diff = ops.sub(Y_hat, Y.detach())
    return ops.div(ops.sqrt(ops.sum(ops.square(diff))), ref)


def log_mag_distance(Y, Y_hat, eps=EPS):
    """Mean |log(Y + eps) - log(Y_hat + eps)|."""
    Y, Y_hat = as_tensor(Y), _mag_tensor(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    log_ref = Tensor(np.log(Y.data + Y.dtype.type(eps)))
    return ops.mean(ops.abs(ops.sub(ops.log(ops.add(Y_hat, eps)), log_ref)))


def mss_loss(y, y_hat, cfg: MssConfig | None = None):
    """Sum over resolutions of spectral convergence + log-magnitude L1; a scalar Tensor.

    ``y`` is the reference (no gradient); ``y_hat`` may be a Tensor on the tape.
    """
    cfg = cfg or MssConfig()
    y = np.asarray(y.data if isinstance(y, Tensor) else getattr(y, "samples", y))
    y_hat = y_hat if isinstance(y_hat, Tensor) else Tensor(np.asarray(getattr(y_hat, "samples", y_hat)))
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch {y.shape} vs {y_hat.shape}")
    y = y.astype(y_hat.dtype, copy=False)
    total = None
    for fft, win, hop in cfg.resolutions:
        w = hann(win, y_hat.dtype)
        Y = ops.stft_magnitude(Tensor(y), fft, win, hop, w)
        Y_hat = ops.stft_magnitude(y_hat, fft, win, hop, w)
        term = ops.add(
            ops.scale(spectral_convergence(Y, Y_hat), cfg.sc_weight),
            ops.scale(log_mag_distance(Y, Y_hat, cfg.eps), cfg.mag_weight),
        )
        total = term if total is None else ops.add(total, term)
    return total


def mss(y, y_hat, cfg: MssConfig | None = None) -> float:
    return float(mss_loss(y, y_hat, cfg).data)


def _signal(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def lsd(y, y_hat, fft_size=2048, hop=512, eps=EPS) -> float:
    """Mean over frames of the RMS (over bins) log10-power difference."""
    y, y_hat = _signal(y), _signal(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError("length mismatch")
    P = np.abs(stft(y, fft_size, fft_size, hop).bins) ** 2
    P_hat = np.abs(stft(y_hat, fft_size, fft_size, hop).bins) ** 2
    d = np.log10(P + eps) - np.log10(P_hat + eps)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def half_wave(x):
    """H(x) = (x + |x|) / 2."""
    return (x + np.abs(x)) / 2


def spectral_flux(x, fft_size=1024, win_size=1024, hop=256):
    """SF(n) = sum_k H(|X_k(n)| - |X_k(n-1)|)^2, with a zero frame before n = 0."""
    mag = np.abs(stft(_signal(x), fft_size, win_size, hop).bins)
    prev = np.vstack([np.zeros((1, mag.shape[1])), mag[:-1]])
    return np.sum(half_wave(mag - prev) ** 2, axis=1)


def sf_error(y, y_hat) -> float:
    a, b = spectral_flux(y), spectral_flux(y_hat)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    return float(np.mean(np.abs(a - b)))


# --- aggregation --------------------------------------------------------------------

GROUP_ORDER = ("all", "acoustic", "electronic", "kick", "snare", "tom", "cymbal")


def item_groups(instrument, source):
    """Report groups an item contributes to; hihats count as cymbals."""
    instrument, source = Instrument(instrument), Source(source)
    groups = ["all", source.value]
    if instrument is Instrument.HIHAT or instrument is Instrument.CYMBAL:
        groups.append("cymbal")
    elif instrument is not Instrument.OTHER:
        groups.append(instrument.value)
    return groups


@dataclass
class MetricsRow:
    group: str
    method: str
    mss: float
    lsd: float
    sf: float
    count: int


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def get(self, group, method=None) -> MetricsRow:
        for r in self.rows:
            if r.group == group and (method is None or r.method == method):
                return r
        raise KeyError(group)

    @property
    def groups(self):
        return [r.group for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("group", "method", "mss", "lsd", "sf"))
            for r in self.rows:
                w.writerow((r.group, r.method, repr(r.mss), repr(r.lsd), repr(r.sf)))

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as f:
            for d in csv.DictReader(f):
                rows.append(MetricsRow(d["group"], d["method"], float(d["mss"]), float(d["lsd"]), float(d["sf"]), 0))
        return cls(rows)


def item_metrics(y, y_hat, cfg: MssConfig | None = None):
    return mss(y, y_hat, cfg), lsd(y, y_hat), sf_error(y, y_hat)


def aggregate(per_item, method="") -> MetricsReport:
    """per_item: iterable of (instrument, source, (mss, lsd, sf)). Empty groups are omitted."""
    acc: dict[str, list] = {}
    for instrument, source, values in per_item:
        for g in item_groups(instrument, source):
            acc.setdefault(g, []).append(values)
    if not acc:
        raise ValueError("no items to aggregate")
    rows = []
    for g in GROUP_ORDER:
        if g in acc:
            v = np.asarray(acc[g], dtype=np.float64)
            m = v.mean(axis=0)
            rows.append(MetricsRow(g, method, float(m[0]), float(m[1]), float(m[2]), len(v)))
    return MetricsReport(rows)


def evaluate_metrics(pairs, method="", cfg: MssConfig | None = None) -> MetricsReport:
    """pairs: (y, y_hat, instrument, source) tuples -> per-group arithmetic means."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_metrics needs at least one pair")
    return aggregate(((ins, src, item_metrics(y, yh, cfg)) for y, yh, ins, src in pairs), method)
