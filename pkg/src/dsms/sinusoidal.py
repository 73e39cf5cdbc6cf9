"""Sinusoidal analysis on the CQT (peak picking, partial tracking) and oscillator-bank synthesis."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio_io import SAMPLE_RATE, AudioBuffer
from .timefreq import CqtConfig, SpecKind, Spectrogram, cqt, cqt_kernel_lengths, cqt_response, hann

N_SINES = 64
HOP = 256
F_LO, F_HI = 20.0, 20480.0


@dataclass
class PartialTrack:
    amps: np.ndarray
    freqs: np.ndarray
    phase0: float
    birth_frame: int
    death_frame: int

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.float64)
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        n = self.death_frame - self.birth_frame + 1
        if self.amps.shape != (n,) or self.freqs.shape != (n,):
            raise ValueError(f"track arrays must have length death - birth + 1 = {n}")
        if np.any(self.amps < 0):
            raise ValueError("track amplitudes must be non-negative")

    def __len__(self):
        return self.amps.shape[0]


@dataclass
class SinusoidalBank:
    tracks: list = field(default_factory=list)
    hop: int = HOP
    n_frames: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if len(self.tracks) > N_SINES:
            raise ValueError(f"a bank holds at most {N_SINES} tracks")


# --- peak picking -------------------------------------------------------------------

def _bin_to_hz(u, cfg: CqtConfig):
    return cfg.f_min * 2.0 ** (np.asarray(u) / cfg.bins_per_octave)


def _peak_mask(mag, floor_db):
    """Strict local maxima (> left, >= right, endpoints excluded) above the relative floor."""
    mag = np.asarray(mag, dtype=np.float64)
    c = mag[..., 1:-1]
    is_peak = (c > mag[..., :-2]) & (c >= mag[..., 2:])
    thresh = mag.max(axis=-1, keepdims=True) * 10.0 ** (floor_db / 20.0)
    is_peak &= c > thresh
    out = np.zeros(mag.shape, dtype=bool)
    out[..., 1:-1] = is_peak
    return out


def _parabolic(mag, k):
    """Vertex offset and value of the parabola through mag[k-1:k+2] (row-wise for 2-D mag)."""
    if mag.ndim == 2:
        r = np.arange(mag.shape[0])
        a, b, c = mag[r, k - 1], mag[r, k], mag[r, k + 1]
    else:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
    den = a - 2.0 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(den != 0, 0.5 * (a - c) / den, 0.0)
    return p, b - 0.25 * (a - c) * p


def pick_peaks(frame, floor_db=-60.0, cfg: CqtConfig | None = None):
    """Peaks of one CQT magnitude frame as (freq_hz, amp) pairs, in bin order.

    Bin position is refined by a parabola through the peak and its two
    neighbours; the amplitude is the parabola's vertex value.
    """
    cfg = cfg or CqtConfig()
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (cfg.n_bins,):
        raise ValueError(f"frame must have {cfg.n_bins} bins")
    ks = np.flatnonzero(_peak_mask(frame, floor_db))
    out = []
    for k in ks:
        p, amp = _parabolic(frame, k)
        out.append((float(_bin_to_hz(k + p, cfg)), float(amp)))
    return out


def refine_peaks(mag_rows, ks, sample_rate=SAMPLE_RATE, cfg: CqtConfig | None = None, iters=48):
    """Model-based refinement of stationary-sinusoid peaks.

    Each peak's frequency is chosen so the ratio of the known kernel
    responses in the peak bin and its larger neighbour matches the measured
    magnitude ratio (solved by vectorised bisection); the amplitude is the
    peak magnitude divided by the kernel response at that frequency.
    Returns fractional bin positions and amplitudes.
    """
    cfg = cfg or CqtConfig()
    mag_rows = np.asarray(mag_rows, dtype=np.float64)
    ks = np.asarray(ks)
    r = np.arange(ks.size)
    xk = mag_rows[r, ks]
    centre = ks.astype(np.float64)

    def h(u, nb):
        f = _bin_to_hz(u, cfg)
        gk = np.abs(cqt_response(ks, f, sample_rate, cfg))
        gn = np.abs(cqt_response(nb, f, sample_rate, cfg))
        with np.errstate(divide="ignore"):
            return np.log(gk) - np.log(gn)

    def target(nb):
        with np.errstate(divide="ignore"):
            return np.log(xk) - np.log(mag_rows[r, nb])

    # neighbour kernels differ in length, so compare each side's measured
    # ratio with the model's ratio at the bin centre; the partial lies on the
    # side whose neighbour is relatively stronger than the centre predicts
    excess_r = target(ks + 1) - h(centre, ks + 1)
    excess_l = target(ks - 1) - h(centre, ks - 1)
    side = np.where(excess_r <= excess_l, 1, -1)
    nb = ks + side
    tgt = target(nb)
    at_centre = ~(np.minimum(excess_r, excess_l) < 0)
    lo = centre.copy()
    hi = lo + side
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = h(mid, nb) > tgt
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    u = np.where(at_centre, ks.astype(np.float64), 0.5 * (lo + hi))
    g = np.abs(cqt_response(ks, _bin_to_hz(u, cfg), sample_rate, cfg))
    amp = xk / np.maximum(g, 1e-12)
    return u, amp


def _window_mass(ts, ks, lengths, hop, n_samples):
    """Share of each kernel's Hann mass that falls inside the signal.

    Frame t of bin k sums w[m] = 0.5 + 0.5 cos(2 pi m / L) over the m in
    [-c, c] with 0 <= t hop + m < n_samples; closed form of the cosine sum.
    """
    L = lengths[ks].astype(np.float64)
    c = (L - 1) / 2.0
    centre = ts * float(hop)
    a = np.maximum(-c, -centre)
    b = np.minimum(c, n_samples - 1 - centre)
    th = 2.0 * np.pi / L
    cos_sum = (np.sin(th * (b + 0.5)) - np.sin(th * (a - 0.5))) / (2.0 * np.sin(th / 2.0))
    inside = 0.5 * (b - a + 1.0) + 0.5 * cos_sum
    return np.clip(inside / (0.5 * L), 1e-3, 1.0)


def _edge_response(ts, ks, freqs, lengths, hop, n_samples, sample_rate, cfg):
    """|response| of the part of kernel k inside the signal to a unit sinusoid, mass-normalised.

    Sums (0.5 + 0.5 cos(2 pi m / L)) e^{-i phi m} over the in-signal m as
    three geometric series.
    """
    L = lengths[ks].astype(np.float64)
    c = (L - 1) / 2.0
    centre = ts * float(hop)
    a = np.maximum(-c, -centre)
    b = np.minimum(c, n_samples - 1 - centre)
    phi = 2.0 * np.pi * (np.asarray(freqs) - cfg.center_freqs()[ks]) / sample_rate
    th = 2.0 * np.pi / L

    def geo(alpha):
        n = b - a + 1.0
        half = alpha / 2.0
        small = np.abs(np.sin(half)) < 1e-12
        ratio = np.where(small, n, np.sin(half * n) / np.where(small, 1.0, np.sin(half)))
        return np.exp(1j * alpha * (a + b) / 2.0) * ratio

    resp = 0.5 * geo(-phi) + 0.25 * (geo(th - phi) + geo(-th - phi))
    inside = _window_mass(ts, ks, lengths, hop, n_samples) * 0.5 * L
    return np.abs(resp) / inside


# --- tracking -------------------------------------------------------------------------

class _Track:
    __slots__ = ("frames", "u", "k", "amps", "birth_amp", "misses")

    def __init__(self, t, u, k, a):
        self.frames = [t]
        self.u = [u]
        self.k = [k]
        self.amps = [a]
        self.birth_amp = a
        self.misses = 0


def _finish(tr: _Track, cfg, interior, edge_response):
    frames = np.array(tr.frames)
    birth, death = int(frames[0]), int(frames[-1])
    grid = np.arange(birth, death + 1)
    amps_meas = np.asarray(tr.amps)
    u_meas = np.asarray(tr.u)
    ks = np.asarray(tr.k)
    # frequencies read where the kernel overhangs the signal edge are biased;
    # hold the nearest fully supported reading and re-derive the amplitude
    # from the truncated kernel's response at that frequency
    ok = interior[frames, ks]
    if not ok.any():
        return None
    if not ok.all():
        u_meas = np.interp(frames, frames[ok], u_meas[ok])
        bad = ~ok
        g = edge_response(frames[bad], ks[bad], _bin_to_hz(u_meas[bad], cfg))
        amps_meas = amps_meas.copy()
        amps_meas[bad] /= np.maximum(g, 1e-3)
    amps = np.interp(grid, frames, amps_meas)
    u = np.interp(grid, frames, u_meas)
    freqs = np.clip(_bin_to_hz(u, cfg), F_LO, F_HI)
    return PartialTrack(amps, freqs, 0.0, birth, death), tr.birth_amp


def track_partials(spec: Spectrogram, max_tracks=N_SINES, floor_db=-60.0, match_bins=1.5,
                   max_misses=3, min_frames=4, refine=True, cfg: CqtConfig | None = None) -> SinusoidalBank:
    """Frame-to-frame peak continuation on a CQT magnitude spectrogram.

    Active tracks (loudest first) claim the nearest unclaimed peak within
    ``match_bins`` bins; unclaimed peaks start tracks; a track unmatched for
    more than ``max_misses`` frames ends at its last match and short gaps are
    filled linearly. Tracks never seen in a frame whose kernel lies wholly
    inside the signal are edge artifacts and are dropped. When more than ``max_tracks`` tracks would be active the
    ones with the smallest birth amplitude are suppressed, and the finished
    bank keeps at most ``max_tracks`` tracks, again by birth amplitude.
    Phases are left at zero; see :func:`analyze`.
    """
    if spec.kind is not SpecKind.LOG:
        raise ValueError("track_partials needs a CQT (log-frequency) spectrogram")
    cfg = cfg or CqtConfig(hop=spec.hop or HOP)
    mag = np.abs(spec.bins).astype(np.float64)
    n_frames = mag.shape[0]
    lengths = cqt_kernel_lengths(cfg, spec.sample_rate)
    half = (lengths - 1) // 2
    centres = np.arange(n_frames)[:, None] * cfg.hop
    n_samples = spec.n_samples or n_frames * cfg.hop
    interior = (centres >= half[None, :]) & (centres + half[None, :] <= n_samples - 1)
    # near the edges a kernel only partly overlaps the signal; rescale so a
    # steady partial keeps its level
    et, ek = np.nonzero(~interior)
    mag[et, ek] /= _window_mass(et, ek, lengths, cfg.hop, n_samples)
    mask = _peak_mask(mag, floor_db)
    ts, ks = np.nonzero(mask)
    if refine and ts.size:
        us, amps = refine_peaks(mag[ts], ks, spec.sample_rate, cfg)
        # the kernel model only holds for fully supported frames
        edge = ~interior[ts, ks]
        amps[edge] = mag[ts[edge], ks[edge]]
    else:
        rows = mag[ts]
        p, amps = _parabolic(rows, ks) if ts.size else (np.zeros(0), np.zeros(0))
        us = ks + p
    bounds = np.searchsorted(ts, np.arange(n_frames + 1))

    active: list[_Track] = []
    done: list[_Track] = []
    for t in range(n_frames):
        sl = slice(bounds[t], bounds[t + 1])
        pu, pk, pa = us[sl], ks[sl], amps[sl]
        claimed = np.zeros(pu.size, dtype=bool)
        survivors = []
        for tr in sorted(active, key=lambda s: -s.amps[-1]):
            j = -1
            if pu.size:
                d = np.abs(pu - tr.u[-1])
                d[claimed] = np.inf
                j = int(np.argmin(d))
                if d[j] > match_bins:
                    j = -1
            if j >= 0:
                claimed[j] = True
                tr.frames.append(t)
                tr.u.append(float(pu[j]))
                tr.k.append(int(pk[j]))
                tr.amps.append(float(pa[j]))
                tr.misses = 0
                survivors.append(tr)
            else:
                tr.misses += 1
                (done if tr.misses > max_misses else survivors).append(tr)
        for j in np.flatnonzero(~claimed):
            survivors.append(_Track(t, float(pu[j]), int(pk[j]), float(pa[j])))
        if len(survivors) > max_tracks:
            survivors.sort(key=lambda s: (-s.birth_amp, s.frames[0]))
            for tr in survivors[max_tracks:]:
                # keep the history of established tracks, minus this frame
                if tr.frames[-1] == t:
                    tr.frames.pop()
                    tr.u.pop()
                    tr.k.pop()
                    tr.amps.pop()
                if tr.frames:
                    done.append(tr)
            survivors = survivors[:max_tracks]
        active = survivors
    done.extend(active)

    def edge_fix(t, k, f):
        return _edge_response(t, k, f, lengths, cfg.hop, n_samples, spec.sample_rate, cfg)

    finished = [_finish(tr, cfg, interior, edge_fix) for tr in done if len(tr.frames) >= min_frames]
    finished = [p for p in finished if p is not None]
    finished.sort(key=lambda p: (-p[1], p[0].birth_frame))
    tracks = [p for p, _ in finished[:max_tracks]]
    tracks.sort(key=lambda p: (p.birth_frame, p.freqs[0]))
    return SinusoidalBank(tracks, spec.hop or HOP, n_frames, spec.sample_rate)


# --- phase --------------------------------------------------------------------------

def _wrap(phi):
    return (phi + np.pi) % (2.0 * np.pi) - np.pi


def estimate_initial_phase(x, track: PartialTrack, hop=HOP, sample_rate=None, cfg: CqtConfig | None = None):
    """Initial phase of a track in the sine convention, wrapped to [-pi, pi).

    Angle of the Hann-weighted inner product of x with exp(i 2 pi f t) over a
    window starting at the birth sample, plus pi/2. The window spans at least
    two hops and at least one CQT kernel length at f, so neighbouring partials
    fall outside its main lobe.
    """
    if isinstance(x, AudioBuffer):
        sig, sr = x.samples, x.sample_rate
    else:
        sig, sr = np.asarray(x), SAMPLE_RATE
    if sample_rate is not None:
        sr = sample_rate
    cfg = cfg or CqtConfig(hop=hop)
    if len(track) < 1:
        raise ValueError("track has no frames")
    s0 = track.birth_frame * hop
    if s0 >= sig.shape[0] or s0 < 0:
        raise ValueError("track lies outside the signal")
    f = float(track.freqs[0])
    span = max(2 * hop, int(np.ceil(cfg.q * sr / f)))
    seg = np.asarray(sig[s0:s0 + span], dtype=np.float64)
    m = np.arange(seg.size)
    c = np.sum(seg * hann(seg.size) * np.exp(-2j * np.pi * f * m / sr))
    return float(_wrap(np.angle(c) + np.pi / 2.0))


def analyze(x, sample_rate=None, max_tracks=N_SINES, floor_db=-60.0, hop=HOP, **track_kw) -> SinusoidalBank:
    """CQT, partial tracking and initial phases for one signal."""
    if isinstance(x, AudioBuffer):
        sig, sr = x.samples, x.sample_rate
    else:
        sig, sr = np.asarray(x), SAMPLE_RATE
    if sample_rate is not None:
        sr = sample_rate
    spec = cqt(sig, hop=hop, sample_rate=sr)
    bank = track_partials(spec, max_tracks=max_tracks, floor_db=floor_db, **track_kw)
    for tr in bank.tracks:
        tr.phase0 = estimate_initial_phase(sig, tr, hop=hop, sample_rate=sr)
    return bank


# --- synthesis ----------------------------------------------------------------------

def synthesize_track(track: PartialTrack, n_samples, hop=HOP, sample_rate=SAMPLE_RATE, n_frames=None):
    """One track's samples (float64), zero outside its support."""
    out = np.zeros(n_samples)
    last = (n_frames - 1) if n_frames is not None else None
    birth, death = track.birth_frame, track.death_frame
    s0 = birth * hop
    fade_in = birth > 0
    fade_out = last is None or death < last
    start = (birth - 1) * hop if fade_in else 0
    end = min(n_samples, (death + 1) * hop + 1) if fade_out else n_samples
    if start >= n_samples or end <= start:
        return out
    n = np.arange(start, end)
    pos = (birth + np.arange(len(track))) * hop
    amp_pos, amp_val = pos, track.amps
    if fade_in:
        amp_pos, amp_val = np.r_[s0 - hop, amp_pos], np.r_[0.0, amp_val]
    if fade_out:
        amp_pos, amp_val = np.r_[amp_pos, (death + 1) * hop], np.r_[amp_val, 0.0]
    a = np.interp(n, amp_pos, amp_val)
    f = np.interp(n, pos, track.freqs)
    if np.any(f > sample_rate / 2.0):
        raise ValueError("track frequency above Nyquist")
    # accumulated phase, anchored so that phase(s0) = phase0
    c = np.concatenate(([0.0], np.cumsum(f / sample_rate)))
    phase = track.phase0 + 2.0 * np.pi * (c[:-1] - c[s0 - start])
    out[start:end] = a * np.sin(phase)
    return out


def synthesize_sinusoids(bank: SinusoidalBank, n_samples, dtype=np.float32) -> AudioBuffer:
    """Oscillator bank: sum_j a_n^j sin(Phi_n^j), amplitudes/frequencies linear between frames.

    Tracks fade in over the hop before birth and out over the hop after
    death, except at the signal edges where they hold.
    """
    if n_samples < bank.n_frames * bank.hop:
        raise ValueError("n_samples shorter than the bank's frame span")
    out = np.zeros(n_samples)
    for tr in bank.tracks:
        if np.any(tr.freqs > bank.sample_rate / 2.0):
            raise ValueError("track frequency above Nyquist")
        out += synthesize_track(tr, n_samples, bank.hop, bank.sample_rate, bank.n_frames)
    return AudioBuffer(out.astype(dtype), bank.sample_rate)


# --- CSV --------------------------------------------------------------------------------

BANK_FIELDS = ("track", "frame", "amp", "freq_hz", "phase0")


def write_bank_csv(bank: SinusoidalBank, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(BANK_FIELDS)
        for j, tr in enumerate(bank.tracks):
            for i in range(len(tr)):
                w.writerow((j, tr.birth_frame + i, repr(float(tr.amps[i])), repr(float(tr.freqs[i])), repr(tr.phase0)))


def read_bank_csv(path, n_frames, hop=HOP, sample_rate=SAMPLE_RATE) -> SinusoidalBank:
    rows: dict[int, list] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.setdefault(int(row["track"]), []).append(row)
    tracks = []
    for j in sorted(rows):
        r = sorted(rows[j], key=lambda d: int(d["frame"]))
        frames = [int(d["frame"]) for d in r]
        tracks.append(PartialTrack(
            [float(d["amp"]) for d in r], [float(d["freq_hz"]) for d in r],
            float(r[0]["phase0"]), frames[0], frames[-1],
        ))
    return SinusoidalBank(tracks, hop, n_frames, sample_rate)
