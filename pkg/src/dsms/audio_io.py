"""Audio file I/O, preprocessing, dataset manifests and splits, synthetic drums."""
from __future__ import annotations

import csv
import enum
import warnings
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile

SAMPLE_RATE = 48000


class AudioFormatError(ValueError):
    pass


class SilentInputWarning(UserWarning):
    pass


@dataclass
class AudioBuffer:
    """Mono float32 signal plus its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ValueError(f"AudioBuffer must be mono (1-D), got shape {s.shape}")
        if s.dtype not in (np.float32, np.float64):
            s = s.astype(np.float32)
        if not np.all(np.isfinite(s)):
            raise ValueError("AudioBuffer samples must be finite")
        self.samples = s
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _as_samples(x):
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x)


# --- WAV I/O --------------------------------------------------------------------

def load_wav(path) -> AudioBuffer:
    """Read a 16/24/32-bit int or 32-bit float PCM WAV, averaging channels to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.stat().st_size == 0:
        raise AudioFormatError(f"{path}: empty file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.io.wavfile.WavFileWarning)
            sr, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32, so one scale fits both
        x = (data.astype(np.float64) / 2.0**31).astype(np.float32)
    elif data.dtype == np.float32:
        x = data
    elif data.dtype == np.float64:
        x = data.astype(np.float32)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")

    if x.ndim == 2:
        if x.shape[1] > 2:
            raise AudioFormatError(f"{path}: {x.shape[1]} channels, expected 1 or 2")
        x = x.mean(axis=1, dtype=np.float32)
    if x.size == 0:
        raise AudioFormatError(f"{path}: no samples")
    return AudioBuffer(np.clip(x, -1.0, 1.0).astype(np.float32), int(sr))


def save_wav(path, buffer: AudioBuffer, bit_depth=16):
    """Write a mono WAV; bit_depth is 16, 24 (integer PCM) or 32 (float)."""
    x = np.clip(np.asarray(buffer.samples, dtype=np.float64), -1.0, 1.0)
    path = Path(path)
    if bit_depth == 16:
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        scipy.io.wavfile.write(path, buffer.sample_rate, q)
    elif bit_depth == 32:
        scipy.io.wavfile.write(path, buffer.sample_rate, x.astype("<f4"))
    elif bit_depth == 24:
        q = np.clip(np.round(x * 2.0**23), -(2**23), 2**23 - 1).astype("<i4")
        raw = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(3)
            w.setframerate(buffer.sample_rate)
            w.writeframes(raw)
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")


# --- preprocessing ----------------------------------------------------------------

def preprocess(buffer: AudioBuffer, target_seconds=2.0, silence_db=-60.0) -> AudioBuffer:
    """Strip leading silence, then pad or truncate to target_seconds.

    A buffer that never crosses the threshold comes back as zeros of the target
    length, with a SilentInputWarning.
    """
    if target_seconds <= 0:
        raise ValueError("target_seconds must be positive")
    n = int(round(target_seconds * buffer.sample_rate))
    x = np.asarray(buffer.samples, dtype=np.float32)
    threshold = 10.0 ** (silence_db / 20.0)
    above = np.flatnonzero(np.abs(x) > threshold)
    out = np.zeros(n, dtype=np.float32)
    if above.size == 0:
        warnings.warn("input is entirely below the silence threshold", SilentInputWarning, stacklevel=2)
        return AudioBuffer(out, buffer.sample_rate)
    x = x[above[0]:][:n]
    out[:x.size] = x
    return AudioBuffer(out, buffer.sample_rate)


# --- dataset items, manifests, splits -------------------------------------------

class Instrument(str, enum.Enum):
    KICK = "kick"
    SNARE = "snare"
    TOM = "tom"
    HIHAT = "hihat"
    CYMBAL = "cymbal"
    OTHER = "other"


class Source(str, enum.Enum):
    ACOUSTIC = "acoustic"
    ELECTRONIC = "electronic"


MANIFEST_FIELDS = ("id", "path", "instrument", "source", "pack_id")


@dataclass(frozen=True)
class DatasetItem:
    id: str
    path: str
    instrument: Instrument
    source: Source
    pack_id: str

    def __post_init__(self):
        object.__setattr__(self, "instrument", Instrument(self.instrument))
        object.__setattr__(self, "source", Source(self.source))
        if not self.pack_id:
            raise ValueError(f"item {self.id!r} has an empty pack_id")


def read_manifest(path) -> list[DatasetItem]:
    """Load a manifest CSV; relative paths are resolved against its directory."""
    path = Path(path)
    base = path.parent
    items = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = base / p
            items.append(DatasetItem(row["id"], str(p), row["instrument"], row["source"], row["pack_id"]))
    return items


def write_manifest(path, items, relative_to=None):
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for it in items:
            p = Path(it.path)
            try:
                p = p.resolve().relative_to(base.resolve())
            except ValueError:
                pass
            w.writerow([it.id, p.as_posix(), it.instrument.value, it.source.value, it.pack_id])


def _split_score(assign, packs, targets, global_share):
    sizes = np.zeros(3)
    acoustic = np.zeros(3)
    for key, s in assign.items():
        members = packs[key]
        sizes[s] += len(members)
        acoustic[s] += sum(m.source is Source.ACOUSTIC for m in members)
    size_err = np.abs(sizes - targets).max()
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(sizes > 0, acoustic / np.maximum(sizes, 1), np.nan)
    if np.any(sizes == 0):
        return np.inf, np.inf
    return size_err, float(np.nanmax(np.abs(share - global_share)))


def split_dataset(items, ratios=(0.8, 0.1, 0.1), seed=0, tries=100):
    """Pack-grouped train/val/test split with best-effort source stratification.

    Packs are dealt greedily in a seeded random order to the split furthest
    below its size target, preferring the split that most needs the pack's
    majority source. The best of ``tries`` shuffles is kept: smallest size
    error first, then smallest acoustic-share deviation.
    """
    items = list(items)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    packs: dict[str, list[DatasetItem]] = {}
    for it in items:
        packs.setdefault(it.pack_id, []).append(it)
    if len(packs) < 3:
        raise ValueError(f"need at least 3 distinct pack_ids to split, got {len(packs)}")

    total = len(items)
    targets = np.array(ratios) * total
    global_share = sum(it.source is Source.ACOUSTIC for it in items) / total
    keys = sorted(packs)
    rng = np.random.default_rng(seed)

    best, best_score = None, None
    for _ in range(tries):
        order = [keys[i] for i in rng.permutation(len(keys))]
        sizes = np.zeros(3)
        acoustic = np.zeros(3)
        assign = {}
        for key in order:
            members = packs[key]
            n = len(members)
            n_ac = sum(m.source is Source.ACOUSTIC for m in members)
            deficit = targets - sizes
            fits = np.flatnonzero(deficit >= n / 2.0)
            if fits.size == 0:
                s = int(np.argmax(deficit))
            else:
                # how far each candidate's acoustic count is from its target share
                need = global_share * (sizes[fits] + n) - (acoustic[fits] + n_ac)
                balance = -np.abs(need)
                order_key = np.lexsort((-deficit[fits], -balance))
                s = int(fits[order_key[0]])
            assign[key] = s
            sizes[s] += n
            acoustic[s] += n_ac
        score = _split_score(assign, packs, targets, global_share)
        if best_score is None or score < best_score:
            best, best_score = assign, score
        if best_score[0] <= 0.5 and best_score[1] <= 0.01:
            break

    splits = ([], [], [])
    for it in items:
        splits[best[it.pack_id]].append(it)
    return splits


# --- synthetic drums --------------------------------------------------------------

class DrumKind(str, enum.Enum):
    MEMBRANOPHONE = "membranophone"
    IDIOPHONE = "idiophone"


# circular-membrane mode ratios (Bessel zeros relative to the fundamental)
_MEMBRANE_RATIOS = np.array([1.0, 1.594, 2.136, 2.296, 2.653, 2.918, 3.156, 3.501])


@dataclass
class DrumParams:
    seed: int = 0
    fundamental_hz: tuple = (40.0, 300.0)
    decay_s: tuple = (0.08, 0.6)
    partials: tuple = (3, 8)
    noise_decay_s: tuple = (0.01, 0.05)
    noise_level: float = 0.3
    click_level: float = 0.5
    idiophone_partials: tuple = (40, 80)
    idiophone_band_hz: tuple = (2000.0, 16000.0)
    idiophone_decay_s: tuple = (0.2, 1.2)
    seconds: float = 2.0
    sample_rate: int = SAMPLE_RATE


def _decay(t, tau):
    return np.exp(-t / tau)


def _bandlimited_noise(rng, n, sr, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < lo) | (f > hi)] = 0
    return np.fft.irfft(spec, n)


def generate_synthetic_drum(kind, params: DrumParams | None = None, **overrides) -> AudioBuffer:
    """Deterministic synthetic one-shot, peak-normalised to 0.9.

    membranophone: 3-8 decaying inharmonic modes over a 40-300 Hz fundamental,
    a short band-passed noise burst and a 2 ms onset click.
    idiophone: 40-80 decaying partials in 2-16 kHz plus a long high-passed
    noise tail.
    """
    p = params or DrumParams()
    if overrides:
        p = DrumParams(**{**p.__dict__, **overrides})
    kind = DrumKind(kind)
    sr = p.sample_rate
    n = int(round(p.seconds * sr))
    t = np.arange(n) / sr
    rng = np.random.default_rng(p.seed)
    x = np.zeros(n)

    if kind is DrumKind.MEMBRANOPHONE:
        f0 = rng.uniform(*p.fundamental_hz)
        k = int(rng.integers(p.partials[0], p.partials[1] + 1))
        ratios = _MEMBRANE_RATIOS[:k] * rng.uniform(0.98, 1.02, size=k)
        ratios[0] = 1.0
        base_tau = rng.uniform(*p.decay_s)
        for j, r in enumerate(ratios):
            amp = rng.uniform(0.3, 1.0) / (1 + j)
            tau = base_tau / (1 + 0.5 * j)
            x += amp * _decay(t, tau) * np.sin(2 * np.pi * f0 * r * t + rng.uniform(-np.pi, np.pi))
        lo = rng.uniform(200, 1000)
        burst = _bandlimited_noise(rng, n, sr, lo, lo * rng.uniform(4, 12))
        burst /= np.abs(burst).max() + 1e-12
        x += p.noise_level * burst * _decay(t, rng.uniform(*p.noise_decay_s))
        nc = int(0.002 * sr)
        click = rng.standard_normal(nc) * np.hanning(nc)
        x[:nc] += p.click_level * click / (np.abs(click).max() + 1e-12)
    else:
        k = int(rng.integers(p.idiophone_partials[0], p.idiophone_partials[1] + 1))
        freqs = rng.uniform(*p.idiophone_band_hz, size=k)
        taus = rng.uniform(*p.idiophone_decay_s, size=k)
        amps = rng.uniform(0.2, 1.0, size=k)
        phases = rng.uniform(-np.pi, np.pi, size=k)
        for f, tau, a, ph in zip(freqs, taus, amps, phases):
            x += a * _decay(t, tau) * np.sin(2 * np.pi * f * t + ph)
        tail = _bandlimited_noise(rng, n, sr, 1500.0, 20000.0)
        tail /= np.abs(tail).max() + 1e-12
        x += p.noise_level * np.abs(x).max() * tail * _decay(t, rng.uniform(0.3, 1.0))
        x *= 1 - np.exp(-t / 0.0005)  # soften the onset step

    x *= 0.9 / np.abs(x).max()
    return AudioBuffer(x.astype(np.float32), sr)


@dataclass
class SyntheticDataset:
    root: Path
    manifest: Path
    items: list = field(default_factory=list)
    splits: tuple = ((), (), ())


_MEMBRANE_INSTRUMENTS = (
    (Instrument.KICK, (40.0, 90.0)),
    (Instrument.TOM, (90.0, 200.0)),
    (Instrument.SNARE, (180.0, 300.0)),
)


def make_synthetic_dataset(out_dir, count=64, seed=0, pack_size=4, seconds=2.0, click_level=0.5):
    """Write ``count`` synthetic drums (half of each family), a manifest and 80/10/10 splits."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    items = []
    n_membrane = count - count // 2
    for i in range(count):
        membrane = i < n_membrane
        j = i if membrane else i - n_membrane
        pack_no = j // pack_size
        source = Source.ACOUSTIC if pack_no % 2 == 0 else Source.ELECTRONIC
        item_seed = int(rng.integers(0, 2**31 - 1))
        if membrane:
            instrument, f_range = _MEMBRANE_INSTRUMENTS[j % 3]
            buf = generate_synthetic_drum(
                DrumKind.MEMBRANOPHONE, seed=item_seed, fundamental_hz=f_range,
                seconds=seconds, click_level=click_level,
            )
        else:
            instrument = Instrument.HIHAT if j % 2 == 0 else Instrument.CYMBAL
            decay = (0.05, 0.3) if instrument is Instrument.HIHAT else (0.3, 1.2)
            buf = generate_synthetic_drum(DrumKind.IDIOPHONE, seed=item_seed, idiophone_decay_s=decay, seconds=seconds)
        family = "mem" if membrane else "idio"
        item_id = f"{family}{j:04d}"
        rel = Path("audio") / f"{item_id}.wav"
        save_wav(out / rel, buf, bit_depth=16)
        items.append(DatasetItem(item_id, str(out / rel), instrument, source, f"{family}-pack{pack_no:03d}"))

    manifest = out / "manifest.csv"
    write_manifest(manifest, items)
    splits = split_dataset(items, seed=seed)
    for name, part in zip(("train", "val", "test"), splits):
        write_manifest(out / f"{name}.csv", part, relative_to=out)
    return SyntheticDataset(out, manifest, items, splits)

