"""Mixing strategies, resynthesis, training, evaluation and embedding export."""
from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, AudioBuffer, DatasetItem, Instrument, Source, load_wav, preprocess
from .diffcore import ops
from .diffcore.optim import AdamState, NonFiniteGradientError, PlateauScheduler, adam_step
from .diffcore.tensor import Tape, Tensor
from .metrics import MetricsReport, MssConfig, aggregate, item_metrics, mss_loss
from .neural import DrumModel
from .noise import filtered_noise_tensor, item_seed
from .sinusoidal import SinusoidalBank, analyze, synthesize_sinusoids

log = logging.getLogger(__name__)


class MixingStrategy(str, enum.Enum):
    S = "s"
    S_PLUS_N = "s+n"
    T_OF_S = "t(s)"
    T_OF_S_PLUS_N = "t(s+n)"
    T_OF_S_PLUS_PARALLEL_N = "t(s)+n"
    T_OF_S_PLUS_S_PLUS_N = "t(s)+s+n"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace(" ", ""))
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown strategy {value!r}; valid strategies: {valid}") from None

    @property
    def uses_noise(self):
        return "n" in self.value

    @property
    def uses_tcn(self):
        return self.value.startswith("t(")

    @property
    def trainable(self):
        return self is not MixingStrategy.S

    def __str__(self):
        return self.value


# --- examples and the sinusoid cache --------------------------------------------------

@dataclass
class Example:
    """A preprocessed clip ready for the model."""

    id: str
    samples: np.ndarray
    instrument: Instrument = Instrument.OTHER
    source: Source = Source.ACOUSTIC

    @property
    def seed(self):
        return item_seed(self.id)


def load_examples(items, target_seconds=2.0, n_samples=None, silence_db=-60.0):
    """Load and preprocess manifest items; ``n_samples`` optionally truncates further."""
    out = []
    for it in items:
        buf = load_wav(it.path)
        if buf.sample_rate != SAMPLE_RATE:
            raise ValueError(f"{it.path}: sample rate {buf.sample_rate} Hz, expected {SAMPLE_RATE}")
        x = preprocess(buf, target_seconds, silence_db).samples
        if n_samples is not None:
            x = x[:n_samples]
        out.append(Example(it.id, x, it.instrument, it.source))
    return out


def as_example(y, id="input"):
    if isinstance(y, Example):
        return y
    return Example(id, np.asarray(getattr(y, "samples", y), dtype=np.float32))


class SineCache:
    """Analysis results per example id; the tracker is deterministic, so run it once."""

    def __init__(self):
        self.banks: dict[str, SinusoidalBank] = {}
        self.signals: dict[str, np.ndarray] = {}

    def bank(self, ex: Example):
        if ex.id not in self.banks:
            self.banks[ex.id] = analyze(ex.samples.astype(np.float64))
        return self.banks[ex.id]

    def sines(self, ex: Example):
        if ex.id not in self.signals:
            s = synthesize_sinusoids(self.bank(ex), ex.samples.shape[0], dtype=np.float64).samples
            s.setflags(write=False)
            self.signals[ex.id] = s
        return self.signals[ex.id]


# --- resynthesis -----------------------------------------------------------------------

@dataclass
class Branches:
    s: np.ndarray
    n: Tensor | None = None
    t: Tensor | None = None
    z: Tensor | None = None
    gains: Tensor | None = None


def render(ex: Example, model: DrumModel, sines: np.ndarray, seed=None, strategy=None):
    """Differentiable forward pass: (y_hat Tensor, Branches)."""
    strategy = MixingStrategy.parse(strategy or model.strategy)
    n = ex.samples.shape[0]
    seed = ex.seed if seed is None else seed
    s = Tensor(np.asarray(sines, dtype=model.dtype))
    br = Branches(np.asarray(sines))
    if strategy.uses_noise:
        br.gains = model.noise_encoder_forward(ex.samples)
        br.n = filtered_noise_tensor(br.gains, n, seed, model.config.noise_hop)
    if strategy.uses_tcn:
        br.z = model.transient_encoder_forward(ex.samples)
        tcn_in = ops.add(s, br.n) if strategy is MixingStrategy.T_OF_S_PLUS_N else s
        br.t = model.tcn_forward(tcn_in, br.z)

    if strategy is MixingStrategy.S:
        y_hat = s
    elif strategy is MixingStrategy.S_PLUS_N:
        y_hat = ops.add(s, br.n)
    elif strategy in (MixingStrategy.T_OF_S, MixingStrategy.T_OF_S_PLUS_N):
        y_hat = br.t
    elif strategy is MixingStrategy.T_OF_S_PLUS_PARALLEL_N:
        y_hat = ops.add(br.t, br.n)
    else:
        y_hat = ops.add(ops.add(br.t, s), br.n)
    return y_hat, br


def _mix64(br: Branches, strategy, s32):
    s = np.asarray(br.s, dtype=np.float64) if s32 is None else s32.astype(np.float64)
    n = None if br.n is None else br.n.data.astype(np.float64)
    t = None if br.t is None else br.t.data.astype(np.float64)
    if strategy is MixingStrategy.S:
        return s
    if strategy is MixingStrategy.S_PLUS_N:
        return s + n
    if strategy in (MixingStrategy.T_OF_S, MixingStrategy.T_OF_S_PLUS_N):
        return t
    if strategy is MixingStrategy.T_OF_S_PLUS_PARALLEL_N:
        return t + n
    return t + s + n


def resynthesize(y, model: DrumModel, bank: SinusoidalBank | None = None, seed=0, strategy=None,
                 accumulate="float32", return_branches=False):
    """Resynthesise one preprocessed clip under the model's (or the given) strategy.

    With ``accumulate="float64"`` each branch is computed at the model's
    precision and the mix is summed in float64, so branch algebra is exact.
    """
    strategy = MixingStrategy.parse(strategy or model.strategy)
    ex = as_example(y)
    n = ex.samples.shape[0]
    if bank is None:
        bank = analyze(ex.samples.astype(np.float64))
    sines = synthesize_sinusoids(bank, n, dtype=np.float64).samples
    y_hat, br = render(ex, model, sines, seed=seed, strategy=strategy)
    if accumulate == "float64":
        out = _mix64(br, strategy, sines.astype(model.dtype))
    elif accumulate == "float32":
        out = y_hat.data
    else:
        raise ValueError("accumulate must be 'float32' or 'float64'")
    buf = AudioBuffer(out, SAMPLE_RATE)
    return (buf, br) if return_branches else buf


# --- training --------------------------------------------------------------------------

class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 12
    plateau_patience: int = 20
    lr_factor: float = 0.5
    early_stop_patience: int = 20
    max_wall_clock: float = 4 * 3600.0  # seconds
    seed: int = 0
    max_epochs: int | None = None
    max_steps: int | None = None
    out_dir: str | None = None
    mss: MssConfig = field(default_factory=MssConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch <= 0 or self.plateau_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("training hyperparameters must be positive")
        if self.lr_factor <= 0 or self.max_wall_clock <= 0:
            raise ValueError("training hyperparameters must be positive")


@dataclass
class HistoryRow:
    epoch: int
    train_mss: float
    val_mss: float
    lr: float


@dataclass
class TrainResult:
    model: DrumModel  # best validation weights
    last_model: DrumModel
    history: list
    step_losses: list
    stopped: str

    @property
    def initial_val(self):
        return self.history[0].val_mss

    @property
    def best_val(self):
        return min(r.val_mss for r in self.history)


def write_history(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("epoch", "train_mss", "val_mss", "lr"))
        for r in rows:
            w.writerow((r.epoch, repr(r.train_mss), repr(r.val_mss), repr(r.lr)))


def read_history(path):
    with open(path, newline="") as f:
        return [HistoryRow(int(d["epoch"]), float(d["train_mss"]), float(d["val_mss"]), float(d["lr"]))
                for d in csv.DictReader(f)]


def _mean_loss(examples, model, cache, cfg):
    vals = [float(mss_loss(ex.samples, render(ex, model, cache.sines(ex))[0], cfg.mss).data) for ex in examples]
    return float(np.mean(vals))


def train(train_items, val_items, model: DrumModel, cfg: TrainConfig | None = None,
          cache: SineCache | None = None, callback=None) -> TrainResult:
    """Minibatch Adam on the MSS loss with plateau halving and early stopping.

    Gradients of a batch are accumulated item by item on separate tapes and
    averaged. Validation MSS is recorded before training (epoch 0) and after
    every epoch; the best-validation weights are kept.
    """
    cfg = cfg or TrainConfig()
    train_items, val_items = list(train_items), list(val_items)
    if not train_items or not val_items:
        raise ValueError("train and validation splits must be non-empty")
    strategy = MixingStrategy.parse(model.strategy)
    if not strategy.trainable:
        raise ValueError("strategy 's' has no trainable branch")
    cache = cache or SineCache()
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    sched = PlateauScheduler(state, cfg.plateau_patience, cfg.lr_factor, cfg.early_stop_patience)
    params = model.parameters()
    start = time.monotonic()

    val = _mean_loss(val_items, model, cache, cfg)
    history = [HistoryRow(0, _mean_loss(train_items, model, cache, cfg), val, state.lr)]
    best_val, best = val, model.copy()
    sched.best = val
    step_losses = []

    def checkpoint(tag, m):
        if out_dir:
            m.save(out_dir / f"{tag}.dsms")

    def flush():
        if out_dir:
            write_history(history, out_dir / "history.csv")

    checkpoint("best", best)
    checkpoint("last", model)
    flush()

    stopped = "max_epochs"
    epoch = 0
    steps = 0
    while True:
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            stopped = "max_epochs"
            break
        epoch += 1
        order = rng.permutation(len(train_items))
        epoch_losses = []
        halt = None
        for b0 in range(0, len(order), cfg.batch):
            batch = [train_items[i] for i in order[b0:b0 + cfg.batch]]
            model.zero_grad()
            batch_loss = 0.0
            for ex in batch:
                with Tape() as tape:
                    y_hat, _ = render(ex, model, cache.sines(ex))
                    loss = mss_loss(ex.samples, y_hat, cfg.mss)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {steps + 1}, item {ex.id}; "
                                        f"last good checkpoint kept" + (f" in {out_dir}" if out_dir else ""))
                tape.backward(loss)
                batch_loss += value
            grads = {k: (None if p.grad is None else p.grad / len(batch)) for k, p in params.items()}
            try:
                adam_step(params, grads, state)
            except NonFiniteGradientError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, step {steps + 1}") from exc
            steps += 1
            step_losses.append(batch_loss / len(batch))
            epoch_losses.append(batch_loss / len(batch))
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                halt = "max_steps"
                break
            if time.monotonic() - start > cfg.max_wall_clock:
                halt = "wall_clock"
                break

        lr_used = state.lr
        val = _mean_loss(val_items, model, cache, cfg)
        history.append(HistoryRow(epoch, float(np.mean(epoch_losses)), val, lr_used))
        if val < best_val:
            best_val, best = val, model.copy()
            checkpoint("best", best)
        checkpoint("last", model)
        flush()
        if callback:
            callback(history[-1])
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, history[-1].train_mss, val, lr_used)
        if halt:
            stopped = halt
            break
        if sched.step(val):
            stopped = "early_stop"
            break
    return TrainResult(best, model, history, step_losses, stopped)


# --- evaluation and embeddings ----------------------------------------------------------

def evaluate(test_items, model: DrumModel, cache: SineCache | None = None, out_csv=None,
             mss_cfg: MssConfig | None = None, resynth=None) -> MetricsReport:
    """Resynthesise each item and aggregate MSS / LSD / SF per group.

    ``resynth`` overrides the reconstruction (a callable example -> samples),
    e.g. an identity mock.
    """
    cache = cache or SineCache()
    method = str(MixingStrategy.parse(model.strategy)) if model is not None else "custom"
    per_item = []
    for ex in test_items:
        if resynth is not None:
            y_hat = np.asarray(resynth(ex))
        else:
            y_hat = render(ex, model, cache.sines(ex))[0].data
        per_item.append((ex.instrument, ex.source, item_metrics(ex.samples, y_hat, mss_cfg)))
    report = aggregate(per_item, method)
    if out_csv:
        report.to_csv(out_csv)
    return report


def export_embeddings(items, model: DrumModel, out_csv=None):
    """Transient embeddings z, one row per item: id, instrument, source, z_0..z_{D-1}."""
    rows = []
    for ex in items:
        z = model.transient_encoder_forward(ex.samples).data
        rows.append((ex.id, Instrument(ex.instrument).value, Source(ex.source).value, z))
    if out_csv:
        D = model.config.embedding_dim
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["id", "instrument", "source"] + [f"z_{i}" for i in range(D)])
            for id_, ins, src, z in rows:
                w.writerow([id_, ins, src] + [repr(float(v)) for v in z])
    return rows


def examples_from_items(items: list[DatasetItem], **kw):
    return load_examples(items, **kw)
