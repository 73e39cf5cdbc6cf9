import csv

import numpy as np
import pytest
import scipy.io.wavfile

from dsms import pipeline
from dsms.audio_io import DatasetItem, DrumKind, Instrument, Source, generate_synthetic_drum
from dsms.diffcore import Tape, Tensor
from dsms.diffcore.tensor import current_tape
from dsms.metrics import mss_loss
from dsms.neural import DrumModel, desk_config
from dsms.pipeline import (
    Example,
    MixingStrategy,
    SineCache,
    TrainConfig,
    TrainingError,
    evaluate,
    export_embeddings,
    load_examples,
    read_history,
    render,
    resynthesize,
    train,
)
from dsms.sinusoidal import analyze, synthesize_sinusoids

N = 2048


def make_examples(count, n=N, start=0):
    out = []
    for i in range(count):
        kind = DrumKind.MEMBRANOPHONE if i % 2 == 0 else DrumKind.IDIOPHONE
        x = generate_synthetic_drum(kind, seed=start + i, seconds=n / 48000).samples
        inst = Instrument.SNARE if kind is DrumKind.MEMBRANOPHONE else Instrument.HIHAT
        out.append(Example(f"ex{start + i}", x, inst, Source.ACOUSTIC if i % 3 else Source.ELECTRONIC))
    return out


@pytest.fixture(scope="module")
def drum():
    return generate_synthetic_drum(DrumKind.MEMBRANOPHONE, seed=5, seconds=N / 48000).samples


def test_strategy_enum():
    assert [m.value for m in MixingStrategy] == ["s", "s+n", "t(s)", "t(s+n)", "t(s)+n", "t(s)+s+n"]
    assert MixingStrategy.parse("T(S)+N") is MixingStrategy.T_OF_S_PLUS_PARALLEL_N
    with pytest.raises(ValueError, match="valid strategies: s, s\\+n"):
        MixingStrategy.parse("bogus")
    assert not MixingStrategy.S.trainable and not MixingStrategy.T_OF_S.uses_noise
    assert MixingStrategy.T_OF_S_PLUS_N.uses_noise and MixingStrategy.T_OF_S_PLUS_N.uses_tcn


def test_s_is_sines_bit_identical(drum):
    bank = analyze(drum.astype(np.float64))
    out = resynthesize(drum, DrumModel(desk_config("s")), bank, strategy="s").samples
    assert out.tobytes() == synthesize_sinusoids(bank, N).samples.tobytes()


def test_s_plus_n_minus_s_is_noise(drum):
    # float32 branches summed in float64: the sum of two float32 values is
    # exact in float64, so subtracting S recovers N bit for bit
    m32 = DrumModel(desk_config("s+n"))
    bank = analyze(drum.astype(np.float64))
    a, br = resynthesize(drum, m32, bank, strategy="s+n", accumulate="float64", return_branches=True)
    b = resynthesize(drum, m32, bank, strategy="s", accumulate="float64")
    assert a.samples.dtype == np.float64
    assert np.array_equal(a.samples - b.samples, br.n.data.astype(np.float64))
    a, br = resynthesize(drum, m32, bank, strategy="s+n", return_branches=True)
    b = resynthesize(drum, m32, bank, strategy="s")
    assert np.max(np.abs((a.samples - b.samples) - br.n.data)) <= 1e-6


@pytest.mark.parametrize("strategy", [m.value for m in MixingStrategy])
def test_all_strategies_shape(strategy, drum):
    m = DrumModel(desk_config(strategy))
    out = resynthesize(drum, m, strategy=strategy)
    assert len(out) == N and np.all(np.isfinite(out.samples))


def test_full_mix_at_init_is_finite(drum):
    m = DrumModel(desk_config("t(s)+s+n"))
    for k, v in m.params.items():
        if k.startswith("tcn.") and k.endswith("conv.w"):
            v.data *= 1e-3
    out, br = resynthesize(drum, m, return_branches=True)
    assert len(out) == N and np.all(np.isfinite(out.samples))
    assert br.t is not None and br.n is not None


def test_gradient_reaches_every_group(drum):
    ex = Example("g", drum, Instrument.SNARE, Source.ACOUSTIC)
    cache = SineCache()
    m = DrumModel(desk_config("t(s)+n"))

    def grads():
        m.zero_grad()
        with Tape() as tape:
            loss = mss_loss(ex.samples, render(ex, m, cache.sines(ex))[0])
        tape.backward(loss)
        return {k: (None if p.grad is None else p.grad.copy()) for k, p in m.params.items()}

    g0 = grads()
    assert np.any(g0["noise_encoder.in.w"] != 0)
    from dsms.diffcore import AdamState, adam_step
    adam_step(m.params, g0, AdamState(lr=1e-3))
    g1 = grads()
    for group, names in m.param_groups().items():
        assert any(g1[k] is not None and np.any(g1[k] != 0) for k in names), group


def tiny_train(tmp_path, name, **kw):
    tr, va = make_examples(4), make_examples(2, start=10)
    m = DrumModel(desk_config("t(s)+n", seed=1))
    cfg = TrainConfig(lr=1e-3, batch=2, max_epochs=2, seed=4, out_dir=str(tmp_path / name), **kw)
    return train(tr, va, m, cfg), tmp_path / name


def test_training_deterministic_and_outputs(tmp_path):
    r1, d1 = tiny_train(tmp_path, "a")
    r2, d2 = tiny_train(tmp_path, "b")
    assert (d1 / "history.csv").read_bytes() == (d2 / "history.csv").read_bytes()
    assert r1.step_losses == r2.step_losses
    hist = read_history(d1 / "history.csv")
    assert [h.epoch for h in hist] == [0, 1, 2]
    assert all(np.isfinite(h.val_mss) for h in hist)
    assert (d1 / "best.dsms").exists() and (d1 / "last.dsms").exists()
    best = DrumModel.load(d1 / "best.dsms")
    for k, v in r1.model.params.items():
        assert best.params[k].data.tobytes() == v.data.tobytes()
    assert r1.best_val == min(h.val_mss for h in hist)


def test_plateau_halves_once_then_stops(monkeypatch):
    monkeypatch.setattr(pipeline, "_mean_loss", lambda *a, **k: 1.0)
    tr, va = make_examples(1, n=1024), make_examples(1, n=1024, start=5)
    res = train(tr, va, DrumModel(desk_config("s+n")), TrainConfig(lr=1e-4, batch=1))
    lrs = [h.lr for h in res.history]
    assert lrs[1:21] == [1e-4] * 20 and lrs[21:] == [5e-5] * 20
    assert res.stopped == "early_stop" and res.history[-1].epoch == 40


def test_non_finite_loss_halts(tmp_path, monkeypatch):
    def bad_loss(y, y_hat, cfg=None):
        out = mss_loss(y, y_hat, cfg)
        if current_tape() is not None:
            return Tensor(np.array(np.nan, dtype=out.dtype))
        return out

    monkeypatch.setattr(pipeline, "mss_loss", bad_loss)
    tr, va = make_examples(2, n=1024), make_examples(1, n=1024, start=5)
    with pytest.raises(TrainingError, match="non-finite"):
        train(tr, va, DrumModel(desk_config("s+n")), TrainConfig(batch=1, out_dir=str(tmp_path)))
    assert (tmp_path / "best.dsms").exists()


def test_training_needs_data_and_trainable_strategy():
    ex = make_examples(1, n=1024)
    with pytest.raises(ValueError):
        train([], ex, DrumModel(desk_config()))
    with pytest.raises(ValueError):
        train(ex, ex, DrumModel(desk_config("s")))
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


def test_sine_cache_stable_across_training():
    tr, va = make_examples(2, n=1024), make_examples(1, n=1024, start=5)
    cache = SineCache()
    before = {ex.id: cache.sines(ex).copy() for ex in tr}
    train(tr, va, DrumModel(desk_config("s+n")), TrainConfig(batch=1, max_epochs=2), cache=cache)
    for ex in tr:
        assert cache.sines(ex).tobytes() == before[ex.id].tobytes()
        fresh = synthesize_sinusoids(analyze(ex.samples.astype(np.float64)), ex.samples.size, dtype=np.float64)
        assert fresh.samples.tobytes() == before[ex.id].tobytes()


def test_evaluate_identity_mock(tmp_path):
    exs = make_examples(4, n=4096)
    rep = evaluate(exs, DrumModel(desk_config()), resynth=lambda ex: ex.samples, out_csv=tmp_path / "m.csv")
    assert {"all", "acoustic", "electronic", "snare", "cymbal"} == set(rep.groups)
    for r in rep.rows:
        assert r.mss == r.lsd == r.sf == 0
    assert (tmp_path / "m.csv").read_text().startswith("group,method,mss,lsd,sf")


def test_evaluate_singleton_group():
    ex = make_examples(1, n=4096)
    ex[0].source = Source.ELECTRONIC
    rep = evaluate(ex, DrumModel(desk_config("s+n")))
    s, e = rep.get("snare"), rep.get("electronic")
    assert (s.mss, s.lsd, s.sf) == (e.mss, e.lsd, e.sf) and s.mss > 0


def test_export_embeddings(tmp_path):
    exs = make_examples(3, n=4096)
    twin = Example("twin", exs[0].samples.copy(), exs[0].instrument, exs[0].source)
    export_embeddings(exs + [twin], DrumModel(desk_config()), tmp_path / "e.csv")
    with open(tmp_path / "e.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["id", "instrument", "source"] + [f"z_{i}" for i in range(128)]
    assert len(rows) == 5 and all(len(r) == 131 for r in rows)
    assert rows[1][1:] == rows[4][1:] and rows[1][0] != rows[4][0]


def test_load_examples(tmp_path):
    x = (np.random.default_rng(0).uniform(-0.5, 0.5, 1000) * 32767).astype(np.int16)
    scipy.io.wavfile.write(tmp_path / "a.wav", 48000, x)
    scipy.io.wavfile.write(tmp_path / "b.wav", 44100, x)
    ok = DatasetItem("a", str(tmp_path / "a.wav"), "kick", "acoustic", "p")
    (ex,) = load_examples([ok], n_samples=512)
    assert ex.samples.shape == (512,) and ex.seed == pipeline.item_seed("a")
    with pytest.raises(ValueError, match="44100"):
        load_examples([DatasetItem("b", str(tmp_path / "b.wav"), "kick", "acoustic", "p")])
