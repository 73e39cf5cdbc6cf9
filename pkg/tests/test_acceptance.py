"""Acceptance criteria A1-A10, each printing one PASS/FAIL line.

A5 and A6 train small models on CPU (roughly 10-15 minutes each) and are
marked ``slow``; deselect them with ``-m "not slow"``. A6 is a soft trend
check: a miss emits a warning instead of failing.
"""
import time
import warnings

import numpy as np
import pytest

from dsms.audio_io import DrumKind, generate_synthetic_drum, make_synthetic_dataset
from dsms.diffcore import Tensor, ops
from dsms.diffcore.gradcheck import check_gradients, random_tensor
from dsms.metrics import MssConfig, half_wave, lsd, mss, mss_loss, sf_error, spectral_convergence
from dsms.neural import DrumModel, ModelConfig, desk_config
from dsms.noise import HOP as NOISE_HOP
from dsms.noise import N_BANDS, filtered_noise_tensor, gains_to_ir, n_noise_frames, overlap_add
from dsms.pipeline import SineCache, TrainConfig, evaluate, load_examples, read_history, resynthesize, train
from dsms.sinusoidal import analyze, synthesize_sinusoids
from dsms.timefreq import hann

SR = 48000
SINE_HOP = 256


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def tone(f, seconds, amp=1.0, phase=0.0):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * f * t + phase)


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref ** 2) / np.sum((ref - est) ** 2))


def test_a1_sinusoidal_round_trip(capsys):
    t0 = time.perf_counter()
    x = tone(440.0, 2.0)
    y = synthesize_sinusoids(analyze(x), x.size, dtype=np.float64).samples
    snr_440 = snr_db(x[SINE_HOP:-SINE_HOP], y[SINE_HOP:-SINE_HOP])
    freqs = [310.0, 523.0, 871.0, 1377.0, 2230.0]  # every neighbour pair >= 2 semitones apart
    assert min(12 * np.log2(b / a) for a, b in zip(freqs, freqs[1:])) >= 2
    mix = sum(a * tone(f, 2.0, phase=p) for f, a, p in zip(freqs, (1, 0.7, 0.5, 0.4, 0.3), (0, 1, 2, 3, 4)))
    y = synthesize_sinusoids(analyze(mix), mix.size, dtype=np.float64).samples
    snr_mix = snr_db(mix[SINE_HOP:-SINE_HOP], y[SINE_HOP:-SINE_HOP])
    dt = time.perf_counter() - t0
    report(capsys, "A1", snr_440 >= 40 and snr_mix >= 25 and dt < 10,
           f"440 Hz SNR {snr_440:.1f} dB (>= 40), 5-partial SNR {snr_mix:.1f} dB (>= 25), {dt:.1f} s (< 10)")


def test_a2_overlap_add(capsys):
    t0 = time.perf_counter()
    L = 40
    ones = Tensor(np.ones((L, 2 * NOISE_HOP)), dtype=np.float64)
    cola = overlap_add(ones, NOISE_HOP, L * NOISE_HOP, offset=NOISE_HOP, window=hann(2 * NOISE_HOP)).data
    cola_err = float(np.max(np.abs(cola[NOISE_HOP:-NOISE_HOP] - 1)))
    import scipy.signal

    n = 10 * SR
    g = np.ones((n_noise_frames(n), N_BANDS))
    x = filtered_noise_tensor(Tensor(g, dtype=np.float64), n, seed=0).data
    f, p = scipy.signal.welch(x, SR, nperseg=4096)
    band = (f >= 200) & (f <= 20000)
    db = 10 * np.log10(p[band] / p[band].mean())
    dev = float(np.max(np.abs(db)))
    dt = time.perf_counter() - t0
    report(capsys, "A2", cola_err <= 1e-6 and dev <= 3 and dt < 30,
           f"COLA error {cola_err:.1e} (<= 1e-6), PSD deviation {dev:.2f} dB (<= 3), {dt:.1f} s (< 30)")


def test_a3_gradient_integrity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errs = {}
    probes = {}

    def weighted(out):
        # a fixed random projection per output shape so every call sees the same scalar objective
        if out.shape not in probes:
            probes[out.shape] = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
        return ops.sum(ops.mul(out, probes[out.shape]))

    x, w, b = random_tensor(rng, (3, 40)), random_tensor(rng, (4, 3, 5)), random_tensor(rng, (4,))
    errs["conv1d causal"] = check_gradients(lambda x, w, b: weighted(ops.conv1d(x, w, b, 3, 1, "causal")), [x, w, b])
    errs["conv1d strided"] = check_gradients(lambda x, w, b: weighted(ops.conv1d(x, w, b, 1, 2, "same")), [x, w, b])
    v, W, bb = random_tensor(rng, (6,)), random_tensor(rng, (5, 6)), random_tensor(rng, (5,))
    errs["linear"] = check_gradients(lambda v, W, bb: weighted(ops.linear(v, W, bb)), [v, W, bb])
    h, gm, bt = random_tensor(rng, (4, 9)), random_tensor(rng, (4,)), random_tensor(rng, (4,))
    errs["film"] = check_gradients(lambda h, gm, bt: weighted(ops.film(h, gm, bt)), [h, gm, bt])
    f, q, wk, wv = (random_tensor(rng, s) for s in ((7, 5), (5,), (5, 5), (5, 5)))
    errs["attention_pool"] = check_gradients(lambda f, q, wk, wv: weighted(ops.attention_pool(f, q, wk, wv)),
                                             [f, q, wk, wv])
    a = random_tensor(rng, (5, 6))
    for name, fn in (("elu", ops.elu), ("tanh", ops.tanh), ("sigmoid", ops.sigmoid),
                     ("exp_sigmoid", ops.exp_sigmoid), ("exp", ops.exp)):
        errs[name] = check_gradients(lambda a: weighted(fn(a)), [a])
    slope = random_tensor(rng, (5,))
    errs["prelu"] = check_gradients(lambda a, s: weighted(ops.prelu(a, s)), [a, slope])
    nu = Tensor(rng.uniform(0.1, 1, (2, N_BANDS)), requires_grad=True, dtype=np.float64)
    errs["gains_to_ir"] = check_gradients(lambda nu: weighted(gains_to_ir(nu)), [nu], coords=40, rng=rng)
    n = 4 * NOISE_HOP + 30
    gains = Tensor(rng.uniform(0.1, 1, (n_noise_frames(n), N_BANDS)), requires_grad=True, dtype=np.float64)
    errs["filtered_noise chain"] = check_gradients(lambda g: weighted(filtered_noise_tensor(g, n, 7)), [gains],
                                                   coords=40, rng=rng)
    y = rng.standard_normal(2000)
    y_hat = Tensor(y + 0.2 * rng.standard_normal(2000), requires_grad=True, dtype=np.float64)
    errs["mss_loss"] = check_gradients(lambda t: mss_loss(y, t), [y_hat], coords=40, rng=rng)
    worst = max(errs, key=errs.get)
    dt = time.perf_counter() - t0
    report(capsys, "A3", errs[worst] <= 1e-3 and dt < 300,
           f"{len(errs)} ops, worst relative error {errs[worst]:.1e} ({worst}) (<= 1e-3), {dt:.1f} s (< 300)")


def test_a4_metric_identities(capsys):
    y = generate_synthetic_drum(DrumKind.MEMBRANOPHONE, seed=4, seconds=0.5).samples
    Y = np.abs(np.random.default_rng(0).standard_normal((10, 20)))
    vals = {
        "mss(y,y)": mss(y, y), "lsd(y,y)": lsd(y, y), "sf_error(y,y)": sf_error(y, y),
        "SC(Y,0)": float(spectral_convergence(Y, np.zeros_like(Y)).data),
        "H(3)": half_wave(3.0), "H(-2)": half_wave(-2.0),
    }
    expect = {"mss(y,y)": 0, "lsd(y,y)": 0, "sf_error(y,y)": 0, "SC(Y,0)": 1, "H(3)": 3, "H(-2)": 0}
    ok = all(vals[k] == expect[k] for k in expect)
    report(capsys, "A4", ok, ", ".join(f"{k} = {v:g}" for k, v in vals.items()))


# --- A5 / A6: desk-scale training ------------------------------------------------------

CLIP = 24576  # 0.512 s clips keep a 200-step run well inside the time budget
A5_TRAIN = dict(lr=1e-3, batch=4, max_steps=200, seed=0, max_wall_clock=1800.0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("a5")
    ds = make_synthetic_dataset(root / "data", count=64, seed=0, click_level=0.5)
    tr, va, te = (load_examples(s, n_samples=CLIP) for s in ds.splits)
    return ds, tr, va, te, SineCache(), root


@pytest.fixture(scope="module")
def a5_run(corpus):
    ds, tr, va, te, cache, root = corpus
    model = DrumModel(desk_config("t(s)+n", seed=0))
    t0 = time.perf_counter()
    res = train(tr, va, model, TrainConfig(out_dir=str(root / "ts_n"), **A5_TRAIN), cache=cache)
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_a5_training_smoke(corpus, a5_run, capsys):
    ds, tr, va, te, cache, root = corpus
    res, dt = a5_run
    membrane = sum(i.id.startswith("mem") for i in ds.items)
    drop = 1 - res.best_val / res.initial_val
    last_drop = 1 - res.history[-1].val_mss / res.initial_val
    finite = all(np.isfinite(res.step_losses)) and all(np.isfinite([h.val_mss for h in res.history]))
    steps = len(res.step_losses)
    ok = membrane == 32 and len(ds.items) == 64 and steps == 200 and finite and drop >= 0.30 and dt < 1800
    report(capsys, "A5", ok,
           f"64 drums ({membrane} membranophone), {steps} steps, val MSS {res.initial_val:.3f} -> best "
           f"{res.best_val:.3f} (drop {100 * drop:.1f}% >= 30%; final {100 * last_drop:.1f}%), "
           f"finite={finite}, {dt / 60:.1f} min (< 30)")
    assert read_history(root / "ts_n" / "history.csv")[0].epoch == 0


@pytest.mark.slow
def test_a6_tcn_trend_soft(corpus, a5_run, capsys):
    ds, tr, va, te, cache, root = corpus
    res_t, _ = a5_run
    res_sn = train(tr, va, DrumModel(desk_config("s+n", seed=0)),
                   TrainConfig(out_dir=str(root / "s_n"), **A5_TRAIN), cache=cache)
    held_out = [ex for ex in te if ex.id.startswith("mem")]
    assert held_out, "test split has no membranophones"
    sf_t = evaluate(held_out, res_t.model, cache).get("all").sf
    sf_sn = evaluate(held_out, res_sn.model, cache).get("all").sf
    ok = sf_t <= sf_sn
    line = f"SF error on {len(held_out)} held-out membranophones: T(S)+N {sf_t:.3f} vs S+N {sf_sn:.3f}"
    with capsys.disabled():
        print(f"\nA6 {'PASS' if ok else 'WARN'} (soft): {line}")
    if not ok:
        warnings.warn(f"A6 trend not reproduced: {line}", UserWarning)


# --- A7 - A10 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_model():
    return DrumModel(ModelConfig())


def test_a7_causality(full_model, capsys):
    rng = np.random.default_rng(7)
    rf = full_model.config.tcn.receptive_field
    T = 4 * rf
    x = rng.standard_normal(T).astype(np.float32)
    z = rng.standard_normal(128).astype(np.float32)
    base = full_model.tcn_forward(x, z).data
    bad = []
    for t in rng.integers(0, T - rf, size=10):
        x2 = x.copy()
        x2[t] += 1.0
        d = np.flatnonzero(full_model.tcn_forward(x2, z).data != base)
        if d.size == 0 or d.min() < t or d.max() > t + rf - 1:
            bad.append(int(t))
    report(capsys, "A7", rf == 3061 and not bad,
           f"receptive field {rf}; 10 perturbations confined to [t, t + {rf - 1}]; violations {bad}")


def test_a8_film_identity(full_model, capsys):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(5000).astype(np.float32)
    outs = [full_model.tcn_forward(x, rng.standard_normal(128).astype(np.float32) * s).data.tobytes()
            for s in (0.0, 1.0, 100.0)]
    report(capsys, "A8", len(set(outs)) == 1, "tcn_forward output bitwise identical for three different z")


def test_a9_determinism(tmp_path, capsys):
    exs = []
    for i in range(6):
        kind = DrumKind.MEMBRANOPHONE if i % 2 else DrumKind.IDIOPHONE
        from dsms.pipeline import Example

        exs.append(Example(f"d{i}", generate_synthetic_drum(kind, seed=i, seconds=4096 / SR).samples))
    runs = []
    for name in ("a", "b"):
        res = train(exs[:4], exs[4:], DrumModel(desk_config("t(s)+s+n", seed=5)),
                    TrainConfig(lr=1e-3, batch=2, max_epochs=3, seed=9, out_dir=str(tmp_path / name)))
        runs.append((tmp_path / name / "history.csv").read_bytes())
    model = res.model
    model.save(tmp_path / "m.dsms")
    back = DrumModel.load(tmp_path / "m.dsms")
    exact = all(back.params[k].data.tobytes() == v.data.tobytes() for k, v in model.params.items())
    report(capsys, "A9", runs[0] == runs[1] and exact,
           f"history CSVs identical: {runs[0] == runs[1]}; checkpoint round trip bit-exact: {exact}")


def test_a10_strategy_algebra(full_model, capsys):
    y = generate_synthetic_drum(DrumKind.MEMBRANOPHONE, seed=10).samples
    bank = analyze(y.astype(np.float64))
    m = full_model.with_strategy("s+n")
    a, br = resynthesize(y, m, bank, strategy="s+n", accumulate="float64", return_branches=True)
    b = resynthesize(y, m, bank, strategy="s", accumulate="float64")
    diff64 = float(np.max(np.abs((a.samples - b.samples) - br.n.data.astype(np.float64))))
    a32, br32 = resynthesize(y, m, bank, strategy="s+n", return_branches=True)
    b32 = resynthesize(y, m, bank, strategy="s")
    diff32 = float(np.max(np.abs((a32.samples - b32.samples) - br32.n.data)))
    report(capsys, "A10", diff64 == 0 and diff32 <= 1e-6,
           f"float64 accumulation max |(S+N)-S-N| = {diff64:g} (== 0), float32 = {diff32:.1e} (<= 1e-6)")
