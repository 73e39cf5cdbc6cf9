import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsms.audio_io import DrumKind, generate_synthetic_drum
from dsms.diffcore import Tape, Tensor
from dsms.metrics import (
    GROUP_ORDER,
    MetricsReport,
    MssConfig,
    SilentReferenceError,
    aggregate,
    evaluate_metrics,
    half_wave,
    log_mag_distance,
    lsd,
    mss,
    mss_loss,
    sf_error,
    spectral_convergence,
    spectral_flux,
)
from dsms.timefreq import stft

from conftest import tone

SR = 48000


@pytest.fixture(scope="module")
def drum():
    return generate_synthetic_drum(DrumKind.MEMBRANOPHONE, seed=2, seconds=0.5).samples.astype(np.float64)


def test_mss_config_defaults():
    cfg = MssConfig()
    assert cfg.resolutions == ((1024, 600, 120), (2048, 1200, 240), (512, 240, 50))
    assert cfg.eps == 1e-7
    with pytest.raises(ValueError):
        MssConfig(resolutions=((256, 512, 64),))


def test_spectral_convergence_examples(rng):
    Y = np.abs(rng.standard_normal((5, 9)))
    assert float(spectral_convergence(Y, Y).data) == 0
    assert float(spectral_convergence(Y, np.zeros_like(Y)).data) == 1
    assert abs(float(spectral_convergence(Y, 2 * Y).data) - 1) < 1e-6
    with pytest.raises(SilentReferenceError):
        spectral_convergence(np.zeros((2, 2)), np.ones((2, 2)))


def test_log_mag_examples(rng):
    Y = np.abs(rng.standard_normal((5, 9))) + 1.0
    Y64 = Tensor(Y, dtype=np.float64)
    assert float(log_mag_distance(Y64, Y64).data) == 0
    assert abs(float(log_mag_distance(Y64, Tensor(np.e * Y, dtype=np.float64)).data) - 1) < 1e-6
    z = np.zeros((3, 3))
    assert float(log_mag_distance(z, z).data) == 0


def test_mss_identity_and_scale_monotone(drum):
    assert mss(drum, drum) == 0
    losses = [mss(drum, s * drum) for s in (0.25, 0.5, 0.75, 1.0)]
    assert losses[1] > 0
    assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] == 0


def test_mss_length_mismatch():
    with pytest.raises(ValueError):
        mss(np.ones(1000), np.ones(999))


def test_mss_silent_reference():
    with pytest.raises(SilentReferenceError):
        mss(np.zeros(4096), np.ones(4096))


def test_mss_grad_float32_fd(drum):
    y = drum[:6000].astype(np.float32)
    rng = np.random.default_rng(0)
    y_hat = (y + 0.05 * rng.standard_normal(y.size)).astype(np.float32)
    t = Tensor(y_hat, requires_grad=True)
    with Tape() as tape:
        loss = mss_loss(y, t)
    tape.backward(loss)
    idx = rng.choice(np.flatnonzero(np.abs(t.grad) > 1e-3 * np.abs(t.grad).max()), 5, replace=False)
    for i in idx:
        h = 1e-5
        up, dn = y_hat.astype(np.float64), y_hat.astype(np.float64)
        up[i] += h
        dn[i] -= h
        # finite differences evaluated in float64 for a clean oracle
        fd = (mss(y.astype(np.float64), up) - mss(y.astype(np.float64), dn)) / (2 * h)
        assert abs(fd - t.grad[i]) <= 1e-2 * max(abs(fd), abs(t.grad[i]))


def test_mss_gradcheck_float64():
    from dsms.diffcore.gradcheck import check_gradients

    rng = np.random.default_rng(1)
    y = rng.standard_normal(1500)
    y_hat = Tensor(y + 0.3 * rng.standard_normal(1500), requires_grad=True, dtype=np.float64)
    cfg = MssConfig(resolutions=((256, 200, 64), (128, 100, 32)))
    assert check_gradients(lambda t: mss_loss(y, t, cfg), [y_hat], coords=30, rng=rng) <= 1e-3


def test_lsd_examples(rng):
    w = rng.standard_normal(SR)
    assert lsd(w, w) == 0
    assert abs(lsd(w, np.sqrt(10) * w) - 1.0) <= 0.05
    v = lsd(w, np.zeros_like(w))
    assert np.isfinite(v) and v > 1


def test_half_wave():
    assert half_wave(3.0) == 3.0 and half_wave(-2.0) == 0.0


def test_sf_stationary_sine():
    # a cosine with extrema at both ends continues seamlessly through the
    # reflect padding, so every frame sees the same stationary spectrum
    n = np.arange(24001)
    x = np.cos(2 * np.pi * 1000 * n / SR)
    sf = spectral_flux(x)
    assert np.all(sf[2:] <= 1e-3 * sf[0])


def naive_flux(x, n=1024, hop=256):
    xp = np.pad(x, n // 2, mode="reflect")
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    prev = np.zeros(k.size)
    out = []
    for t in range(len(x) // hop + 1):
        mag = np.abs(basis @ (xp[t * hop: t * hop + n] * w))
        out.append(np.sum(np.maximum(mag - prev, 0) ** 2))
        prev = mag
    return np.array(out)


def test_sf_impulse_argmax():
    x = np.zeros(SR)
    x[SR // 2] = 1.0
    sf = spectral_flux(x)
    containing = [t for t in range(sf.size) if t * 256 - 512 <= SR // 2 < t * 256 + 512]
    assert sf.argmax() in containing
    assert sf.argmax() == naive_flux(x).argmax()
    np.testing.assert_allclose(sf, naive_flux(x), atol=1e-9)


def test_sf_error_examples(drum, rng):
    assert sf_error(drum, drum) == 0
    assert abs(sf_error(drum, np.zeros_like(drum)) - spectral_flux(drum).mean()) < 1e-9
    other = drum + 0.01 * rng.standard_normal(drum.size)
    assert sf_error(drum, other) == sf_error(other, drum)


def test_sf_phase_invariance():
    # rotate every component by the same angle; magnitudes are unchanged
    rng = np.random.default_rng(8)
    parts = [(rng.uniform(100, 15000), rng.uniform(0.1, 1), rng.uniform(-np.pi, np.pi)) for _ in range(6)]
    a = sum(amp * tone(f, 0.25, phase=p) for f, amp, p in parts)
    b = sum(amp * tone(f, 0.25, phase=p + 1.2) for f, amp, p in parts)
    sa, sb = spectral_flux(a), spectral_flux(b)
    np.testing.assert_allclose(sa[3:-3], sb[3:-3], atol=1e-3 * sa.max())


@given(st.integers(0, 10**6))
def test_sf_error_pseudometric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal(3000) for _ in range(3))
    assert sf_error(a, b) == sf_error(b, a) >= 0
    assert sf_error(a, a) == 0
    assert sf_error(a, c) <= sf_error(a, b) + sf_error(b, c) + 1e-9


@given(st.integers(0, 10**6))
def test_metrics_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(4096), rng.standard_normal(4096)
    assert mss(a, b) > 0 and lsd(a, b) > 0 and sf_error(a, b) > 0


def test_aggregation_groups():
    rep = aggregate([("kick", "acoustic", (1.0, 1.0, 1.0)), ("kick", "electronic", (3.0, 5.0, 7.0)),
                     ("hihat", "electronic", (0.0, 0.0, 0.0)), ("other", "acoustic", (2.0, 2.0, 2.0))])
    assert rep.get("kick").mss == 2.0 and rep.get("kick").count == 2
    assert rep.get("cymbal").count == 1
    assert rep.get("all").count == 4
    assert "snare" not in rep.groups and rep.groups == [g for g in GROUP_ORDER if g in rep.groups]
    assert rep.get("electronic").sf == 3.5


def test_evaluate_metrics_identity_and_csv(drum, tmp_path):
    rep = evaluate_metrics([(drum, drum, "kick", "acoustic")], method="s")
    for g in ("all", "acoustic", "kick"):
        r = rep.get(g)
        assert r.mss == r.lsd == r.sf == 0
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "group,method,mss,lsd,sf"
    back = MetricsReport.from_csv(tmp_path / "r.csv")
    assert [r.group for r in back.rows] == rep.groups


def test_evaluate_metrics_empty():
    with pytest.raises(ValueError):
        evaluate_metrics([])
