import wave

import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given
from hypothesis import strategies as st

from dsms.audio_io import (
    AudioBuffer,
    AudioFormatError,
    DatasetItem,
    DrumKind,
    Instrument,
    SilentInputWarning,
    Source,
    generate_synthetic_drum,
    load_wav,
    make_synthetic_dataset,
    preprocess,
    read_manifest,
    save_wav,
    split_dataset,
    write_manifest,
)


def test_zero_file(tmp_path):
    scipy.io.wavfile.write(tmp_path / "z.wav", 48000, np.zeros(48000, np.int16))
    b = load_wav(tmp_path / "z.wav")
    assert b.sample_rate == 48000 and len(b) == 48000 and not b.samples.any()
    assert b.samples.dtype == np.float32


def test_stereo_antiphase_averages_to_zero(tmp_path):
    x = (np.random.default_rng(0).uniform(-0.5, 0.5, 1000) * 32767).astype(np.int16)
    scipy.io.wavfile.write(tmp_path / "s.wav", 48000, np.stack([x, -x], axis=1))
    assert not load_wav(tmp_path / "s.wav").samples.any()


def test_24bit_full_scale_dc(tmp_path):
    raw = ((2**23 - 1).to_bytes(3, "little", signed=True)) * 100
    with wave.open(str(tmp_path / "d.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(3)
        w.setframerate(48000)
        w.writeframes(raw)
    s = load_wav(tmp_path / "d.wav").samples
    # hand conversion: int24 full scale / 2^23
    assert np.all(np.abs(s - (2**23 - 1) / 2**23) <= 2**-23)
    assert np.all(np.abs(s - 1.0) <= 2 * 2**-23)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "missing.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF0000WAVEjunk")
    with pytest.raises(AudioFormatError):
        load_wav(tmp_path / "junk.wav")


@pytest.mark.parametrize("bits,quantum", [(16, 2.0**-16), (24, 2.0**-24), (32, 1e-7)])
def test_save_load_roundtrip(bits, quantum, tmp_path):
    x = np.random.default_rng(bits).uniform(-0.99, 0.99, 4000).astype(np.float32)
    save_wav(tmp_path / "r.wav", AudioBuffer(x), bit_depth=bits)
    y = load_wav(tmp_path / "r.wav").samples
    assert np.max(np.abs(y - x)) <= quantum


def test_buffer_invariants():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((2, 10)))
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]))


def test_preprocess_examples():
    x = np.zeros(48000, np.float32)
    x[3] = 0.5
    out = preprocess(AudioBuffer(x), 2.0, -60).samples
    assert out[0] == 0.5 and out.size == 96000
    assert preprocess(AudioBuffer(np.ones(3 * 48000, np.float32)), 2.0).samples.size == 96000
    one = preprocess(AudioBuffer(np.ones(48000, np.float32)), 2.0).samples
    assert one.size == 96000 and not one[48000:].any() and one[:48000].all()
    with pytest.warns(SilentInputWarning):
        s = preprocess(AudioBuffer(np.full(100, 1e-5, np.float32)), 1.0)
    assert len(s) == 48000 and not s.samples.any()


@pytest.mark.filterwarnings("ignore::dsms.audio_io.SilentInputWarning")
@given(st.lists(st.floats(-1, 1, width=32), min_size=1, max_size=300), st.floats(0.001, 0.01))
def test_preprocess_idempotent(vals, seconds):
    b = AudioBuffer(np.array(vals, np.float32))
    once = preprocess(b, seconds)
    np.testing.assert_array_equal(preprocess(once, seconds).samples, once.samples)


def _items(n_packs, per_pack, sources=None):
    items = []
    for p in range(n_packs):
        src = sources[p] if sources else (Source.ACOUSTIC if p % 2 == 0 else Source.ELECTRONIC)
        for j in range(per_pack):
            items.append(DatasetItem(f"p{p}_{j}", f"{p}_{j}.wav", Instrument.KICK, src, f"pack{p}"))
    return items


def test_split_exact_divisibility():
    tr, va, te = split_dataset(_items(10, 10), seed=3)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    assert [len({i.pack_id for i in s}) for s in (tr, va, te)] == [8, 1, 1]


def test_split_stratified_and_deterministic():
    items = _items(100, 1)
    a = split_dataset(items, seed=7)
    b = split_dataset(items, seed=7)
    assert a == b
    for s in a:
        share = sum(i.source is Source.ACOUSTIC for i in s) / len(s)
        assert 0.45 <= share <= 0.55


def test_split_needs_three_packs():
    with pytest.raises(ValueError):
        split_dataset(_items(2, 5))


@given(st.integers(3, 30), st.integers(1, 6), st.integers(0, 1000))
def test_split_partitions_by_pack(n_packs, per_pack, seed):
    items = _items(n_packs, per_pack)
    splits = split_dataset(items, seed=seed)
    ids = [i.id for s in splits for i in s]
    assert sorted(ids) == sorted(i.id for i in items)
    packs = [{i.pack_id for i in s} for s in splits]
    assert not (packs[0] & packs[1] or packs[0] & packs[2] or packs[1] & packs[2])


def test_manifest_roundtrip(tmp_path):
    items = [DatasetItem("a", str(tmp_path / "audio" / "a.wav"), "snare", "electronic", "p1")]
    write_manifest(tmp_path / "m.csv", items)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "id,path,instrument,source,pack_id" and text[1].startswith("a,audio/a.wav")
    back = read_manifest(tmp_path / "m.csv")
    assert back[0].instrument is Instrument.SNARE and back[0].path == items[0].path
    with pytest.raises(ValueError):
        DatasetItem("b", "b.wav", "kick", "acoustic", "")


@pytest.mark.parametrize("kind", list(DrumKind))
def test_synthetic_drum_contract(kind):
    a = generate_synthetic_drum(kind, seed=0)
    b = generate_synthetic_drum(kind, seed=0)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert abs(np.abs(a.samples).max() - 0.9) <= 1e-6
    assert a.sample_rate == 48000


def test_idiophone_energy_above_1k():
    for seed in range(5):
        x = generate_synthetic_drum(DrumKind.IDIOPHONE, seed=seed).samples.astype(np.float64)
        p = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(x.size, 1 / 48000)
        assert p[f > 1000].sum() / p.sum() >= 0.8


def test_synthetic_dataset(tmp_path):
    ds = make_synthetic_dataset(tmp_path, count=16, seed=0, seconds=0.25)
    assert len(ds.items) == 16
    assert sum(i.id.startswith("mem") for i in ds.items) == 8
    back = read_manifest(ds.manifest)
    assert [i.id for i in back] == [i.id for i in ds.items]
    assert len(load_wav(back[0].path)) == 12000
    assert sum(len(s) for s in ds.splits) == 16
