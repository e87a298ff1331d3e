import json

import numpy as np
import pytest

from ecgtransfer.dataset import ClassLabel
from ecgtransfer.errors import ConfigInvalid
from ecgtransfer.signal_io import RecordStore, SAMPLING_RATE_HZ
from ecgtransfer.toy import (
    BeatParams, ToySpec, beat_waveform, gen_toy, generate_toy, noise_floor, qrs_onsets,
)


def test_spec_validation():
    with pytest.raises(ConfigInvalid):
        ToySpec(n_records=0)
    with pytest.raises(ConfigInvalid):
        ToySpec(hr_range=(0, 10))
    with pytest.raises(ConfigInvalid):
        ToySpec(noise=-1)
    with pytest.raises(ConfigInvalid):
        ToySpec(class_weights=(1, 1))
    with pytest.raises(ConfigInvalid):
        ToySpec(pr_range=(50, 60))


def test_onsets_follow_heart_rate():
    on = qrs_onsets(60.0, 0.25)
    np.testing.assert_allclose(on, 0.25 + np.arange(10))
    assert len(qrs_onsets(120.0, 0.0)) == 20


def test_corpus_shapes_and_ranges(toy_small):
    c = toy_small
    assert c.signals.shape == (60, 8, 5000) and c.signals.dtype == np.float32
    assert c.signals.min() >= 0 and c.signals.max() <= 1
    for p in c.params:
        assert 50 <= p.hr <= 120 and 120 <= p.pr <= 220 and 300 <= p.qt <= 450
        assert (p.qrs >= 100) == (p.label == ClassLabel.CD) or p.qrs == 100
    assert [m.record_id for m in c.meta][:2] == ["toy00", "toy01"]


def test_generation_is_seeded(toy_small):
    again = generate_toy(ToySpec(n_records=60, seed=3))
    assert again.signals.tobytes() == toy_small.signals.tobytes()
    other = generate_toy(ToySpec(n_records=60, seed=4))
    assert other.signals.tobytes() != toy_small.signals.tobytes()


def test_labels_match_waveform_timing():
    """HR and QRS width can be read back from the noise-free waveform."""
    p = BeatParams(hr=75.0, pr=160.0, qt=400.0, qrs=90.0, label=ClassLabel.NORM, phase_s=0.3)
    w = beat_waveform(p)
    fs = SAMPLING_RATE_HZ
    peaks = [i for i in range(1, len(w) - 1) if w[i] > 0.9 and w[i] >= w[i - 1] and w[i] > w[i + 1]]
    rr = np.diff(peaks).mean() / fs
    assert abs(60 / rr - 75.0) < 0.1
    above = w > 0.5            # triangle of height 1: half-height width is qrs / 2
    run = np.diff(np.flatnonzero(np.diff(above.astype(int)) != 0))[0]
    assert abs(run / fs * 1000 - 45.0) <= 1000 / fs


def test_class_morphology():
    base = dict(hr=60.0, pr=160.0, qt=400.0, qrs=90.0, phase_s=0.5)
    norm = beat_waveform(BeatParams(label=ClassLabel.NORM, **base))
    assert beat_waveform(BeatParams(label=ClassLabel.HYP, **base)).max() > 2 * norm.max() * 0.95
    sttc = beat_waveform(BeatParams(label=ClassLabel.STTC, **base))
    # T wave region (QRS onset + 240..400 ms) is flattened
    t_idx = slice(int((0.5 + 0.24) * 500), int((0.5 + 0.40) * 500))
    assert sttc[t_idx].max() < 0.5 * norm[t_idx].max()
    mi = beat_waveform(BeatParams(label=ClassLabel.MI, **base))
    assert mi.min() < -0.1 and norm.min() >= 0


def test_noise_floor_formula():
    ps = [BeatParams(hr=60.0, pr=161.0, qt=400.0, qrs=91.0, label=ClassLabel.NORM, phase_s=0.0)]
    floor = noise_floor(ps)
    # 1 s period is on the grid; 161 ms -> 162 ms (sample = 2 ms), 91 -> 92
    assert floor["HR"] == 0.0 and floor["QT"] == 0.0
    assert floor["PR"] == pytest.approx(1.0) and floor["QRS"] == pytest.approx(1.0)


def test_gen_toy_writes_store_and_floor(tmp_path):
    spec = ToySpec(n_records=5, seed=2, labeled=False, id_prefix="syn")
    corpus = gen_toy(spec, tmp_path)
    store = RecordStore(tmp_path)
    metas = store.metadata()
    assert [m.record_id for m in metas] == [f"syn{i}" for i in range(5)]
    assert all(m.class_label is None and m.hr_bpm is not None for m in metas)
    assert store.load_arrays(["syn3"])[0].tobytes() == corpus.signals[3].tobytes()
    info = json.loads((tmp_path / "toy_spec.json").read_text())
    assert info["noise_floor"] == corpus.noise_floor
    assert info["spec"]["n_records"] == 5
