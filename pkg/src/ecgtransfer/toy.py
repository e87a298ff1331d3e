"""Synthetic quasi-ECG corpus with labels that are exact by construction.

Each beat is a sum of three shapes placed relative to its QRS onset ``q``:

* a raised-cosine P bump starting ``pr`` ms before ``q`` (lasting 80 ms),
* a triangular QRS spike from ``q`` to ``q + qrs``,
* a raised-cosine T bump ending ``qt`` ms after ``q`` (lasting 160 ms).

QRS onsets sit at ``phase + k * 60 / hr`` seconds for every integer ``k``;
a beat is counted inside the 10 s window when its onset falls in ``[0, 10)``.
With ``phase`` drawn from ``[0, 60 / hr)`` that gives exactly ``10 * hr / 60``
onsets whenever that number is an integer. Partial beats at the edges still
contribute their visible parts.

Classes differ by rule so a classifier has something to learn:

======  ==========================================================
NORM    reference morphology, QRS in the lower part of its range
CD      widened QRS (upper part of the QRS range)
STTC    flattened T wave
MI      ST elevation and a deep Q dip at QRS onset
HYP     tall QRS spike
======  ==========================================================
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import ClassLabel
from .errors import ConfigInvalid
from .signal_io import (
    DURATION_S, LEAD_NAMES, N_LEADS, N_SAMPLES, SAMPLING_RATE_HZ, EcgMatrix, RecordMeta,
    RecordStore, minmax_leads,
)

log = logging.getLogger(__name__)

P_DURATION_S = 0.08
T_DURATION_S = 0.16
# lead projections of the single cardiac source; opposite polarity in V1/V2
LEAD_GAINS = np.array([0.8, 1.0, -0.6, -0.3, 0.5, 0.9, 1.0, 0.7])
QRS_SPLIT_MS = 100.0


@dataclass(frozen=True)
class ToySpec:
    n_records: int = 2000
    hr_range: tuple = (50.0, 120.0)
    qrs_range: tuple = (70.0, 120.0)
    pr_range: tuple = (120.0, 220.0)
    qt_range: tuple = (300.0, 450.0)
    noise: float = 0.02
    seed: int = 0
    class_weights: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    labeled: bool = True
    id_prefix: str = "toy"

    def __post_init__(self):
        if self.n_records < 1:
            raise ConfigInvalid("n_records must be positive")
        for name in ("hr_range", "qrs_range", "pr_range", "qt_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigInvalid(f"{name} must be a positive (low, high) range")
        if self.noise < 0:
            raise ConfigInvalid("noise must be non-negative")
        if len(self.class_weights) != len(ClassLabel) or min(self.class_weights) < 0 \
                or sum(self.class_weights) <= 0:
            raise ConfigInvalid("class_weights needs five non-negative entries")
        if self.pr_range[0] / 1000 < P_DURATION_S:
            raise ConfigInvalid("PR interval shorter than the P wave")
        if self.qt_range[0] / 1000 - T_DURATION_S < self.qrs_range[1] / 1000:
            raise ConfigInvalid("T wave would overlap the QRS complex")


@dataclass(frozen=True)
class BeatParams:
    hr: float
    pr: float
    qt: float
    qrs: float
    label: ClassLabel
    phase_s: float
    amplitude: float = 1.0


def _raised_cosine(t: np.ndarray, start: float, width: float) -> np.ndarray:
    u = (t - start) / width
    inside = (u >= 0) & (u <= 1)
    return np.where(inside, 0.5 - 0.5 * np.cos(2 * np.pi * u), 0.0)


def _triangle(t: np.ndarray, start: float, width: float) -> np.ndarray:
    u = (t - start) / width
    return np.clip(1.0 - np.abs(2.0 * u - 1.0), 0.0, None) * ((u >= 0) & (u <= 1))


def qrs_onsets(hr: float, phase_s: float, duration_s: float = DURATION_S) -> np.ndarray:
    """QRS onset times inside ``[0, duration_s)``."""
    rr = 60.0 / hr
    k = np.arange(int(np.ceil((duration_s - phase_s) / rr)) + 1)
    onsets = phase_s + k * rr
    return onsets[onsets < duration_s]


def beat_waveform(p: BeatParams, fs: int = SAMPLING_RATE_HZ,
                  duration_s: float = DURATION_S) -> np.ndarray:
    """Noise-free single-source waveform (before lead projection)."""
    t = np.arange(int(round(fs * duration_s))) / fs
    rr = 60.0 / p.hr
    pr, qt, qrs = p.pr / 1000, p.qt / 1000, p.qrs / 1000
    r_amp, t_amp, p_amp = 1.0, 0.3, 0.12
    st_level, q_dip = 0.0, 0.0
    if p.label == ClassLabel.STTC:
        t_amp = 0.04
    elif p.label == ClassLabel.MI:
        st_level, q_dip = 0.12, 0.35
    elif p.label == ClassLabel.HYP:
        r_amp = 2.2
    wave = np.zeros_like(t)
    # one beat before and after the window so edge fragments are drawn
    k = np.arange(-1, int(np.ceil((duration_s - p.phase_s) / rr)) + 1)
    for q in p.phase_s + k * rr:
        wave += p_amp * _raised_cosine(t, q - pr, P_DURATION_S)
        wave += r_amp * _triangle(t, q, qrs)
        if q_dip:
            wave -= q_dip * _triangle(t, q, 0.2 * qrs)
        t_start = q + qt - T_DURATION_S
        wave += t_amp * _raised_cosine(t, t_start, T_DURATION_S)
        if st_level:
            wave += st_level * ((t >= q + qrs) & (t < t_start))
    return p.amplitude * wave


def draw_params(spec: ToySpec, rng: np.random.Generator) -> BeatParams:
    weights = np.asarray(spec.class_weights, dtype=float)
    label = ClassLabel(int(rng.choice(len(ClassLabel), p=weights / weights.sum())))
    qlo, qhi = spec.qrs_range
    split = min(max(QRS_SPLIT_MS, qlo), qhi)
    qrs = rng.uniform(split, qhi) if label == ClassLabel.CD else rng.uniform(qlo, split)
    hr = rng.uniform(*spec.hr_range)
    return BeatParams(
        hr=float(hr),
        pr=float(rng.uniform(*spec.pr_range)),
        qt=float(rng.uniform(*spec.qt_range)),
        qrs=float(qrs),
        label=label,
        phase_s=float(rng.uniform(0.0, 60.0 / hr)),
        amplitude=float(rng.uniform(0.8, 1.2)),
    )


def render(p: BeatParams, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Project onto 8 leads, add Gaussian noise, min-max normalize per lead."""
    wave = beat_waveform(p)
    leads = LEAD_GAINS[:, None] * wave[None, :]
    if noise:
        leads = leads + rng.normal(0.0, noise, size=leads.shape)
    return minmax_leads(leads)


@dataclass
class ToyCorpus:
    signals: np.ndarray  # [n, 8, 5000] float32
    meta: list  # RecordMeta per record
    params: list  # BeatParams per record
    noise_floor: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(p.label) for p in self.params])

    def targets(self, parameter: str) -> np.ndarray:
        return np.array([getattr(p, parameter.lower()) for p in self.params])


def noise_floor(params: list, fs: int = SAMPLING_RATE_HZ) -> dict:
    """MAE of an ideal estimator that sees event times only to the sample grid.

    Intervals are rounded to whole samples; heart rate is recovered from the
    rounded beat period. This is the irreducible error of reading the labels
    off the sampled signal.
    """
    def q(v_ms):
        return np.round(np.asarray(v_ms) / 1000 * fs) * 1000 / fs

    hr = np.array([p.hr for p in params])
    rr_ms = 60000.0 / hr
    floor = {"HR": float(np.mean(np.abs(hr - 60000.0 / q(rr_ms))))}
    for name in ("PR", "QT", "QRS"):
        v = np.array([getattr(p, name.lower()) for p in params])
        floor[name] = float(np.mean(np.abs(v - q(v))))
    return floor


def generate_toy(spec: ToySpec) -> ToyCorpus:
    """Draw ``spec.n_records`` records from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    signals = np.empty((spec.n_records, N_LEADS, N_SAMPLES), dtype=np.float32)
    params, meta = [], []
    width = len(str(spec.n_records - 1))
    for i in range(spec.n_records):
        p = draw_params(spec, rng)
        signals[i] = render(p, spec.noise, rng)
        params.append(p)
        meta.append(RecordMeta(
            record_id=f"{spec.id_prefix}{i:0{width}d}",
            class_label=p.label.name if spec.labeled else None,
            hr_bpm=p.hr, pr_ms=p.pr, qt_ms=p.qt, qrs_ms=p.qrs,
        ))
    floor = noise_floor(params)
    log.info("toy corpus of %d records, noise floor %s", spec.n_records, floor)
    return ToyCorpus(signals, meta, params, floor)


def gen_toy(spec: ToySpec, out_dir) -> ToyCorpus:
    """Generate a corpus and write it as an ECG8 store with metadata."""
    corpus = generate_toy(spec)
    out_dir = Path(out_dir)
    with RecordStore(out_dir) as store:
        for values, m in zip(corpus.signals, corpus.meta):
            store.add(EcgMatrix(values, LEAD_NAMES), m)
    spec_dict = asdict(spec)
    (out_dir / "toy_spec.json").write_text(json.dumps(
        {"spec": spec_dict, "noise_floor": corpus.noise_floor}, indent=2, sort_keys=True) + "\n")
    return corpus
