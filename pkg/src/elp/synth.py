"""Deterministic synthetic ECG built from Gaussian P/QRS/T bumps.

The generator is a test oracle: R-peak locations and per-beat classes are
known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ingest import Annotation, Channel, EcgRecord


@dataclass(frozen=True)
class WaveShape:
    """Beat template.  Offsets and widths in seconds, amplitudes in mV."""

    p_amp: float = 0.15
    p_offset: float = -0.17
    p_width: float = 0.022
    qrs_amp: float = 1.0
    qrs_width: float = 0.011
    qrs_biphasic: bool = False
    s_amp: float = 0.3
    s_offset: float = 0.028
    t_amp: float = 0.3
    t_offset: float = 0.26
    t_width: float = 0.045
    symbol: str = "N"


NORMAL = WaveShape()
# ventricular-looking beat: inverted, wider QRS, no P, tall T
INVERTED = WaveShape(p_amp=0.0, qrs_amp=-1.0, qrs_width=0.018, t_amp=0.6, symbol="V")


@dataclass(frozen=True)
class SynthSpec:
    fs: float = 250.0
    duration: float = 60.0
    bpm: float = 75.0
    rr_jitter: float = 0.0
    snr_db: float = float("inf")
    seed: int = 0
    shape: WaveShape = NORMAL
    alt_shape: WaveShape | None = None
    alt_fraction: float = 0.0
    baseline_mv: float = 0.0
    record_id: str = "synth"

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        if not 30 <= self.bpm <= 240:
            raise ValueError("bpm must lie in [30, 240]")
        if self.duration < 2:
            raise ValueError("duration must be at least 2 s")
        if np.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")


@dataclass
class SynthResult:
    record: EcgRecord
    peaks: np.ndarray
    beat_class: np.ndarray = field(repr=False)
    clean: np.ndarray = field(repr=False)


def _bump(t, centre, amp, width):
    return amp * np.exp(-0.5 * ((t - centre) / width) ** 2)


def render_beat(t: np.ndarray, r_time: float, shape: WaveShape) -> np.ndarray:
    y = _bump(t, r_time, shape.qrs_amp, shape.qrs_width)
    if shape.qrs_biphasic:
        y -= _bump(t, r_time + shape.s_offset, shape.s_amp * np.sign(shape.qrs_amp or 1),
                   shape.qrs_width)
    if shape.p_amp:
        y += _bump(t, r_time + shape.p_offset, shape.p_amp, shape.p_width)
    if shape.t_amp:
        y += _bump(t, r_time + shape.t_offset, shape.t_amp, shape.t_width)
    return y


def generate(spec: SynthSpec) -> SynthResult:
    """Render a record; returns it with ground-truth R indices and beat classes.

    The first beat sits half an RR interval in; R centres fall on sample
    instants so each peak is an exact local maximum of the clean signal.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.fs))
    rr = 60.0 / spec.bpm
    t_sec = np.arange(n) / spec.fs

    peaks = []
    t = rr / 2.0
    while True:
        idx = int(round(t * spec.fs))
        if idx >= n:
            break
        peaks.append(idx)
        step = rr * (1.0 + spec.rr_jitter * rng.standard_normal()) if spec.rr_jitter else rr
        t += max(step, 0.25)
    peaks = np.asarray(peaks, dtype=np.int64)

    if spec.alt_shape is not None and spec.alt_fraction > 0:
        beat_class = (rng.random(peaks.size) < spec.alt_fraction).astype(np.int64)
    else:
        beat_class = np.zeros(peaks.size, dtype=np.int64)

    clean = np.full(n, spec.baseline_mv)
    half = int(np.ceil(0.6 * spec.fs))
    for idx, cls in zip(peaks, beat_class):
        shape = spec.alt_shape if cls else spec.shape
        lo, hi = max(0, idx - half), min(n, idx + half + 1)
        clean[lo:hi] += render_beat(t_sec[lo:hi], idx / spec.fs, shape)

    sig = clean
    if np.isfinite(spec.snr_db):
        power = np.mean((clean - spec.baseline_mv) ** 2)
        sigma = np.sqrt(power / 10 ** (spec.snr_db / 10.0))
        sig = clean + sigma * rng.standard_normal(n)

    anns = tuple(
        Annotation(int(p), (spec.alt_shape if c else spec.shape).symbol)
        for p, c in zip(peaks, beat_class)
    )
    rec = EcgRecord(spec.record_id, (Channel("synth", gain=200.0),), sig[None, :], spec.fs, anns)
    return SynthResult(rec, peaks, beat_class, clean)


def two_class_dataset(n_records: int = 400, seed: int = 0, duration: float = 8.0,
                      fs: float = 250.0, snr_db: float = 25.0) -> list[tuple[EcgRecord, int]]:
    """Balanced records: class 0 upright QRS, class 1 inverted QRS with a taller T."""
    out = []
    rng = np.random.default_rng(seed)
    for i in range(n_records):
        label = i % 2
        shape = NORMAL if label == 0 else replace(NORMAL, qrs_amp=-1.0, t_amp=0.6, symbol="V")
        spec = SynthSpec(
            fs=fs, duration=duration, bpm=float(rng.uniform(60, 90)), rr_jitter=0.05,
            snr_db=snr_db, seed=int(rng.integers(2**31)), shape=shape,
            record_id=f"s{i:04d}",
        )
        out.append((generate(spec).record, label))
    return out
