"""Beat windows and P/QRS/T wave extraction around detected R-peaks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsp

WAVE_KINDS = ("P", "QRS", "T")
BEAT = "BEAT"


def ms_to_samples(ms: float, fs: float) -> int:
    """Duration to whole samples, rounding down (62.5 -> 62)."""
    return int(math.floor(ms * fs / 1000.0 + 1e-9))


@dataclass(frozen=True)
class WaveConfig:
    qrs_half_ms: float = 60.0
    p_max_ms: float = 200.0
    p_rr_fraction: float = 0.35
    t_max_ms: float = 450.0
    t_rr_fraction: float = 0.6
    rr_cap_s: float = 1.2
    min_wave_ms: float = 20.0
    length: int = 64
    eps: float = dsp.ZNORM_EPS
    mode: str = "waves"  # "waves": P/QRS/T tokens; "beat": one token per beat
    beat_pre_ms: float = 250.0
    beat_post_ms: float = 400.0


@dataclass(frozen=True)
class Beat:
    r_index: int
    start: int
    end: int  # exclusive
    label: int | None = None

    def __post_init__(self):
        if not self.start <= self.r_index <= self.end:
            raise ValueError("R index outside its beat window")


@dataclass
class WaveSegment:
    kind: str
    beat: int
    start: int
    end: int  # exclusive
    raw: np.ndarray = field(repr=False)
    canonical: np.ndarray | None = field(default=None, repr=False)

    @property
    def missing(self) -> bool:
        return self.canonical is None


def segment_beats(n_samples: int, peaks: Sequence[int], fs: float,
                  pre_ms: float = 250.0, post_ms: float = 400.0,
                  labels: Sequence[int | None] | None = None) -> tuple[list[Beat], int]:
    """Fixed windows around each R-peak, clipped to the record.

    A beat is dropped when clipping removes more than half of either its
    pre-R or its post-R part.  Returns the beats and the number dropped.
    """
    pre, post = ms_to_samples(pre_ms, fs), ms_to_samples(post_ms, fs)
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size > 1 and np.any(np.diff(peaks) <= 0):
        raise ValueError("peaks must be ascending")
    beats, dropped = [], 0
    for k, r in enumerate(peaks):
        start, end = max(0, r - pre), min(n_samples, r + post)
        lost_pre, lost_post = max(0, pre - r), max(0, r + post - n_samples)
        if (pre and lost_pre > pre / 2) or (post and lost_post > post / 2) or r >= n_samples:
            dropped += 1
            continue
        beats.append(Beat(int(r), int(start), int(end), None if labels is None else labels[k]))
    return beats, dropped


def canonicalize(raw: np.ndarray, length: int = 64, eps: float = dsp.ZNORM_EPS) -> np.ndarray:
    """Resample to ``length`` points and z-normalise; flat input gives the zero vector."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size < 2:
        raise ValueError("need at least 2 samples to canonicalise a wave")
    return dsp.znorm(dsp.resample_to_length(raw, length), eps)


def is_degenerate(canonical: np.ndarray) -> bool:
    return not np.any(canonical)


def local_rr(peaks: np.ndarray, k: int, fs: float, cap_s: float) -> float:
    """RR (seconds) for beat ``k``: min of neighbouring intervals, capped."""
    cands = [cap_s]
    if k > 0:
        cands.append((peaks[k] - peaks[k - 1]) / fs)
    if k + 1 < peaks.size:
        cands.append((peaks[k + 1] - peaks[k]) / fs)
    return min(cands)


def wave_windows(r: int, rr_s: float, fs: float, cfg: WaveConfig) -> dict[str, tuple[int, int]]:
    half = ms_to_samples(cfg.qrs_half_ms, fs)
    p_len = ms_to_samples(min(cfg.p_max_ms, cfg.p_rr_fraction * rr_s * 1000.0), fs)
    t_len = ms_to_samples(min(cfg.t_max_ms, cfg.t_rr_fraction * rr_s * 1000.0), fs)
    return {
        "P": (r - p_len, r - half),
        "QRS": (r - half, r + half),
        "T": (r + half, r + t_len),
    }


def extract_waves(signal: np.ndarray, peaks: Sequence[int], fs: float,
                  config: WaveConfig = WaveConfig()) -> list[list[WaveSegment]]:
    """Per-beat wave segments in temporal order.

    Windows scale with the local RR interval.  A wave shorter than
    ``min_wave_ms`` after clipping, or flat, comes back with no canonical
    form (MISSING).
    """
    x = np.asarray(signal, dtype=np.float64)
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size < 2:
        raise ValueError("wave extraction needs at least 2 R-peaks")
    n = x.size
    min_len = max(ms_to_samples(config.min_wave_ms, fs), 2)
    out = []
    for k, r in enumerate(peaks):
        if config.mode == "beat":
            windows = {BEAT: (r - ms_to_samples(config.beat_pre_ms, fs),
                              r + ms_to_samples(config.beat_post_ms, fs))}
        else:
            windows = wave_windows(int(r), local_rr(peaks, k, fs, config.rr_cap_s), fs, config)
        waves = []
        for kind, (a, b) in windows.items():
            a, b = max(0, a), min(n, b)
            raw = x[a:b] if b > a else np.zeros(0)
            canon = None
            if raw.size >= min_len:
                canon = canonicalize(raw, config.length, config.eps)
                if is_degenerate(canon):
                    canon = None
            waves.append(WaveSegment(kind, k, int(a), int(max(a, b)), raw, canon))
        out.append(waves)
    return out


def nearest_annotation_labels(peaks: Sequence[int], ann_samples: Sequence[int],
                              ann_labels: Sequence[int], fs: float,
                              tolerance_ms: float = 150.0) -> list[int | None]:
    """Label each detected peak with the nearest annotation within tolerance."""
    ann = np.asarray(ann_samples, dtype=np.int64)
    tol = tolerance_ms * fs / 1000.0
    out: list[int | None] = []
    for r in np.asarray(peaks, dtype=np.int64):
        if ann.size == 0:
            out.append(None)
            continue
        j = int(np.searchsorted(ann, r))
        best = None
        for c in (j - 1, j):
            if 0 <= c < ann.size and abs(int(ann[c]) - int(r)) <= tol:
                if best is None or abs(int(ann[c]) - r) < abs(int(ann[best]) - r):
                    best = c
        out.append(None if best is None else int(ann_labels[best]))
    return out


def waves_to_csv_rows(record_id: str, beats: list[list[WaveSegment]]) -> list[tuple]:
    return [(record_id, w.beat, w.kind, w.start, w.end) for waves in beats for w in waves]
