"""R-peak detection (Pan-Tompkins) and detector scoring."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import find_peaks

from . import dsp


@dataclass(frozen=True)
class PanTompkinsConfig:
    band: tuple[float, float] = (5.0, 15.0)
    filter_order: int = 2
    integration_ms: float = 150.0
    refractory_ms: float = 200.0
    t_wave_ms: float = 360.0
    searchback_factor: float = 1.66
    learning_s: float = 2.0
    refine_ms: float = 40.0
    rr_history: int = 8


@dataclass(frozen=True)
class RPeakList:
    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("peak indices must be strictly ascending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))

    def __len__(self):
        return self.indices.size

    @classmethod
    def empty(cls) -> "RPeakList":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))


def _derivative(x: np.ndarray, fs: float) -> np.ndarray:
    """Five-point centred derivative, (-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]) * fs / 8."""
    p = np.pad(x, 2, mode="edge")
    return (-p[:-4] - 2 * p[1:-3] + 2 * p[3:-1] + p[4:]) * (fs / 8.0)


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    width = max(int(width), 1)
    return np.convolve(x, np.ones(width) / width, mode="same")


def pan_tompkins(signal: np.ndarray, fs: float,
                 config: PanTompkinsConfig = PanTompkinsConfig()) -> RPeakList:
    """Detect R-peaks in a single-lead ECG.

    Bandpass, derivative, squaring and moving-window integration, followed by
    the dual adaptive threshold with refractory blanking, slope-based T-wave
    rejection and RR-driven search-back.  Each accepted peak is moved to the
    raw-signal maximum within ``refine_ms``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if fs < 100:
        raise ValueError(f"fs must be at least 100 Hz, got {fs}")
    if x.size < 2 * fs:
        raise ValueError("signal shorter than 2 s")
    if np.ptp(x) == 0:
        return RPeakList.empty()

    filt = dsp.bandpass(x, fs, *config.band, order=config.filter_order)
    deriv = _derivative(filt, fs)
    mwi = _moving_average(deriv**2, round(config.integration_ms * fs / 1000.0))

    refractory = int(round(config.refractory_ms * fs / 1000.0))
    t_window = int(round(config.t_wave_ms * fs / 1000.0))
    half_int = max(int(round(config.integration_ms * fs / 2000.0)), 1)

    # zero guard samples let a QRS cut off by either record edge still register
    cands, _ = find_peaks(np.pad(mwi, 1), distance=max(refractory, 1))
    cands = cands - 1
    if cands.size == 0:
        return RPeakList.empty()

    learn = mwi[: int(config.learning_s * fs)]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()

    def slope_at(i):
        lo, hi = max(0, i - half_int), min(deriv.size, i + half_int + 1)
        return np.abs(deriv[lo:hi]).max()

    qrs: list[int] = []
    scores: list[float] = []
    last_slope = None
    rr = deque(maxlen=config.rr_history)
    pool: list[int] = []  # sub-threshold candidates since the last QRS

    def accept(i, searchback=False):
        nonlocal spki, last_slope
        v = mwi[i]
        if searchback:
            spki = 0.25 * v + 0.75 * spki
        else:
            spki = 0.125 * v + 0.875 * spki
        if qrs:
            rr.append(i - qrs[-1])
        qrs.append(i)
        scores.append(v)
        last_slope = slope_at(i)
        pool.clear()

    for i in cands:
        thr1 = npki + 0.25 * (spki - npki)
        thr2 = 0.5 * thr1
        if qrs and rr and i - qrs[-1] > config.searchback_factor * np.mean(rr):
            eligible = [j for j in pool if j - qrs[-1] >= refractory and mwi[j] > thr2]
            if eligible:
                best = max(eligible, key=lambda j: mwi[j])
                accept(best, searchback=True)
                thr1 = npki + 0.25 * (spki - npki)
        if qrs and i - qrs[-1] < refractory:
            continue
        v = mwi[i]
        if v > thr1:
            if qrs and i - qrs[-1] < t_window and slope_at(i) < 0.5 * last_slope:
                npki = 0.125 * v + 0.875 * npki
                continue
            accept(i)
        else:
            npki = 0.125 * v + 0.875 * npki
            pool.append(i)

    if not qrs:
        return RPeakList.empty()

    # refine onto the raw signal
    w = int(round(config.refine_ms * fs / 1000.0))
    refined = []
    for i in qrs:
        lo, hi = max(0, i - w), min(x.size, i + w + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    refined = np.asarray(refined, dtype=np.int64)
    scores = np.asarray(scores)

    keep_idx: list[int] = []
    for k in np.argsort(refined, kind="stable"):
        if keep_idx and refined[k] - refined[keep_idx[-1]] < refractory:
            if scores[k] > scores[keep_idx[-1]]:
                keep_idx[-1] = k
            continue
        keep_idx.append(k)
    return RPeakList(refined[keep_idx], scores[keep_idx])


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    pairs: list


def match_peaks(detected, reference, tolerance_ms: float, fs: float) -> MatchResult:
    """Greedy one-to-one matching, closest pairs first, within ``tolerance_ms``."""
    det = np.asarray(detected, dtype=np.int64)
    ref = np.asarray(reference, dtype=np.int64)
    tol = tolerance_ms * fs / 1000.0
    candidates = []
    for i, d in enumerate(det):
        lo, hi = np.searchsorted(ref, [d - tol, d + tol], side="left")
        hi = np.searchsorted(ref, d + tol, side="right")
        for j in range(lo, hi):
            candidates.append((abs(int(d) - int(ref[j])), i, j))
    candidates.sort()
    used_d, used_r, pairs = set(), set(), []
    for dist, i, j in candidates:
        if i in used_d or j in used_r:
            continue
        used_d.add(i)
        used_r.add(j)
        pairs.append((i, j))
    tp = len(pairs)
    return MatchResult(tp, det.size - tp, ref.size - tp, sorted(pairs))


def detector_scores(result: MatchResult) -> tuple[float, float]:
    """Sensitivity and positive predictive value (fractions, NaN when undefined)."""
    sen = result.tp / (result.tp + result.fn) if result.tp + result.fn else float("nan")
    ppv = result.tp / (result.tp + result.fp) if result.tp + result.fp else float("nan")
    return sen, ppv
