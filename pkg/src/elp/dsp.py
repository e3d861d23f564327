"""Filtering, resampling and normalisation shared by the detector and segmenter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

ZNORM_EPS = 1e-8


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "bandpass"  # lowpass | highpass | bandpass
    low: float | None = 5.0
    high: float | None = 15.0
    order: int = 2

    def corners(self):
        if self.kind == "bandpass":
            return [self.low, self.high]
        if self.kind == "lowpass":
            return self.high
        if self.kind == "highpass":
            return self.low
        raise ValueError(f"unknown filter kind {self.kind!r}")

    def validate(self, fs: float) -> None:
        nyq = fs / 2.0
        c = np.atleast_1d(self.corners()).astype(float)
        if np.any(c <= 0):
            raise ValueError("corner frequencies must be positive")
        if np.any(c >= nyq):
            raise ValueError(f"corner frequency {c.max():g} Hz at or above Nyquist ({nyq:g} Hz)")
        if self.kind == "bandpass" and not c[0] < c[1]:
            raise ValueError("bandpass needs low < high")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")


def design_sos(fs: float, spec: FilterSpec) -> np.ndarray:
    spec.validate(fs)
    return sps.butter(spec.order, spec.corners(), btype=spec.kind, fs=fs, output="sos")


def apply_filter(x: np.ndarray, fs: float, spec: FilterSpec) -> np.ndarray:
    """Zero-phase Butterworth filtering (forward-backward SOS cascade)."""
    x = np.asarray(x, dtype=np.float64)
    sos = design_sos(fs, spec)
    if x.size == 0:
        return x.copy()
    padlen = min(3 * (2 * len(sos) + 1), x.size - 1)
    return sps.sosfiltfilt(sos, x, padlen=max(padlen, 0))


def bandpass(x: np.ndarray, fs: float, low: float = 5.0, high: float = 15.0,
             order: int = 2) -> np.ndarray:
    return apply_filter(x, fs, FilterSpec("bandpass", low, high, order))


def resample_linear(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Linear-interpolation resampling; output length ``round(n * fs_out / fs_in)``.

    The first and last samples map onto the first and last output samples.
    """
    if not (fs_in > 0 and fs_out > 0):
        raise ValueError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    n_out = int(round(x.size * fs_out / fs_in))
    return resample_to_length(x, n_out)


def resample_to_length(x: np.ndarray, n_out: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if n_out <= 0:
        return np.zeros(0)
    if x.size == 1:
        return np.full(n_out, x[0])
    if n_out == 1:
        return x[:1].copy()
    pos = np.linspace(0.0, x.size - 1, n_out)
    return np.interp(pos, np.arange(x.size), x)


def znorm(x: np.ndarray, eps: float = ZNORM_EPS) -> np.ndarray:
    """Zero mean, unit (population) standard deviation; all zeros if std < eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    mu = x.mean()
    sd = x.std()
    if sd < eps:
        return np.zeros_like(x)
    y = (x - mu) / sd
    # recentre once more; removes the rounding residue of the first pass
    return y - y.mean()
