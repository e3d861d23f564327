import numpy as np
import pytest

from elp import dsp
from elp.segment import (WaveConfig, canonicalize, extract_waves, ms_to_samples,
                         nearest_annotation_labels, segment_beats)


def test_bandpass_passes_band_and_rejects_outside():
    fs = 360.0
    t = np.arange(int(10 * fs)) / fs
    inside = np.sin(2 * np.pi * 10 * t)
    outside = np.sin(2 * np.pi * 0.5 * t) + np.sin(2 * np.pi * 60 * t)
    y_in = dsp.bandpass(inside, fs)[500:-500]
    y_out = dsp.bandpass(outside, fs)[500:-500]
    assert np.std(y_in) / np.std(inside[500:-500]) > 0.9
    assert np.std(y_out) < 0.1


def test_filter_rejects_corner_above_nyquist():
    with pytest.raises(ValueError, match="Nyquist"):
        dsp.bandpass(np.zeros(100), 20.0, 5.0, 15.0)


def test_resample_linear_endpoints_and_length():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = dsp.resample_linear(x, 4.0, 7.0)
    assert y.size == 7 and y[0] == 0.0 and y[-1] == 3.0
    assert np.allclose(np.diff(y), 0.5)


def test_znorm_properties_and_flat_input():
    rng = np.random.default_rng(0)
    y = dsp.znorm(rng.normal(3, 2, 500))
    assert abs(y.mean()) < 1e-12 and abs(y.std() - 1) < 1e-12
    assert not dsp.znorm(np.full(10, 4.2)).any()


def test_ms_to_samples_rounds_down():
    assert ms_to_samples(250, 250) == 62
    assert ms_to_samples(400, 250) == 100
    assert ms_to_samples(1000, 360) == 360


def test_segment_beats_window_and_edge_drop():
    beats, dropped = segment_beats(10000, [1000], 250.0, 250, 400)
    assert (beats[0].start, beats[0].end) == (938, 1100)
    beats, dropped = segment_beats(10000, [5, 1000], 250.0, 250, 400)
    assert dropped == 1 and [b.r_index for b in beats] == [1000]


def test_canonicalize_length_and_scale_invariance():
    raw = np.sin(np.linspace(0, 3, 37))
    c = canonicalize(raw, 64)
    assert c.shape == (64,)
    assert np.allclose(canonicalize(5 * raw + 2, 64), c)
    with pytest.raises(ValueError):
        canonicalize(np.array([1.0]))


def test_wave_windows_at_1000_samples():
    fs = 250.0
    x = np.random.default_rng(1).normal(size=3000)
    peaks = np.array([750, 1000, 1250])      # RR 1 s
    beats = extract_waves(x, peaks, fs)
    kinds = [(w.kind, w.start, w.end) for w in beats[1]]
    assert kinds == [("P", 950, 985), ("QRS", 985, 1015), ("T", 1015, 1112)]
    assert all(not w.missing for w in beats[1])


def test_short_or_flat_waves_are_missing():
    fs = 250.0
    x = np.zeros(2000)
    x[400:600] = np.sin(np.linspace(0, 9, 200))
    beats = extract_waves(x, np.array([3, 500, 1500]), fs)
    assert beats[0][0].missing            # P window clipped to nothing
    assert beats[2][1].missing            # flat QRS around 1500
    assert not beats[1][1].missing


def test_beat_mode_one_token_per_beat():
    x = np.random.default_rng(2).normal(size=3000)
    beats = extract_waves(x, np.array([500, 1000, 1500]), 250.0, WaveConfig(mode="beat"))
    assert [len(b) for b in beats] == [1, 1, 1]


def test_nearest_annotation_labels():
    labels = nearest_annotation_labels([100, 500, 900], [110, 530, 2000], [0, 1, 2], 250.0)
    assert labels == [0, 1, None]
