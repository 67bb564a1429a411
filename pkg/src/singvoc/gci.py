"""Glottal closure instant detection.

Two-stage scheme: a mean-based signal (sliding weighted mean, window span
tied to the average pitch period) locates one candidate interval per period,
then the largest linear-prediction residual peak inside each interval fixes
the instant. Ground-truth F0 steers both the window span and the voiced
regions searched.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .dsp import (
    F0Track,
    GciSequence,
    SampleBuffer,
    autocorrelate,
    levinson,
    make_window,
    voiced_runs,
)


def lp_residual(buffer: SampleBuffer, order: int | None = None) -> np.ndarray:
    """Frame-wise LP inverse filtering of the whole signal (Hann OLA)."""
    x = buffer.samples
    fs = buffer.sample_rate
    if order is None:
        order = 2 + fs // 1000
    flen = int(0.032 * fs)
    hop = flen // 2
    if x.size <= order + 1:
        return np.zeros_like(x)
    win = make_window("hann", flen)
    residual = np.zeros(x.size)
    weight = np.zeros(x.size)
    for start in range(0, max(1, x.size - order), hop):
        seg = x[start : start + flen]
        if seg.size < order + 2:
            break
        w = win[: seg.size]
        r = autocorrelate(seg * w, order)
        if r[0] <= 0:
            continue
        filt = levinson(r, order)
        # prepend history so the inverse filter has no warmup transient
        # (the transient otherwise dwarfs a weak residual at frame starts)
        pre = min(order, start)
        res = lfilter(filt.polynomial, [1.0], x[start - pre : start + seg.size])[pre:]
        residual[start : start + seg.size] += res * w
        weight[start : start + seg.size] += w
    np.divide(residual, weight, out=residual, where=weight > 1e-8)
    return residual


def mean_based_signal(x: np.ndarray, span: int) -> np.ndarray:
    """Sliding Blackman-weighted mean over ±span samples."""
    width = 2 * span + 1
    w = make_window("blackman", width)
    w = w / w.sum()
    return np.convolve(x, w, mode="same")


def detect_gci(buffer: SampleBuffer, f0: F0Track) -> GciSequence:
    """One GCI per pitch period inside voiced regions of the f0 track."""
    x = buffer.samples
    fs = buffer.sample_rate
    if x.size == 0 or not len(f0):
        return GciSequence(times=np.array([]))
    voiced = f0.values[f0.values > 0]
    if voiced.size == 0:
        return GciSequence(times=np.array([]))

    mean_period = fs / float(np.mean(voiced))
    span = max(2, int(round(0.875 * mean_period)))  # window = 1.75 mean periods
    mbs = mean_based_signal(x, span)
    residual = lp_residual(buffer)
    f0_per_sample = f0.per_sample(fs, x.size)

    times = []
    for start, stop in voiced_runs(f0.values):
        lo = max(0, int(round((start - 0.5) * f0.frame_period * fs)))
        hi = min(x.size, int(round((stop - 0.5) * f0.frame_period * fs)) + 1)
        if hi - lo < 4:
            continue
        times.extend(_region_gcis(mbs, residual, f0_per_sample, lo, hi, fs))
    times = np.asarray(sorted(times), dtype=np.float64)
    if times.size > 1:
        keep = np.concatenate(([True], np.diff(times) > 1e-9))
        times = times[keep]
    return GciSequence(times=times)


def _region_gcis(mbs, residual, f0_per_sample, lo, hi, fs):
    """Minima of the mean-based signal locate intervals; the strongest
    residual peak inside each interval is the GCI."""
    seg = mbs[lo:hi]
    minima = []
    for n in range(1, seg.size - 1):
        if seg[n] <= seg[n - 1] and seg[n] < seg[n + 1]:
            minima.append(n + lo)
    # closure spikes share a polarity; vote on it so formant ringing on the
    # opposite side of zero cannot win inside a search window
    region = residual[lo:hi]
    polarity = 1.0 if np.sum(region**3) >= 0 else -1.0
    out = []
    last = -np.inf
    for m in minima:
        f0_here = f0_per_sample[min(m, f0_per_sample.size - 1)]
        if f0_here <= 0:
            continue
        period = fs / f0_here
        if m - last < 0.5 * period:
            continue
        # the minimum trails the closure slightly, so search around it
        a = max(lo, int(round(m - 0.3 * period)))
        b = min(hi, int(round(m + 0.3 * period)))
        if b - a < 2:
            continue
        window = polarity * residual[a:b]
        peak = a + int(np.argmax(window))
        if window.max() <= 0:
            peak = a + int(np.argmax(np.abs(residual[a:b])))
        if out and peak / fs - out[-1] < 0.4 * period / fs:
            continue
        out.append(peak / fs)
        last = m
    return out
