"""Synthetic signal builders shared across the test suite."""
import numpy as np
from scipy.signal import lfilter

from singvoc.dsp import F0Track, SampleBuffer, frame_count, pulse_positions
from singvoc.lfmodel import lf_pulse_train

FS = 16000
FRAME_PERIOD = 0.005

# rough /a/-like formants: (center Hz, bandwidth Hz)
FORMANTS = ((700.0, 80.0), (1220.0, 90.0), (2600.0, 120.0))


def formant_polynomial(formants=FORMANTS, sample_rate=FS):
    a = np.array([1.0])
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * freq / sample_rate
        a = np.convolve(a, np.array([1.0, -2.0 * r * np.cos(theta), r * r]))
    return a


def vowel(f0, duration, sample_rate=FS, formants=FORMANTS, level=0.3):
    """LF excitation through an all-pole formant filter.

    Returns (SampleBuffer, true_gci_times).
    """
    exc, gcis = lf_pulse_train(f0, duration, sample_rate)
    x = lfilter([1.0], formant_polynomial(formants, sample_rate), exc)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = level * x / peak
    return SampleBuffer(samples=x, sample_rate=sample_rate), gcis


def flat_vowel(f0, duration, sample_rate=FS, formants=FORMANTS, level=0.3):
    """Dirac-train excitation through the formant filter.

    The source is spectrally flat, so spectral peaks sit at the formant
    frequencies; the LF source in vowel() tilts them downward.
    """
    n = int(round(duration * sample_rate))
    exc = np.zeros(n)
    idx = np.rint(pulse_positions(np.full(n, float(f0)), sample_rate)).astype(int)
    exc[idx[idx < n]] = 1.0
    x = lfilter([1.0], formant_polynomial(formants, sample_rate), exc)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = level * x / peak
    return SampleBuffer(samples=x, sample_rate=sample_rate)


def const_track(f0, duration, frame_period=FRAME_PERIOD, sample_rate=FS):
    n = frame_count(int(round(duration * sample_rate)), sample_rate, frame_period)
    return F0Track(values=np.full(n, float(f0)), frame_period=frame_period)


def tone(freq, amp, duration, sample_rate=FS, phase=0.0):
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return amp * np.sin(2.0 * np.pi * freq * t + phase)
