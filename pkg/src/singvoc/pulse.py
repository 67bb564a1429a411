"""Baseline vocoder: pulse-train or white-noise excitation through the
envelope filter.

Voiced frames excite the filter with near-Dirac pulses placed by a continuous
phase accumulator; unvoiced frames use white Gaussian noise. Excitation
levels are tied to the envelope calibration: a pulse train with amplitude
period/2 presents unit-amplitude harmonics to the filter, and noise of
variance (sum w)^2 / (4 sum w^2) presents the power density the analysis
window saw, so copy-synthesis reproduces the original levels.
"""
from __future__ import annotations

import numpy as np

from .dsp import (
    F0Track,
    SampleBuffer,
    frame_count,
    frame_signal,
    make_window,
    pulse_positions,
)
from .envelope import (
    DEFAULT_ALPHA,
    MGC_ORDER,
    MgcCoefficients,
    mgc_analyze,
    mglsa_filter,
)
from .formats import ParameterStream


def envelope_window_length(sample_rate: int, f0_median: float = 0.0) -> int:
    """Analysis window: 25 ms, stretched to 4.5 pitch periods when f0 is low.

    Harmonics must be resolved for the envelope to pin their amplitudes;
    below 180 Hz a 25 ms window cannot do that.
    """
    base = int(round(0.025 * sample_rate))
    if f0_median > 0:
        return max(base, int(round(4.5 * sample_rate / f0_median)))
    return base


def noise_sigma(window_length: int) -> float:
    """Unvoiced excitation level matching the analysis calibration.

    White noise of this standard deviation reads, through the windowed
    analysis, the same level the original noise did.
    """
    w = make_window("hann", window_length)
    return float(w.sum() / (2.0 * np.sqrt(np.sum(w * w))))


def _check_track(buffer: SampleBuffer, f0track: F0Track) -> None:
    expected = frame_count(len(buffer), buffer.sample_rate, f0track.frame_period)
    if len(f0track) != expected:
        raise ValueError(
            f"f0 track holds {len(f0track)} frames, framing the buffer "
            f"at period {f0track.frame_period:g} yields {expected}"
        )


def analyze(
    buffer: SampleBuffer,
    f0track: F0Track,
    order: int = MGC_ORDER,
    alpha: float = DEFAULT_ALPHA,
    window_length: int | None = None,
) -> ParameterStream:
    """Per frame: [f0, c_0..c_order]."""
    _check_track(buffer, f0track)
    if window_length is None:
        voiced = f0track.values[f0track.values > 0]
        f0_median = float(np.median(voiced)) if voiced.size else 0.0
        window_length = envelope_window_length(buffer.sample_rate, f0_median)
    frames = frame_signal(buffer, f0track.frame_period, window_length)
    rows = np.empty((len(frames), order + 2))
    for i, frame in enumerate(frames):
        f0 = f0track.values[i]
        c = mgc_analyze(
            frame,
            order=order,
            alpha=alpha,
            sample_rate=buffer.sample_rate,
            min_freq=0.9 * f0,
        )
        rows[i, 0] = f0
        rows[i, 1:] = c.values
    return ParameterStream(
        vocoder_id="pulse", frame_period=f0track.frame_period, frames=rows
    )


def pulse_excitation(
    f0_per_sample: np.ndarray, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    """Pulse train on voiced samples, calibrated noise elsewhere."""
    n = f0_per_sample.size
    exc = np.zeros(n)
    voiced = f0_per_sample > 0
    if voiced.any():
        for pos in pulse_positions(f0_per_sample, sample_rate):
            idx = int(round(pos))
            if 0 <= idx < n:
                exc[idx] = 0.5 * sample_rate / f0_per_sample[idx]
    if not voiced.all():
        sigma = noise_sigma(analysis_window_for(f0_per_sample, sample_rate))
        exc[~voiced] = sigma * rng.standard_normal(int(np.sum(~voiced)))
    return exc


def analysis_window_for(f0_per_sample: np.ndarray, sample_rate: int) -> int:
    """The window length analyze() would have picked for this contour."""
    voiced = f0_per_sample[f0_per_sample > 0]
    f0_median = float(np.median(voiced)) if voiced.size else 0.0
    return envelope_window_length(sample_rate, f0_median)


def synthesize(
    params: ParameterStream,
    seed: int = 0,
    sample_rate: int = 16000,
    alpha: float = DEFAULT_ALPHA,
) -> SampleBuffer:
    """Excite and filter; output covers (rows-1) frame periods."""
    if params.vocoder_id != "pulse":
        raise ValueError(
            f"expected a pulse parameter stream, got {params.vocoder_id!r}"
        )
    hop = int(round(params.frame_period * sample_rate))
    n_samples = (len(params) - 1) * hop
    track = F0Track(values=params.frames[:, 0], frame_period=params.frame_period)
    f0_ps = track.per_sample(sample_rate, n_samples)
    rng = np.random.default_rng(seed)
    exc = pulse_excitation(f0_ps, sample_rate, rng)
    stream = [
        MgcCoefficients(values=row[1:], alpha=alpha, sample_rate=sample_rate)
        for row in params.frames
    ]
    return mglsa_filter(
        SampleBuffer(samples=exc, sample_rate=sample_rate),
        stream,
        params.frame_period,
    )
