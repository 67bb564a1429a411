"""Shared DSP foundation: sample buffers, framing, linear prediction, LSF
conversion, Hilbert envelopes and spectrum helpers.

All functions are pure; all types are immutable after construction, so
everything here is safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window, hilbert

F0_MIN = 30.0
F0_MAX = 2000.0

WINDOW_KINDS = ("hann", "hamming", "blackman", "rect")


def make_window(kind: str, length: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(length)
    if kind not in WINDOW_KINDS:
        raise ValueError(f"unknown window kind {kind!r}, expected one of {WINDOW_KINDS}")
    return get_window(kind, length, fftbins=False)


@dataclass(frozen=True)
class SampleBuffer:
    """Mono audio: float samples (nominal range [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional (mono)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Frame:
    """One analysis frame: (possibly windowed) samples centered at center_time.

    window_sum records the sum of the applied window so spectral magnitudes
    can be calibrated back to tone amplitudes; 0 means "unknown/rectangular".
    """

    samples: np.ndarray
    center_time: float
    index: int
    window_sum: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))


@dataclass(frozen=True)
class F0Track:
    """Frame-rate fundamental frequency contour in Hz; 0 marks unvoiced frames."""

    values: np.ndarray
    frame_period: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if self.frame_period <= 0:
            raise ValueError(f"frame_period must be positive, got {self.frame_period}")
        if values.size:
            if np.any(values < 0):
                raise ValueError("f0 values must be non-negative (0 = unvoiced)")
            voiced = values[values > 0]
            if voiced.size and (voiced.min() < F0_MIN or voiced.max() > F0_MAX):
                raise ValueError(
                    f"voiced f0 values must lie in [{F0_MIN:g}, {F0_MAX:g}] Hz"
                )

    def __len__(self) -> int:
        return self.values.size

    @property
    def voiced_mask(self) -> np.ndarray:
        return self.values > 0

    def per_sample(self, sample_rate: int, n_samples: int) -> np.ndarray:
        """Expand to a per-sample contour, linearly interpolated inside voiced
        runs and zero elsewhere."""
        f0 = np.zeros(n_samples)
        if not len(self) or n_samples == 0:
            return f0
        t = np.arange(n_samples) / sample_rate
        centers = np.arange(len(self)) * self.frame_period
        for start, stop in voiced_runs(self.values):
            lo, hi = centers[start], centers[stop - 1]
            sel = (t >= max(0.0, lo - self.frame_period / 2)) & (
                t <= hi + self.frame_period / 2
            )
            if stop - start == 1:
                f0[sel] = self.values[start]
            else:
                f0[sel] = np.interp(t[sel], centers[start:stop], self.values[start:stop])
        return f0


def voiced_runs(values: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous voiced regions as [start, stop) frame-index pairs."""
    runs = []
    start = None
    for i, v in enumerate(values):
        if v > 0 and start is None:
            start = i
        elif v <= 0 and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(values)))
    return runs


@dataclass(frozen=True)
class LpFilter:
    """Linear prediction filter A(z) = 1 + a_1 z^-1 + ... + a_p z^-p.

    `stabilized` is set when a degenerate recursion step or root reflection
    had to intervene; clean inputs never trip it.
    """

    coefficients: np.ndarray
    gain: float
    stabilized: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=np.float64)
        )

    @property
    def order(self) -> int:
        return self.coefficients.size

    @property
    def polynomial(self) -> np.ndarray:
        """Full polynomial [1, a_1, ..., a_p], highest power of z first for np.roots."""
        return np.concatenate(([1.0], self.coefficients))


@dataclass(frozen=True)
class LsfVector:
    """Line spectral frequencies: strictly increasing angles in (0, pi)."""

    frequencies: np.ndarray
    stabilized: bool = False

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        object.__setattr__(self, "frequencies", freqs)
        if freqs.size:
            if freqs.min() <= 0 or freqs.max() >= np.pi:
                raise ValueError("LSF values must lie strictly inside (0, pi)")
            if np.any(np.diff(freqs) <= 0):
                raise ValueError("LSF values must be strictly increasing")

    @property
    def order(self) -> int:
        return self.frequencies.size


@dataclass(frozen=True)
class GciSequence:
    """Glottal closure instants, strictly increasing times in seconds."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", times)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("GCI times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class SpectrumFrame:
    """Single-frame amplitude spectrum; magnitude is calibrated so a tone of
    amplitude A peaks at A."""

    freqs: np.ndarray
    magnitude: np.ndarray


def frame_count(n_samples: int, sample_rate: int, frame_period: float) -> int:
    if frame_period <= 0:
        raise ValueError(f"frame_period must be positive, got {frame_period}")
    if n_samples == 0:
        return 0
    duration = n_samples / sample_rate
    # guard the floor against cases like 1.0 / 0.005 landing just below 200
    return int(math.floor(duration / frame_period + 1e-9)) + 1


def frame_signal(
    buffer: SampleBuffer,
    frame_period: float,
    window_length: int,
    window_kind: str = "hann",
) -> list[Frame]:
    """Cut the buffer into frames at the given period.

    Frame k is centered at k * frame_period; edges are zero-padded
    symmetrically. An empty buffer yields an empty list.
    """
    n = frame_count(len(buffer), buffer.sample_rate, frame_period)
    if n == 0:
        return []
    if window_length <= 0:
        raise ValueError(f"window_length must be positive, got {window_length}")
    window = make_window(window_kind, window_length)
    half = window_length // 2
    frames = []
    x = buffer.samples
    for k in range(n):
        center = int(round(k * frame_period * buffer.sample_rate))
        start = center - half
        seg = np.zeros(window_length)
        lo = max(0, start)
        hi = min(x.size, start + window_length)
        if hi > lo:
            seg[lo - start : hi - start] = x[lo:hi]
        frames.append(
            Frame(
                samples=seg * window,
                center_time=k * frame_period,
                index=k,
                window_sum=float(window.sum()),
            )
        )
    return frames


def autocorrelate(frame: Frame | np.ndarray, max_lag: int) -> np.ndarray:
    """Autocorrelation r[0..max_lag] with a common divisor across lags so the
    Toeplitz system stays positive semidefinite; r[0] equals the frame energy."""
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame, float)
    if max_lag >= x.size:
        raise ValueError(f"max_lag {max_lag} must be < frame length {x.size}")
    n = x.size
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    r = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    return r


def levinson(autocorr: np.ndarray, order: int) -> LpFilter:
    """Levinson-Durbin solve of the Toeplitz normal equations.

    Returns A(z) = 1 + sum a_k z^-k with gain = sqrt(residual energy). A
    degenerate step (non-positive prediction error) clamps the reflection
    coefficient and flags the result instead of failing.
    """
    r = np.asarray(autocorr, dtype=np.float64)
    if r.size <= order:
        raise ValueError(f"need at least {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= 0:
        raise ValueError("degenerate signal: zero-lag autocorrelation must be positive")
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    stabilized = False
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1 : 0 : -1])
        k = -acc / err if err > 0 else 0.0
        if not np.isfinite(k) or abs(k) >= 1.0:
            k = math.copysign(0.999, k) if np.isfinite(k) and k != 0 else 0.0
            stabilized = True
        new = a.copy()
        for j in range(1, i):
            new[j] = a[j] + k * a[i - j]
        new[i] = k
        a = new
        err *= 1.0 - k * k
        if err <= 0:
            err = 1e-12 * r[0]
            stabilized = True
    return LpFilter(coefficients=a[1:], gain=float(math.sqrt(err)), stabilized=stabilized)


def _minimum_phase_roots(poly: np.ndarray) -> tuple[np.ndarray, bool]:
    """Reflect any roots outside the unit circle back inside."""
    roots = np.roots(poly)
    bad = np.abs(roots) >= 1.0
    if not np.any(bad):
        return roots, False
    roots[bad] = roots[bad] / (np.abs(roots[bad]) ** 2)
    return roots, True


def stabilize_lp(filt: LpFilter) -> LpFilter:
    """Radial root reflection onto the open unit disk; no-op when already
    minimum-phase."""
    roots, reflected = _minimum_phase_roots(filt.polynomial)
    if not reflected:
        return filt
    poly = np.real(np.poly(roots))
    return LpFilter(coefficients=poly[1:], gain=filt.gain, stabilized=True)


def is_minimum_phase(filt: LpFilter) -> bool:
    if filt.order == 0:
        return True
    return bool(np.all(np.abs(np.roots(filt.polynomial)) < 1.0))


def lp_to_lsf(filt: LpFilter) -> LsfVector:
    """Convert the prediction polynomial to line spectral frequencies.

    Non-minimum-phase input is stabilized first and the output flagged.
    """
    filt2 = stabilize_lp(filt)
    a = filt2.polynomial
    p = filt2.order
    if p == 0:
        return LsfVector(frequencies=np.array([]), stabilized=filt2.stabilized)
    ext = np.concatenate((a, [0.0]))
    psum = ext + ext[::-1]
    qdiff = ext - ext[::-1]
    if p % 2 == 0:
        psum = np.polydiv(psum, np.array([1.0, 1.0]))[0]
        qdiff = np.polydiv(qdiff, np.array([1.0, -1.0]))[0]
    else:
        qdiff = np.polydiv(qdiff, np.array([1.0, 0.0, -1.0]))[0]
    angles = []
    for poly in (psum, qdiff):
        if poly.size < 2:
            continue
        roots = np.roots(poly)
        ang = np.angle(roots)
        angles.extend(a for a in ang if 1e-9 < a < np.pi - 1e-9)
    freqs = np.sort(np.asarray(angles))
    if freqs.size != p:
        raise ValueError(
            f"LSF conversion produced {freqs.size} frequencies for order {p}"
        )
    return LsfVector(frequencies=freqs, stabilized=filt2.stabilized)


def lsf_to_lp(lsf: LsfVector, gain: float = 1.0) -> LpFilter:
    """Rebuild the prediction polynomial from line spectral frequencies."""
    p = lsf.order
    if p == 0:
        return LpFilter(coefficients=np.array([]), gain=gain)
    p_angles = lsf.frequencies[0::2]
    q_angles = lsf.frequencies[1::2]

    def poly_from(angles: np.ndarray) -> np.ndarray:
        poly = np.array([1.0])
        for w in angles:
            poly = np.convolve(poly, np.array([1.0, -2.0 * math.cos(w), 1.0]))
        return poly

    psum = poly_from(p_angles)
    qdiff = poly_from(q_angles)
    if p % 2 == 0:
        psum = np.convolve(psum, np.array([1.0, 1.0]))
        qdiff = np.convolve(qdiff, np.array([1.0, -1.0]))
    else:
        qdiff = np.convolve(qdiff, np.array([1.0, 0.0, -1.0]))
    a = 0.5 * (psum + qdiff)
    return LpFilter(coefficients=a[1 : p + 1], gain=gain)


def hilbert_envelope(segment: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal."""
    x = np.asarray(segment, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"segment too short for envelope: {x.size} < 4")
    return np.abs(hilbert(x))


def amplitude_spectrum(
    samples: np.ndarray,
    sample_rate: int,
    window_kind: str = "hann",
    nfft: int | None = None,
) -> SpectrumFrame:
    """Windowed amplitude spectrum calibrated so a full-scale tone of
    amplitude A reads A at its peak bin."""
    x = np.asarray(samples, dtype=np.float64)
    w = make_window(window_kind, x.size)
    if nfft is None:
        nfft = 1 << (4 * x.size - 1).bit_length()
    mag = np.abs(np.fft.rfft(x * w, nfft)) * 2.0 / w.sum()
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    return SpectrumFrame(freqs=freqs, magnitude=mag)


def resample_to(x: np.ndarray, n_out: int, half_width: int = 16) -> np.ndarray:
    """Windowed-sinc resampling of a fixed-length waveform to n_out samples.

    Maps [0, len(x)) onto [0, n_out); lowpasses when shrinking.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.size
    if n_out <= 0:
        raise ValueError("n_out must be positive")
    if n_in == 0:
        return np.zeros(n_out)
    if n_in == n_out:
        return x.copy()
    t = np.arange(n_out) * (n_in / n_out)
    cutoff = min(1.0, n_out / n_in) * 0.97
    idx = np.arange(-half_width, half_width + 1)
    # y[j] = sum_k x[floor(t_j)+k] * kernel(t_j - (floor(t_j)+k))
    base = np.floor(t).astype(int)
    frac = t - base
    offsets = idx[None, :] - frac[:, None] + 0.0  # sample position minus t_j
    kern = cutoff * np.sinc(cutoff * offsets)
    kern *= 0.5 * (1.0 + np.cos(np.pi * np.clip(offsets / (half_width + 1), -1, 1)))
    pos = base[:, None] + idx[None, :]
    valid = (pos >= 0) & (pos < n_in)
    vals = np.where(valid, x[np.clip(pos, 0, n_in - 1)], 0.0)
    return np.sum(vals * kern, axis=1)


def pulse_positions(f0_per_sample: np.ndarray, sample_rate: int) -> np.ndarray:
    """Pulse onset positions (fractional sample indices) for a time-varying f0.

    A continuous phase accumulator advances by f0/fs per sample and emits a
    position each time it crosses an integer, so spacing tracks 1/f0(t)
    without period quantization. Zero-f0 (unvoiced) stretches reset the phase.
    """
    f0 = np.asarray(f0_per_sample, dtype=np.float64)
    positions = []
    phase = 0.0
    prev_voiced = False
    for n in range(f0.size):
        if f0[n] <= 0:
            prev_voiced = False
            continue
        if not prev_voiced:
            # place the first pulse of a voiced run exactly at its onset
            phase = 1.0 - f0[n] / sample_rate
            prev_voiced = True
        phase += f0[n] / sample_rate
        if phase >= 1.0:
            frac = (phase - 1.0) / (f0[n] / sample_rate)
            positions.append(n - frac)
            phase -= 1.0
    return np.asarray(positions)


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1)).bit_length()
