"""Harmonic plus noise vocoder.

Voiced frames are decomposed by a full-band harmonic least-squares fit;
the harmonic amplitudes feed a regularized discrete cepstrum (order 39)
and the spectral peaks feed a maximum-voiced-frequency estimate that is
smoothed over time by dynamic programming. Synthesis reads amplitudes and
minimum phases back off the cepstral envelope below fm and fills the band
above fm with envelope-shaped noise, time-modulated at the pitch rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import (
    F0Track,
    SampleBuffer,
    SpectrumFrame,
    amplitude_spectrum,
    frame_signal,
    make_window,
    pulse_positions,
)
from .envelope import (
    DEFAULT_ALPHA,
    HNM_CEPSTRUM_ORDER,
    LOG_TO_DB,
    SILENCE_C0,
    MelCepstrum,
    envelope_eval,
    fit_discrete_cepstrum,
    min_phase_eval,
)
from .formats import ParameterStream
from . import pulse as pulse_vocoder

# pseudo fundamental for fitting the envelope of unvoiced frames
UNVOICED_PSEUDO_F0 = 100.0

# default transition penalty of the fm dynamic program, per harmonic step
DEFAULT_FM_LAMBDA = 0.1


@dataclass(frozen=True)
class HarmonicFrame:
    """Least-squares harmonic decomposition of one analysis frame."""

    f0: float
    amplitudes: np.ndarray
    phases: np.ndarray
    residual_fraction: float

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        phis = np.asarray(self.phases, dtype=np.float64)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "phases", phis)
        if self.f0 <= 0:
            raise ValueError("harmonic frames need a positive f0")
        if amps.shape != phis.shape or amps.ndim != 1:
            raise ValueError("amplitudes and phases must be matching vectors")
        if np.any(amps < 0):
            raise ValueError("amplitudes must be non-negative")

    @property
    def count(self) -> int:
        return self.amplitudes.size


def harmonic_count(f0: float, sample_rate: int) -> int:
    """Number of harmonics strictly below Nyquist."""
    return int(np.floor((sample_rate / 2.0 - 1e-6) / f0))


def harmonic_analysis(
    frame: np.ndarray,
    f0: float,
    sample_rate: int = 16000,
    window_kind: str = "hann",
) -> HarmonicFrame:
    """Windowed least-squares fit of a harmonic sinusoid sum to the frame.

    Phases are referenced to the frame center. The caller should supply at
    least two pitch periods of signal; a window shorter than one period is
    rejected outright.
    """
    x = np.asarray(frame, dtype=np.float64)
    if f0 <= 0:
        raise ValueError(f"f0 must be positive, got {f0}")
    period = sample_rate / f0
    if period > x.size:
        raise ValueError(
            f"one pitch period ({period:.0f} samples) exceeds the "
            f"analysis window ({x.size} samples)"
        )
    n_harm = harmonic_count(f0, sample_rate)
    t = (np.arange(x.size) - (x.size - 1) / 2.0) / sample_rate
    k = np.arange(1, n_harm + 1)
    angles = 2.0 * np.pi * f0 * np.outer(t, k)
    basis = np.concatenate([np.cos(angles), np.sin(angles)], axis=1)

    w = make_window(window_kind, x.size)
    solution, *_ = np.linalg.lstsq(basis * w[:, None], x * w, rcond=None)
    cos_part = solution[:n_harm]
    sin_part = solution[n_harm:]
    amplitudes = np.hypot(cos_part, sin_part)
    phases = np.arctan2(-sin_part, cos_part)

    fitted = basis @ solution
    err = (x - fitted) * w
    ref = x * w
    energy = float(ref @ ref)
    residual_fraction = float(err @ err) / energy if energy > 0 else 1.0
    return HarmonicFrame(
        f0=f0,
        amplitudes=amplitudes,
        phases=phases,
        residual_fraction=residual_fraction,
    )


# floor for the log-magnitude patches; anything this far under the lobe
# peak is treated as silence rather than shape
_LIKENESS_FLOOR_DB = 80.0


def _lobe_template_db(
    window_length: int, nfft: int, half: int, window_kind: str = "hann"
) -> np.ndarray:
    """Log magnitude of the analysis window transform over +-half bins."""
    w = make_window(window_kind, window_length)
    spectrum = np.abs(np.fft.fft(w, nfft))
    offsets = np.arange(-half, half + 1) % nfft
    shape = spectrum[offsets] / spectrum[0]
    template = 20.0 * np.log10(np.maximum(shape, 1e-12))
    return np.maximum(template, -_LIKENESS_FLOOR_DB)


def sinusoidal_likeness(
    spectrum: SpectrumFrame,
    f0: float,
    window_length: int,
    window_kind: str = "hann",
) -> np.ndarray:
    """Per-harmonic score in [0, 1]: how closely the spectral neighborhood
    of each harmonic peak matches the analysis-window main lobe.

    Two normalized correlations against the lobe template are multiplied.
    The first runs on mean-removed log magnitudes over most of the harmonic
    cell: a lone sinusoid reproduces the lobe's tall spike while noise fills
    the cell with comparable bumps. The second is the fraction of patch
    power under the main lobe's support, which collapses for peaks that are
    barely above the floor. Log shape alone saturates near 0.5 on noise
    (any selected maximum is locally lobe-ish); power concentration alone
    stays near 1 for tones even when the frame is noisy. Their product
    keeps clean harmonics near 1, drags buried ones toward 0.1, and leaves
    audible-but-noisy ones in between.
    """
    freqs = spectrum.freqs
    mag = spectrum.magnitude
    sample_rate = int(round(freqs[-1] * 2))
    nfft = 2 * (freqs.size - 1)
    bin_hz = freqs[1] - freqs[0]
    half = max(2, int(round(0.45 * f0 / bin_hz)))
    # main lobe of a hann-family window spans two length-matched DFT bins
    # per side
    lobe_half = min(int(np.ceil(2.0 * nfft / window_length)), half)
    template = _lobe_template_db(window_length, nfft, half, window_kind)
    template = template - template.mean()
    t_norm = np.linalg.norm(template)

    scores = []
    for k in range(1, harmonic_count(f0, sample_rate) + 1):
        target = k * f0
        sel = np.flatnonzero(np.abs(freqs - target) < f0 / 3.0)
        if sel.size == 0:
            scores.append(0.0)
            continue
        peak = sel[np.argmax(mag[sel])]
        lo, hi = peak - half, peak + half + 1
        if lo < 0 or hi > mag.size:
            scores.append(0.0)
            continue
        patch = 20.0 * np.log10(np.maximum(mag[lo:hi], 1e-12))
        patch = np.maximum(patch, patch.max() - _LIKENESS_FLOOR_DB)
        patch = patch - patch.mean()
        denom = np.linalg.norm(patch) * t_norm
        shape = float(patch @ template / denom) if denom > 0 else 0.0
        power = mag[lo:hi] ** 2
        concentration = float(
            np.sum(power[half - lobe_half : half + lobe_half + 1])
            / np.sum(power)
        )
        scores.append(shape * concentration)
    return np.clip(np.array(scores), 0.0, 1.0)


def _partition_scores(likeness: np.ndarray) -> np.ndarray:
    """Score of splitting after harmonic j (j=0 means nothing voiced):
    sum of likeness below plus sum of (1 - likeness) above."""
    below = np.concatenate(([0.0], np.cumsum(likeness)))
    above = (likeness.size - np.arange(likeness.size + 1)) - (below[-1] - below)
    return below + above


def _fm_grid(f0: float, count: int, sample_rate: int) -> np.ndarray:
    """Candidate fm values: half-integer harmonic multiples, capped at
    Nyquist so rows always satisfy the layout invariant."""
    grid = (np.arange(count + 1) + 0.5) * f0
    return np.minimum(grid, sample_rate / 2.0)


def estimate_fm(
    harmonics: HarmonicFrame,
    spectrum: SpectrumFrame,
    window_length: int,
    sample_rate: int = 16000,
) -> tuple[float, np.ndarray]:
    """Raw maximum voiced frequency of one frame plus the likeness scores.

    The partition maximizes sinusoidal likeness below fm and noisiness
    above; candidates sit halfway between harmonics.
    """
    likeness = sinusoidal_likeness(
        spectrum, harmonics.f0, window_length
    )[: harmonics.count]
    scores = _partition_scores(likeness)
    grid = _fm_grid(harmonics.f0, likeness.size, sample_rate)
    best = int(np.argmax(scores))
    return float(grid[best]), likeness


def smooth_fm(
    f0s: np.ndarray,
    likeness_per_frame: list,
    lam: float = DEFAULT_FM_LAMBDA,
    sample_rate: int = 16000,
) -> np.ndarray:
    """Dynamic-programming smoothing of the fm track.

    Data cost of a candidate is its shortfall against the frame's best
    partition score; transitions pay lam per harmonic step of fm change.
    Unvoiced frames are fm = 0 and break the chain.
    """
    f0s = np.asarray(f0s, dtype=np.float64)
    out = np.zeros(f0s.size)
    run = []
    for i in range(f0s.size + 1):
        if i < f0s.size and f0s[i] > 0:
            run.append(i)
            continue
        if run:
            out[run] = _smooth_run(
                f0s[run], [likeness_per_frame[j] for j in run], lam, sample_rate
            )
            run = []
    return out


def _smooth_run(f0s, likeness, lam, sample_rate):
    grids = []
    costs = []
    for f0, lk in zip(f0s, likeness):
        scores = _partition_scores(lk)
        grids.append(_fm_grid(f0, lk.size, sample_rate))
        costs.append(scores.max() - scores)

    total = costs[0].copy()
    back = []
    for t in range(1, len(costs)):
        # transition measured in harmonic steps of the current frame
        step = np.abs(grids[t][:, None] - grids[t - 1][None, :]) / f0s[t]
        reached = total[None, :] + lam * step
        choice = np.argmin(reached, axis=1)
        back.append(choice)
        total = costs[t] + reached[np.arange(len(costs[t])), choice]

    path = [int(np.argmin(total))]
    for choice in reversed(back):
        path.append(int(choice[path[-1]]))
    path.reverse()
    return np.array([g[j] for g, j in zip(grids, path)])


def _unvoiced_envelope(
    frame: np.ndarray,
    order: int,
    alpha: float,
    regularization_weight: float,
    sample_rate: int,
) -> np.ndarray:
    """Discrete cepstrum through periodogram peaks at 100 Hz spacing."""
    spectrum = amplitude_spectrum(frame, sample_rate)
    freqs, mag = spectrum.freqs, spectrum.magnitude
    nyquist = sample_rate / 2.0
    targets = np.arange(UNVOICED_PSEUDO_F0, nyquist, UNVOICED_PSEUDO_F0)
    peaks = []
    for f in targets:
        sel = (freqs > f - UNVOICED_PSEUDO_F0 / 2) & (freqs < f + UNVOICED_PSEUDO_F0 / 2)
        peaks.append(mag[sel].max())
    amps_db = 20.0 * np.log10(np.maximum(peaks, 1e-10))
    fit = fit_discrete_cepstrum(
        targets,
        amps_db,
        order=order,
        alpha=alpha,
        regularization_weight=regularization_weight,
        sample_rate=sample_rate,
    )
    return fit.values


def analyze(
    buffer: SampleBuffer,
    f0track: F0Track,
    order: int = HNM_CEPSTRUM_ORDER,
    alpha: float = DEFAULT_ALPHA,
    lam: float = DEFAULT_FM_LAMBDA,
    regularization_weight: float = 2e-4,
    window_length: int | None = None,
) -> ParameterStream:
    """Per frame: [f0, mel-cepstrum (order+1 values), fm]. fm of voiced
    frames comes from the DP-smoothed sinusoidal-likeness partition."""
    pulse_vocoder._check_track(buffer, f0track)
    sample_rate = buffer.sample_rate
    if window_length is None:
        voiced = f0track.values[f0track.values > 0]
        median = float(np.median(voiced)) if voiced.size else 0.0
        window_length = pulse_vocoder.envelope_window_length(sample_rate, median)
    # raw frames: harmonic_analysis and amplitude_spectrum window internally
    frames = frame_signal(buffer, f0track.frame_period, window_length, "rect")

    rows = np.zeros((len(frames), order + 3))
    likeness_per_frame: list = []
    for i, cut in enumerate(frames):
        frame = cut.samples
        f0 = float(f0track.values[i])
        rows[i, 0] = f0
        if not np.any(frame):
            rows[i, 1] = SILENCE_C0
            likeness_per_frame.append(np.zeros(0))
            continue
        if f0 <= 0:
            rows[i, 1:-1] = _unvoiced_envelope(
                frame, order, alpha, regularization_weight, sample_rate
            )
            likeness_per_frame.append(np.zeros(0))
            continue
        harm = harmonic_analysis(frame, f0, sample_rate)
        amps_db = 20.0 * np.log10(np.maximum(harm.amplitudes, 1e-10))
        fit = fit_discrete_cepstrum(
            np.arange(1, harm.count + 1) * f0,
            amps_db,
            order=order,
            alpha=alpha,
            regularization_weight=regularization_weight,
            sample_rate=sample_rate,
        )
        rows[i, 1:-1] = fit.values
        spectrum = amplitude_spectrum(frame, sample_rate)
        _, likeness = estimate_fm(harm, spectrum, window_length, sample_rate)
        likeness_per_frame.append(likeness)

    rows[:, -1] = smooth_fm(rows[:, 0], likeness_per_frame, lam, sample_rate)
    return ParameterStream(
        vocoder_id="hnm", frame_period=f0track.frame_period, frames=rows
    )


def _noise_modulation(f0_per_sample: np.ndarray, sample_rate: int) -> np.ndarray:
    """Pitch-synchronous triangle in [0.5, 1.5], peaking at GCI phase 0,
    unity elsewhere (unvoiced samples keep their level)."""
    n = f0_per_sample.size
    m = np.ones(n)
    positions = pulse_positions(f0_per_sample, sample_rate)
    for a, b in zip(positions[:-1], positions[1:]):
        if b - a > 2.5 * sample_rate / max(f0_per_sample[int(a)], 1.0):
            continue  # gap between voiced runs, not a period
        lo, hi = int(np.ceil(a)), min(int(np.ceil(b)), n)
        if hi <= lo:
            continue
        frac = (np.arange(lo, hi) - a) / (b - a)
        m[lo:hi] = 0.5 + np.abs(1.0 - 2.0 * frac)
    return m


def synthesize(
    params: ParameterStream,
    seed: int = 0,
    sample_rate: int = 16000,
    alpha: float = DEFAULT_ALPHA,
) -> SampleBuffer:
    """Harmonics below fm from the envelope (amplitude and minimum phase,
    with an accumulated linear-in-frequency term for inter-frame
    coherence), envelope-shaped noise above fm, triangular overlap-add."""
    if params.vocoder_id != "hnm":
        raise ValueError(f"expected an hnm parameter stream, got {params.vocoder_id!r}")
    hop = int(round(params.frame_period * sample_rate))
    n_frames = len(params)
    n = (n_frames - 1) * hop
    out = np.zeros(max(n, 1))
    tri = np.bartlett(2 * hop + 1)[:-1]
    rng = np.random.default_rng(seed)

    track = F0Track(values=params.frames[:, 0], frame_period=params.frame_period)
    f0_ps = track.per_sample(sample_rate, out.size)
    modulation = _noise_modulation(f0_ps, sample_rate)
    sigma = pulse_vocoder.noise_sigma(
        pulse_vocoder.analysis_window_for(f0_ps, sample_rate)
    )

    nfft = 2 * hop
    bin_freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    t_local = (np.arange(2 * hop) - hop) / sample_rate

    theta = 0.0
    prev_f0 = 0.0
    for i in range(n_frames):
        row = params.frames[i]
        f0, fm = float(row[0]), float(row[-1])
        cep = MelCepstrum(values=row[1:-1], alpha=alpha, sample_rate=sample_rate)
        if cep.values[0] <= SILENCE_C0:
            prev_f0 = f0
            continue
        center = i * hop
        lo = max(0, center - hop)
        hi = min(out.size, center + hop)
        seg = slice(lo - (center - hop), hi - (center - hop))

        segment = np.zeros(2 * hop)
        if f0 > 0:
            if prev_f0 > 0:
                theta += 2.0 * np.pi * 0.5 * (prev_f0 + f0) * hop / sample_rate
            else:
                theta = 0.0
            kmax = min(int(fm / f0 + 1e-9), harmonic_count(f0, sample_rate))
            if kmax >= 1:
                k = np.arange(1, kmax + 1)
                freqs = k * f0
                amps = 10.0 ** (envelope_eval(cep, freqs) / 20.0)
                phimin = min_phase_eval(cep, freqs)
                angles = 2.0 * np.pi * f0 * np.outer(t_local, k)
                segment += np.cos(angles + phimin + k * theta) @ amps

        # envelope-shaped noise above fm (full band when fm = 0), built in
        # the frequency domain with unit-variance complex bins
        gain = 10.0 ** (envelope_eval(cep, bin_freqs) / 20.0)
        transition = max(f0, 100.0)
        gain = gain * np.clip((bin_freqs - fm) / transition, 0.0, 1.0)
        bins = (rng.standard_normal(bin_freqs.size)
                + 1j * rng.standard_normal(bin_freqs.size)) / np.sqrt(2.0)
        bins *= gain * sigma * np.sqrt(nfft)
        bins[0] = 0.0
        bins[-1] = bins[-1].real
        noise = np.fft.irfft(bins, nfft)
        if f0 > 0:
            mod = np.ones(2 * hop)
            mod[seg] = modulation[lo:hi]
            noise = noise * mod
        segment += noise

        out[lo:hi] += (segment * tri)[seg]
        prev_f0 = f0

    return SampleBuffer(samples=out[:n] if n > 0 else out, sample_rate=sample_rate)
