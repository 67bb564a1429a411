"""Deterministic plus stochastic residual vocoder.

A voice model is trained once per speaker: the spectral envelope is inverse
filtered out, two-period residual frames are cut at glottal closure instants,
and their first principal component becomes the deterministic excitation
below fm. The band above fm is resynthesized as white noise shaped in time by
the mean Hilbert envelope of the frames' high-band content.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin

from .dsp import (
    F0Track,
    SampleBuffer,
    frame_signal,
    hilbert_envelope,
    pulse_positions,
    resample_to,
)
from .envelope import (
    DEFAULT_ALPHA,
    MGC_ORDER,
    MgcCoefficients,
    mgc_analyze,
    mgc_inverse_filter,
    mglsa_filter,
)
from .formats import FormatError, ParameterStream, read_params, write_params
from .gci import detect_gci
from . import pulse as pulse_vocoder

DEFAULT_FM = 7000.0

# zero-phase band-split FIR: odd length, ~200 Hz transition at 16 kHz
_SPLIT_TAPS = 265


@dataclass(frozen=True)
class DsmVoiceModel:
    """Trained excitation model: eigenresidual, noise envelope, band split."""

    eigen_residual: np.ndarray
    noise_envelope: np.ndarray
    fm: float
    reference_f0: float
    sample_rate: int = 16000

    def __post_init__(self):
        eig = np.asarray(self.eigen_residual, dtype=np.float64)
        env = np.asarray(self.noise_envelope, dtype=np.float64)
        object.__setattr__(self, "eigen_residual", eig)
        object.__setattr__(self, "noise_envelope", env)
        if eig.ndim != 1 or eig.size < 4:
            raise ValueError("eigen_residual must be a waveform of at least 4 samples")
        if env.shape != eig.shape:
            raise ValueError("noise_envelope must match eigen_residual length")
        norm = np.linalg.norm(eig)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-3:
            raise ValueError(f"eigen_residual must have unit norm, got {norm:.6f}")
        if np.any(env < 0) or not np.all(np.isfinite(env)):
            raise ValueError("noise_envelope must be non-negative and finite")
        nyquist = self.sample_rate / 2.0
        if not 0.0 < self.fm < nyquist:
            raise ValueError(f"fm must lie in (0, {nyquist:g}) Hz, got {self.fm}")
        if self.reference_f0 <= 0:
            raise ValueError("reference_f0 must be positive")

    @property
    def reference_length(self) -> int:
        return self.eigen_residual.size


def _band_split_fir(fm: float, sample_rate: int, high: bool) -> np.ndarray:
    # the high-pass transition band sits entirely above fm so that the
    # stochastic component's energy below fm is bounded by the stopband,
    # not by the skirt; the low-pass keeps its nominal cutoff at fm
    cutoff = fm + 120.0 if high else fm
    cutoff = min(cutoff, 0.499 * sample_rate)
    return firwin(_SPLIT_TAPS, cutoff, fs=sample_rate, pass_zero=not high)


def _zero_phase(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # symmetric odd-length FIR, group delay trimmed = zero phase; sliced
    # from the full convolution because mode="same" follows whichever input
    # is longer, and frames can be shorter than the filter
    delay = (taps.size - 1) // 2
    return np.convolve(x, taps, mode="full")[delay : delay + x.size]


def _extract_residual_frames(
    buffer: SampleBuffer, f0track: F0Track, n_ref: int
) -> np.ndarray:
    """Two-period Blackman-windowed residual frames at GCIs, resampled to
    n_ref and energy-normalized. Returns (n_frames, n_ref)."""
    voiced = f0track.values[f0track.values > 0]
    f0_median = float(np.median(voiced)) if voiced.size else 0.0
    window_length = pulse_vocoder.envelope_window_length(
        buffer.sample_rate, f0_median
    )
    frames = frame_signal(buffer, f0track.frame_period, window_length)
    stream = [
        mgc_analyze(
            f,
            sample_rate=buffer.sample_rate,
            min_freq=0.9 * f0track.values[i],
        )
        for i, f in enumerate(frames)
    ]
    residual = mgc_inverse_filter(buffer, stream, f0track.frame_period)

    gcis = detect_gci(buffer, f0track)
    f0_ps = f0track.per_sample(buffer.sample_rate, len(buffer))
    out = []
    x = residual.samples
    for t in gcis.times:
        center = int(round(t * buffer.sample_rate))
        if not (0 <= center < x.size) or f0_ps[center] <= 0:
            continue
        period = buffer.sample_rate / f0_ps[center]
        half = int(round(period))
        lo, hi = center - half, center + half
        if lo < 0 or hi > x.size:
            continue
        seg = x[lo:hi] * np.blackman(hi - lo)
        seg = resample_to(seg, n_ref)
        norm = np.linalg.norm(seg)
        if norm > 0:
            out.append(seg / norm)
    return np.array(out) if out else np.empty((0, n_ref))


def _first_component(frames: np.ndarray) -> np.ndarray:
    """Dominant direction of the frame set, unit norm.

    First right singular vector of the raw frame matrix: the eigenvector of
    the frames' second-moment (scatter) matrix. For a coherent pulse corpus
    this is the common shape itself; frames that are all identical give that
    waveform back exactly. Mean removal is deliberately skipped: residual
    frames are energy-normalized beforehand, so a centered decomposition
    would return the largest deviation mode instead of the pulse shape the
    synthesizer needs. Sign convention: the sample of largest magnitude is
    negative, matching glottal flow derivative polarity.
    """
    _, _, vecs = np.linalg.svd(frames, full_matrices=False)
    component = vecs[0] / np.linalg.norm(vecs[0])
    if component[np.argmax(np.abs(component))] > 0:
        component = -component
    return component


def train_voice_model(
    corpus,
    fm: float = DEFAULT_FM,
    sample_rate: int = 16000,
) -> DsmVoiceModel:
    """Fit the excitation model on (SampleBuffer, F0Track) pairs.

    Needs at least 100 usable voiced periods across the corpus.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training needs at least 100 voiced periods, got 0")
    voiced = np.concatenate(
        [track.values[track.values > 0] for _, track in corpus]
        or [np.empty(0)]
    )
    if voiced.size == 0:
        raise ValueError("training needs at least 100 voiced periods, got 0")
    reference_f0 = float(np.median(voiced))
    n_ref = int(round(2.0 * sample_rate / reference_f0))
    n_ref += n_ref % 2

    collected = [
        _extract_residual_frames(buffer, track, n_ref) for buffer, track in corpus
    ]
    kept = [c for c in collected if c.size]
    if not kept:
        raise ValueError("training needs at least 100 voiced periods, got 0")
    frames = np.vstack(kept)
    if frames.shape[0] < 100:
        raise ValueError(
            f"training needs at least 100 voiced periods, got {frames.shape[0]}"
        )

    component = _first_component(frames)

    hp = _band_split_fir(fm, sample_rate, high=True)
    envelopes = [hilbert_envelope(_zero_phase(f, hp)) for f in frames]
    noise_envelope = np.mean(envelopes, axis=0)
    mean_level = noise_envelope.mean()
    if mean_level > 0:
        noise_envelope = noise_envelope / mean_level

    return DsmVoiceModel(
        eigen_residual=component,
        noise_envelope=noise_envelope,
        fm=fm,
        reference_f0=reference_f0,
        sample_rate=sample_rate,
    )


def analyze(buffer: SampleBuffer, f0track: F0Track, **kwargs) -> ParameterStream:
    """Same features as the pulse vocoder: [f0, c_0..c_24] per frame."""
    stream = pulse_vocoder.analyze(buffer, f0track, **kwargs)
    return ParameterStream(
        vocoder_id="dsm", frame_period=stream.frame_period, frames=stream.frames
    )


def _voiced_weight(voiced: np.ndarray, fade: int) -> np.ndarray:
    """1 inside voiced runs, linear 5 ms ramps just inside each edge."""
    w = voiced.astype(np.float64)
    if fade <= 1:
        return w
    ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
    edges = np.flatnonzero(np.diff(voiced.astype(int)))
    for e in edges:
        if voiced[e + 1]:  # onset at e+1
            n = min(fade, w.size - (e + 1))
            w[e + 1 : e + 1 + n] = np.minimum(w[e + 1 : e + 1 + n], ramp[:n])
        else:  # offset after e
            n = min(fade, e + 1)
            w[e + 1 - n : e + 1] = np.minimum(w[e + 1 - n : e + 1], ramp[:n][::-1])
    return w


def dsm_excitation(
    f0_per_sample: np.ndarray,
    model: DsmVoiceModel,
    sample_rate: int,
    rng: np.random.Generator,
    with_noise: bool = True,
) -> np.ndarray:
    """Eigenresidual overlap-add below fm plus modulated noise above."""
    n = f0_per_sample.size
    det = np.zeros(n)
    modulation = np.zeros(n)
    positions = pulse_positions(f0_per_sample, sample_rate)
    for pos in positions:
        center = int(round(pos))
        if not (0 <= center < n) or f0_per_sample[center] <= 0:
            continue
        two_periods = int(round(2.0 * sample_rate / f0_per_sample[center]))
        if two_periods < 4:
            continue
        grain = resample_to(model.eigen_residual, two_periods)
        env = resample_to(model.noise_envelope, two_periods)
        lo = center - two_periods // 2
        g0, g1 = max(0, lo), min(n, lo + two_periods)
        det[g0:g1] += grain[g0 - lo : g1 - lo]
        modulation[g0:g1] += np.maximum(env[g0 - lo : g1 - lo], 0.0)

    voiced = f0_per_sample > 0
    sigma = pulse_vocoder.noise_sigma(
        pulse_vocoder.analysis_window_for(f0_per_sample, sample_rate)
    )

    # the stored component is full band; confine the deterministic part to
    # the band below fm, the noise fills the rest
    det = _zero_phase(det, _band_split_fir(model.fm, sample_rate, high=False))

    # pulse-train-equivalent power in the deterministic band, run by run
    for start, stop in _sample_runs(voiced):
        seg = det[start:stop]
        power = np.mean(seg * seg)
        if power <= 0:
            continue
        mean_period = np.mean(sample_rate / f0_per_sample[start:stop])
        target = mean_period / 4.0 * min(1.0, model.fm / (sample_rate / 2.0))
        det[start:stop] = seg * np.sqrt(target / power)

    exc = det
    if with_noise and voiced.any():
        hot = modulation[voiced]
        scale = hot[hot > 0].mean() if np.any(hot > 0) else 0.0
        if scale > 0:
            modulation /= scale
        # modulate first, band-limit last: the filter stopband then bounds
        # how much stochastic energy can sit below fm
        noise = sigma * rng.standard_normal(n) * modulation * voiced
        noise = _zero_phase(
            noise, _band_split_fir(model.fm, sample_rate, high=True)
        )
        exc = det + noise

    fade = int(round(0.005 * sample_rate))
    w = _voiced_weight(voiced, fade)
    unvoiced_noise = sigma * rng.standard_normal(n)
    return exc * w + unvoiced_noise * (1.0 - w)


def _sample_runs(mask: np.ndarray):
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
    return zip(edges[::2], edges[1::2])


def synthesize(
    params: ParameterStream,
    model: DsmVoiceModel,
    seed: int = 0,
    sample_rate: int = 16000,
    alpha: float = DEFAULT_ALPHA,
) -> SampleBuffer:
    if params.vocoder_id != "dsm":
        raise ValueError(f"expected a dsm parameter stream, got {params.vocoder_id!r}")
    voiced_f0 = params.frames[params.frames[:, 0] > 0, 0]
    if voiced_f0.size and voiced_f0.max() > model.fm / 2.0:
        warnings.warn(
            f"f0 reaches {voiced_f0.max():.0f} Hz; above fm/2 = {model.fm / 2:.0f} Hz "
            "the deterministic band holds fewer than two harmonics",
            stacklevel=2,
        )
    hop = int(round(params.frame_period * sample_rate))
    n_samples = (len(params) - 1) * hop
    track = F0Track(values=params.frames[:, 0], frame_period=params.frame_period)
    f0_ps = track.per_sample(sample_rate, n_samples)
    rng = np.random.default_rng(seed)
    exc = dsm_excitation(f0_ps, model, sample_rate, rng)
    stream = [
        MgcCoefficients(values=row[1:], alpha=alpha, sample_rate=sample_rate)
        for row in params.frames
    ]
    return mglsa_filter(
        SampleBuffer(samples=exc, sample_rate=sample_rate),
        stream,
        params.frame_period,
    )


def save_voice_model(path, model: DsmVoiceModel) -> None:
    meta = np.zeros(model.reference_length)
    meta[0] = model.fm
    meta[1] = model.reference_f0
    stream = ParameterStream(
        vocoder_id="dsm-model",
        frame_period=1.0 / model.sample_rate,
        frames=np.vstack([model.eigen_residual, model.noise_envelope, meta]),
    )
    write_params(path, stream)


def load_voice_model(path) -> DsmVoiceModel:
    stream = read_params(path)
    if stream.vocoder_id != "dsm-model":
        raise FormatError(
            f"expected a dsm-model stream, got {stream.vocoder_id!r}"
        )
    eig = stream.frames[0]
    norm = np.linalg.norm(eig)
    if norm <= 0:
        raise FormatError("stored eigen_residual is all zero")
    return DsmVoiceModel(
        eigen_residual=eig / norm,
        noise_envelope=np.maximum(stream.frames[1], 0.0),
        fm=float(stream.frames[2, 0]),
        reference_f0=float(stream.frames[2, 1]),
        sample_rate=int(round(1.0 / stream.frame_period)),
    )
