"""Spectral envelope machinery shared by the vocoders.

Mel-cepstral analysis of frames, the MGLSA synthesis/inverse filter, direct
envelope evaluation, and regularized discrete-cepstrum fitting of harmonic
amplitudes.

Conventions used throughout:

* the envelope is ``log|H(w)| = sum_m c_m cos(m * warp(w))`` in natural log,
  calibrated so a tone of amplitude A reads log(A) at its frequency;
* the associated minimum-phase response has phase
  ``-sum_{m>=1} c_m sin(m * warp(w))``;
* ``warp(w) = w + 2 atan(alpha sin w / (1 - alpha cos w))`` is the usual
  all-pass frequency warp (inverse: negate alpha).

Only the gamma = 0 (mel-cepstral) path of the generalized analysis is
implemented; the synthesis filter approximates each exponential section by a
5th-order Pade fraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dsp import Frame, SampleBuffer, frame_count, next_pow2

DEFAULT_ALPHA = 0.42
MGC_ORDER = 24
HNM_CEPSTRUM_ORDER = 39

# c_0 marker for all-silent frames; exp(-100) underflows any audible level
SILENCE_C0 = -100.0

LOG_TO_DB = 20.0 / math.log(10.0)

# Pade [5/5] numerator coefficients of exp(w)
_PADE5 = np.array(
    [1.0, 1.0 / 2.0, 1.0 / 9.0, 1.0 / 72.0, 1.0 / 1008.0, 1.0 / 30240.0]
)


class UnsupportedGammaError(ValueError):
    """Raised for gamma != 0: only the mel-cepstral path exists here."""


@dataclass(frozen=True)
class MgcCoefficients:
    """Mel-generalized cepstrum of one frame (gamma = 0 in this package)."""

    values: np.ndarray
    alpha: float
    gamma: float = 0.0
    sample_rate: int = 16000

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("coefficient vector must be 1-D and non-empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficients must be finite")
        if not -1.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (-1, 1), got {self.alpha}")

    @property
    def order(self) -> int:
        return self.values.size - 1

    @property
    def is_silence(self) -> bool:
        return self.values[0] <= SILENCE_C0


@dataclass(frozen=True)
class MelCepstrum:
    """Mel-cepstrum fitted to discrete harmonic amplitudes."""

    values: np.ndarray
    alpha: float
    sample_rate: int = 16000

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("coefficient vector must be 1-D and non-empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficients must be finite")
        if not -1.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (-1, 1), got {self.alpha}")

    @property
    def order(self) -> int:
        return self.values.size - 1


def warp_frequency(omega, alpha: float):
    """All-pass warp of angular frequency; negate alpha to unwarp."""
    w = np.asarray(omega, dtype=np.float64)
    return w + 2.0 * np.arctan2(alpha * np.sin(w), 1.0 - alpha * np.cos(w))


# ------------------------------------------------------------------ analysis


_BASIS_CACHE: dict[tuple[int, int, float], tuple[np.ndarray, np.ndarray]] = {}


def _cosine_basis(n_bins: int, order: int, alpha: float):
    """(basis, projector): basis[i, m] = cos(m * warp(w_i)); projector is the
    least-squares solve matrix."""
    key = (n_bins, order, alpha)
    cached = _BASIS_CACHE.get(key)
    if cached is not None:
        return cached
    omega = np.linspace(0.0, np.pi, n_bins)
    warped = warp_frequency(omega, alpha)
    basis = np.cos(np.outer(warped, np.arange(order + 1)))
    projector = np.linalg.solve(basis.T @ basis, basis.T)
    _BASIS_CACHE[key] = (basis, projector)
    return basis, projector


def mgc_analyze(
    frame: Frame,
    order: int = MGC_ORDER,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = 0.0,
    sample_rate: int = 16000,
    nfft: int | None = None,
    max_iterations: int = 40,
    min_freq: float = 0.0,
) -> MgcCoefficients:
    """Fit a warped-cepstrum envelope to one (windowed) frame.

    The fit starts from the least-squares cepstral smoothing of the log
    amplitude spectrum and is lifted iteratively so that the envelope tracks
    spectral peaks instead of averaging across harmonic dips. A silent frame
    returns the c_0 = SILENCE_C0 marker.

    min_freq > 0 holds the fit target flat below that frequency. Voiced
    callers pass a bit under f0: the spectrum's cliff below the first
    harmonic otherwise makes the finite cosine series ring above it.
    """
    if gamma != 0.0:
        raise UnsupportedGammaError(
            f"gamma = {gamma} is not supported; only the mel-cepstral path "
            "(gamma = 0) is implemented"
        )
    x = frame.samples
    if x.size == 0 or frame.energy <= 1e-20:
        values = np.zeros(order + 1)
        values[0] = SILENCE_C0
        return MgcCoefficients(values=values, alpha=alpha, sample_rate=sample_rate)
    if nfft is None:
        nfft = next_pow2(2 * x.size)
    scale = 2.0 / (frame.window_sum if frame.window_sum > 0 else x.size)
    mag = np.abs(np.fft.rfft(x, nfft)) * scale
    # clamp 140 dB below the peak so spectral nulls cannot drag the fit to -inf
    floor = max(mag.max() * 1e-7, 1e-12)
    target = np.log(np.maximum(mag, floor))
    if min_freq > 0:
        k0 = int(np.ceil(min_freq * nfft / sample_rate))
        if 0 < k0 < target.size:
            target[:k0] = target[k0]

    basis, projector = _cosine_basis(target.size, order, alpha)
    coefficients = projector @ target
    lifted = target
    for _ in range(max_iterations):
        envelope = basis @ coefficients
        gap = target - envelope
        if gap.max() < 1e-4:
            break
        lifted = np.maximum(lifted, envelope)
        coefficients = projector @ lifted
    return MgcCoefficients(values=coefficients, alpha=alpha, sample_rate=sample_rate)


def envelope_eval(cepstrum, freqs) -> np.ndarray:
    """Envelope log-amplitude in dB at the given frequencies (Hz)."""
    freqs = np.asarray(freqs, dtype=np.float64)
    omega = 2.0 * np.pi * freqs / cepstrum.sample_rate
    warped = warp_frequency(omega, cepstrum.alpha)
    m = np.arange(cepstrum.values.size)
    return (np.cos(np.outer(warped, m)) @ cepstrum.values) * LOG_TO_DB


def min_phase_eval(cepstrum, freqs) -> np.ndarray:
    """Minimum-phase response (radians) matching envelope_eval's amplitude."""
    freqs = np.asarray(freqs, dtype=np.float64)
    omega = 2.0 * np.pi * freqs / cepstrum.sample_rate
    warped = warp_frequency(omega, cepstrum.alpha)
    m = np.arange(cepstrum.values.size)
    return -(np.sin(np.outer(warped, m)) @ cepstrum.values)


# ---------------------------------------------------------- discrete cepstrum


def fit_discrete_cepstrum(
    harmonic_freqs,
    harmonic_log_amps,
    order: int = HNM_CEPSTRUM_ORDER,
    alpha: float = DEFAULT_ALPHA,
    regularization_weight: float = 2e-4,
    sample_rate: int = 16000,
    weights=None,
    condition_limit: float = 1e12,
) -> MelCepstrum:
    """Regularized least-squares cepstrum through (frequency, dB) points.

    The penalty is the envelope's curvature over warped frequency, which for
    the cosine basis is diagonal in the coefficients; orders are scaled
    relative to the highest one so the weight trades fit against smoothness
    on comparable footing. harmonic_log_amps are in dB.
    """
    freqs = np.asarray(harmonic_freqs, dtype=np.float64)
    amps_db = np.asarray(harmonic_log_amps, dtype=np.float64)
    if freqs.size != amps_db.size:
        raise ValueError("frequency and amplitude counts differ")
    if freqs.size < 2:
        raise ValueError(f"need at least 2 harmonics, got {freqs.size}")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("harmonic frequencies must be strictly increasing")
    nyquist = sample_rate / 2.0
    if freqs[0] <= 0 or freqs[-1] >= nyquist:
        raise ValueError(f"harmonic frequencies must lie in (0, {nyquist:g}) Hz")

    target = amps_db / LOG_TO_DB  # natural log amplitudes
    omega = 2.0 * np.pi * freqs / sample_rate
    warped = warp_frequency(omega, alpha)
    m = np.arange(order + 1)
    basis = np.cos(np.outer(warped, m))
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.size != freqs.size or np.any(w < 0):
            raise ValueError("weights must be non-negative, one per harmonic")
        basis_w = basis * w[:, None]
        normal = basis.T @ basis_w
        rhs = basis_w.T @ target
        scale = w.sum() if w.sum() > 0 else 1.0
    else:
        normal = basis.T @ basis
        rhs = basis.T @ target
        scale = float(freqs.size)
    lam = regularization_weight
    penalty = np.zeros(order + 1)
    penalty[1:] = lam * (m[1:].astype(np.float64) / order) ** 4
    system = (1.0 - lam) * normal / scale + np.diag(penalty)
    rhs = (1.0 - lam) * rhs / scale
    condition = np.linalg.cond(system)
    if condition > condition_limit:
        raise ValueError(
            f"discrete cepstrum system is ill-conditioned: "
            f"condition estimate {condition:.3e} exceeds {condition_limit:.0e}"
        )
    values = np.linalg.solve(system, rhs)
    return MelCepstrum(values=values, alpha=alpha, sample_rate=sample_rate)


# ------------------------------------------------------------ MGLSA filtering


def _b_transform(c: np.ndarray, alpha: float) -> np.ndarray:
    """Map cepstral coefficients to the filter coefficients of the warped
    delay-line realization (invertible linear triangular transform)."""
    b = np.array(c, dtype=np.float64)
    for m in range(b.size - 2, -1, -1):
        b[m] = c[m] - alpha * b[m + 1]
    return b


@njit(cache=True)
def _mglsa_run(
    x, brows, period_samples, alpha, pade, sign, rep_a, rep_b
):  # pragma: no cover
    """Time-varying exp-filter cascade.

    Each exponential section is a Pade-5 fraction, accurate only while the
    section transfer norm stays small; rep_a/rep_b split the two sections
    into that many identical sub-sections (exp(F) = exp(F/k)^k) so large
    envelopes stay inside the accurate range.
    """
    n_samples = x.size
    n_frames = brows.shape[0]
    order = brows.shape[1] - 1
    n_pade = pade.size - 1
    one_minus_a2 = 1.0 - alpha * alpha

    y = np.empty(n_samples)
    # stage A (b_1 section): per sub-section and Pade tap, one warped-delay
    # state + chain input memory
    sa = np.zeros((rep_a, n_pade + 1))
    da_prev = np.zeros((rep_a, n_pade + 1))
    # stage B (b_2..b_M section): full warped chain per sub-section and tap
    sb = np.zeros((rep_b, n_pade + 1, order + 1))
    db_prev = np.zeros((rep_b, n_pade + 1))

    brow = np.empty(order + 1)
    e_taps = np.zeros(n_pade + 1)

    for n in range(n_samples):
        pos = n / period_samples
        f = int(pos)
        if f >= n_frames - 1:
            f = n_frames - 1
            w = 0.0
        else:
            w = pos - f
        if w == 0.0:
            for m in range(order + 1):
                brow[m] = sign * brows[f, m]
        else:
            for m in range(order + 1):
                brow[m] = sign * ((1.0 - w) * brows[f, m] + w * brows[f + 1, m])

        v = x[n]
        b1 = brow[1] / rep_a

        # ---- stage A: exp(b1 * Phi_1), rep_a sub-sections
        for r in range(rep_a):
            u = v
            acc_num = 0.0
            acc_den = 0.0
            for k in range(1, n_pade + 1):
                sa[r, k] = alpha * sa[r, k] + one_minus_a2 * da_prev[r, k - 1]
                e = b1 * sa[r, k]
                if k % 2 == 1:
                    acc_den -= pade[k] * e
                else:
                    acc_den += pade[k] * e
                e_taps[k] = e
            u = u - acc_den
            for k in range(1, n_pade + 1):
                acc_num += pade[k] * e_taps[k]
            v = u + acc_num
            for k in range(n_pade, 0, -1):
                da_prev[r, k] = e_taps[k]
            da_prev[r, 0] = u

        # ---- stage B: exp(sum_{m>=2} b_m Phi_m), rep_b sub-sections
        for r in range(rep_b):
            u = v
            acc_num = 0.0
            acc_den = 0.0
            for k in range(1, n_pade + 1):
                # advance this tap's warped chain by one sample
                s_prev_old = sb[r, k, 1]
                sb[r, k, 1] = alpha * sb[r, k, 1] + one_minus_a2 * db_prev[r, k - 1]
                e = 0.0
                s_cur_prev = sb[r, k, 1]
                for m in range(2, order + 1):
                    s_old = sb[r, k, m]
                    sb[r, k, m] = alpha * s_old + s_prev_old - alpha * s_cur_prev
                    s_prev_old = s_old
                    s_cur_prev = sb[r, k, m]
                    e += brow[m] * sb[r, k, m]
                e /= rep_b
                if k % 2 == 1:
                    acc_den -= pade[k] * e
                else:
                    acc_den += pade[k] * e
                e_taps[k] = e
            u = u - acc_den
            for k in range(1, n_pade + 1):
                acc_num += pade[k] * e_taps[k]
            v = u + acc_num
            for k in range(n_pade, 0, -1):
                db_prev[r, k] = e_taps[k]
            db_prev[r, 0] = u

        y[n] = math.exp(brow[0]) * v
    return y


# largest section transfer norm the Pade-5 fraction reproduces accurately
_SECTION_NORM_LIMIT = 4.0

_PHI_GRID_CACHE: dict = {}


def _phi_grid(order: int, alpha: float, n_points: int = 128) -> np.ndarray:
    """Warped basis responses Phi_m(e^{jw}) on a frequency grid.

    Used to bound each exponential section's transfer norm so the filter can
    decide how many sub-sections it needs.
    """
    key = (order, alpha, n_points)
    cached = _PHI_GRID_CACHE.get(key)
    if cached is not None:
        return cached
    w = np.linspace(0.0, np.pi, n_points)
    z_inv = np.exp(-1j * w)
    phi = np.empty((order + 1, n_points), dtype=complex)
    phi[0] = 1.0
    if order >= 1:
        phi[1] = (1.0 - alpha * alpha) * z_inv / (1.0 - alpha * z_inv)
    zhat_inv = (z_inv - alpha) / (1.0 - alpha * z_inv)
    for m in range(2, order + 1):
        phi[m] = phi[m - 1] * zhat_inv
    _PHI_GRID_CACHE[key] = phi
    return phi


def _section_reps(rows: np.ndarray, alpha: float) -> tuple[int, int]:
    """Sub-section counts for the two exponential stages.

    exp(F) = exp(F/k)^k: splitting costs k times the work but shrinks the
    argument the Pade fraction sees, keeping it accurate for the large
    envelopes real vowels produce.
    """
    order = rows.shape[1] - 1
    phi = _phi_grid(order, alpha)
    norm_a = 0.0
    if order >= 1:
        norm_a = float(np.abs(rows[:, 1]).max() * np.abs(phi[1]).max())
    norm_b = 0.0
    if order >= 2:
        norm_b = float(np.abs(rows[:, 2:] @ phi[2:]).max())
    rep_a = max(1, int(math.ceil(norm_a / _SECTION_NORM_LIMIT)))
    rep_b = max(1, int(math.ceil(norm_b / _SECTION_NORM_LIMIT)))
    return rep_a, rep_b


def _stack_b_rows(coefficients, alpha: float) -> np.ndarray:
    rows = np.empty((len(coefficients), coefficients[0].values.size))
    for i, c in enumerate(coefficients):
        if c.values.size != rows.shape[1]:
            raise ValueError("all coefficient frames must share one order")
        if c.alpha != alpha:
            raise ValueError("all coefficient frames must share one alpha")
        rows[i] = _b_transform(c.values, alpha)
    return rows


def _check_stream(buffer: SampleBuffer, coefficients, frame_period: float) -> None:
    expected = frame_count(len(buffer), buffer.sample_rate, frame_period)
    if len(coefficients) != expected:
        raise ValueError(
            f"coefficient stream holds {len(coefficients)} frames, "
            f"{expected} cover {len(buffer)} samples at period {frame_period:g}"
        )


def mglsa_filter(
    excitation: SampleBuffer, coefficients, frame_period: float
) -> SampleBuffer:
    """Shape an excitation with the envelope stream (time-varying filter).

    Coefficients are interpolated linearly between frame centers, sample by
    sample.
    """
    if not len(coefficients):
        raise ValueError("empty coefficient stream")
    _check_stream(excitation, coefficients, frame_period)
    alpha = coefficients[0].alpha
    rows = _stack_b_rows(coefficients, alpha)
    rep_a, rep_b = _section_reps(rows, alpha)
    y = _mglsa_run(
        excitation.samples,
        rows,
        frame_period * excitation.sample_rate,
        alpha,
        _PADE5,
        1.0,
        rep_a,
        rep_b,
    )
    return SampleBuffer(samples=y, sample_rate=excitation.sample_rate)


def mgc_inverse_filter(
    buffer: SampleBuffer, coefficients, frame_period: float
) -> SampleBuffer:
    """Remove the envelope stream's contribution, leaving the residual."""
    if not len(coefficients):
        raise ValueError("empty coefficient stream")
    _check_stream(buffer, coefficients, frame_period)
    alpha = coefficients[0].alpha
    rows = _stack_b_rows(coefficients, alpha)
    # a silence marker would invert to a gain of exp(+100); treat those
    # frames as unity gain instead (the signal there is silent anyway)
    for i, c in enumerate(coefficients):
        if c.is_silence:
            rows[i] = 0.0
    rep_a, rep_b = _section_reps(rows, alpha)
    y = _mglsa_run(
        buffer.samples,
        rows,
        frame_period * buffer.sample_rate,
        alpha,
        _PADE5,
        -1.0,
        rep_a,
        rep_b,
    )
    return SampleBuffer(samples=y, sample_rate=buffer.sample_rate)
