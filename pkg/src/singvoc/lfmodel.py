"""Liljencrants-Fant glottal flow derivative model.

Supplies the default stored pulse for the glottal vocoder and the reference
pulse shape used by synthetic constructions. Parameters follow Fant's R
notation; defaults are a standard modal voice.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def lf_pulse_period(
    f0: float,
    sample_rate: int,
    ra: float = 0.01,
    rk: float = 0.30,
    rg: float = 1.20,
) -> np.ndarray:
    """One period of the LF flow derivative, main excursion negative at te.

    ra, rk, rg are Fant's shape parameters: return-phase duration, skewness
    and glottal-frequency ratios. The waveform integrates to ~0 (closed-flow
    balance) and is scaled so the negative peak is -1.
    """
    if f0 <= 0:
        raise ValueError("f0 must be positive")
    t0 = 1.0 / f0
    tp = t0 / (2.0 * rg)
    te = tp * (1.0 + rk)
    ta = ra * t0
    tb = t0 - te
    if te >= t0 or tp <= 0 or ta <= 0:
        raise ValueError("inconsistent LF shape parameters")

    # return-phase decay: eps * ta = 1 - exp(-eps * tb)
    eps = brentq(lambda e: e * ta - 1.0 + np.exp(-e * tb), 1e-6 / ta, 50.0 / ta)
    area_ret = -((1.0 - np.exp(-eps * tb)) / eps - tb * np.exp(-eps * tb)) / (eps * ta)

    wg = np.pi / tp

    def open_area(alpha: float) -> float:
        # integral of exp(alpha t) sin(wg t) over [0, te], unit E0
        den = alpha * alpha + wg * wg
        val = np.exp(alpha * te) * (alpha * np.sin(wg * te) - wg * np.cos(wg * te))
        return (val + wg) / den

    def balance(alpha: float) -> float:
        e0 = -1.0 / (np.exp(alpha * te) * np.sin(wg * te))
        return e0 * open_area(alpha) + area_ret

    lo, hi = 1.0, 10.0 / t0
    while balance(lo) * balance(hi) > 0 and hi < 1e7 / t0:
        hi *= 2.0
    alpha = brentq(balance, lo, hi)
    e0 = -1.0 / (np.exp(alpha * te) * np.sin(wg * te))

    n = max(4, int(round(t0 * sample_rate)))
    t = np.arange(n) / sample_rate
    pulse = np.zeros(n)
    opening = t <= te
    pulse[opening] = e0 * np.exp(alpha * t[opening]) * np.sin(wg * t[opening])
    ret = ~opening
    pulse[ret] = (
        -(np.exp(-eps * (t[ret] - te)) - np.exp(-eps * tb)) / (eps * ta)
    )
    peak = np.max(np.abs(pulse))
    if peak > 0:
        pulse = pulse / peak
    return pulse


def lf_pulse_train(
    f0: float,
    duration: float,
    sample_rate: int,
    **shape,
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated LF periods at constant f0.

    Returns (signal, gci_times): the excitation and the instants of the main
    negative excursion of each period.
    """
    period = lf_pulse_period(f0, sample_rate, **shape)
    n_total = int(round(duration * sample_rate))
    reps = n_total // period.size + 2
    signal = np.tile(period, reps)[:n_total]
    te_index = int(np.argmin(period))
    gcis = []
    k = 0
    while k * period.size + te_index < n_total:
        gcis.append((k * period.size + te_index) / sample_rate)
        k += 1
    return signal, np.asarray(gcis)
