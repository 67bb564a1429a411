"""Objective diagnostics for resynthesized singing voice.

Two kinds of tooling live here. The distortion metrics
(log_spectral_distortion, mel_cepstral_distortion, segmental_snr) compare a
resynthesis against its reference signal. The artifact detectors inspect a
single analysis frame for the failure modes that appear once the pitch gets
high: harmonics swallowed by an envelope fit, spurious peaks between
harmonics, envelopes that memorized the harmonic comb instead of the vocal
tract, and maximum-voiced-frequency estimates that cut off harmonics which
are still clearly tonal. diagnose() runs all detectors over a whole
recording and returns one report per voiced frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import (
    F0Track,
    Frame,
    SampleBuffer,
    SpectrumFrame,
    amplitude_spectrum,
    make_window,
    next_pow2,
)
from .envelope import MgcCoefficients, envelope_eval, mgc_analyze
from .hnm import HarmonicFrame, estimate_fm, harmonic_analysis

METRIC_WINDOW_SECONDS = 0.025
METRIC_HOP_SECONDS = 0.0125

SNR_CAP_DB = 99.0
SNR_FLOOR_DB = -99.0

# box-smoothing width for the log-spectral distortion; wide enough that the
# comparison reads envelope mismatch rather than harmonic bin alignment
LSD_SMOOTH_HZ = 100.0

WEAK_HARMONIC_THRESHOLD_DB = 25.0
# a higher harmonic this close to the neighborhood level counts as the
# spectrum recovering after a dip; least-squares amplitudes never land
# exactly on the median, so strict comparison would flicker
WEAK_RECOVERY_SLACK_DB = 1.0

INTERHARMONIC_GATE_DB = 10.0
# harmonic anchors further than this below the frame's strongest harmonic
# are treated as absent; comparing against them would measure sidelobe
# floor against sidelobe floor
INTERHARMONIC_ANCHOR_FLOOR_DB = 60.0

# a harmonic within this margin of the frame's strongest still counts as
# live tonal content when checking the fm estimate against the spectrum
FM_RISK_MARGIN_DB = 20.0

_DB_TINY = 1e-12


def _paired_samples(
    reference: SampleBuffer, test: SampleBuffer
) -> tuple[np.ndarray, np.ndarray, int]:
    """Trim both buffers to their common length, rejecting empty overlap."""
    if reference.sample_rate != test.sample_rate:
        raise ValueError(
            f"sample rates differ: reference {reference.sample_rate} Hz, "
            f"test {test.sample_rate} Hz"
        )
    n = min(len(reference), len(test))
    if n == 0:
        raise ValueError("reference and test share no samples to compare")
    return reference.samples[:n], test.samples[:n], reference.sample_rate


def _metric_geometry(n: int, sample_rate: int) -> tuple[int, int]:
    win = min(int(round(METRIC_WINDOW_SECONDS * sample_rate)), n)
    hop = max(int(round(METRIC_HOP_SECONDS * sample_rate)), 1)
    return max(win, 1), hop


def log_spectral_distortion(
    reference: SampleBuffer,
    test: SampleBuffer,
    band: tuple[float, float] | None = None,
    smooth_hz: float = LSD_SMOOTH_HZ,
) -> float:
    """Frame-averaged RMS gap between smoothed log power spectra, in dB.

    Both signals are cut into 25 ms hann frames with 50% overlap. Each
    frame's power spectrum is box-smoothed over roughly smooth_hz before
    the spectra are compared in dB, so slowly varying envelope error shows
    up while harmonic-by-harmonic phase and alignment detail does not.

    band is an inclusive (low_hz, high_hz) range; None means all of
    [0, Nyquist]. Frames where the reference is silent are skipped, and two
    silent signals compare as 0. Identical signals give exactly 0 and a
    pure gain of g gives |20 log10 g| at every frame.
    """
    x, y, fs = _paired_samples(reference, test)
    lo, hi = band if band is not None else (0.0, fs / 2.0)
    if hi <= lo:
        raise ValueError(f"band ({lo}, {hi}) is empty")
    win, hop = _metric_geometry(x.size, fs)
    window = make_window("hann", win)
    nfft = next_pow2(2 * win)
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    sel = (freqs >= lo) & (freqs <= hi)
    if not np.any(sel):
        raise ValueError(f"band ({lo}, {hi}) Hz selects no frequency bins")
    width = max(1, int(round(smooth_hz * nfft / fs)))
    kernel = np.ones(width) / width

    ref_spectra = []
    test_spectra = []
    for start in range(0, x.size - win + 1, hop):
        a = x[start : start + win] * window
        b = y[start : start + win] * window
        ref_spectra.append(np.abs(np.fft.rfft(a, nfft)) ** 2)
        test_spectra.append(np.abs(np.fft.rfft(b, nfft)) ** 2)

    powers = [p.sum() for p in ref_spectra]
    loudest = max(powers) if powers else 0.0
    if loudest <= 0.0:
        return 0.0
    gaps = []
    for p_ref, p_test, power in zip(ref_spectra, test_spectra, powers):
        if power <= 1e-10 * loudest:
            continue
        s_ref = np.convolve(p_ref, kernel, mode="same")
        s_test = np.convolve(p_test, kernel, mode="same")
        # per-spectrum relative floor keeps the metric scale invariant
        d_ref = 10.0 * np.log10(np.maximum(s_ref, s_ref.max() * 1e-14))
        d_test = 10.0 * np.log10(np.maximum(s_test, s_test.max() * 1e-14))
        gap = d_ref[sel] - d_test[sel]
        gaps.append(np.sqrt(np.mean(gap * gap)))
    return float(np.mean(gaps)) if gaps else 0.0


def mel_cepstral_distortion(
    reference: SampleBuffer, test: SampleBuffer
) -> float:
    """Frame-averaged mel-cepstral distortion in dB.

    Each 25 ms hann frame is fitted with the package's warped-cepstrum
    envelope and the usual (10 / ln 10) * sqrt(2 * sum dc^2) distance is
    taken over coefficients 1..order. Frames silent on either side are
    skipped; no usable frames at all compares as 0.
    """
    x, y, fs = _paired_samples(reference, test)
    win, hop = _metric_geometry(x.size, fs)
    window = make_window("hann", win)
    wsum = float(window.sum())
    scale = 10.0 / np.log(10.0) * np.sqrt(2.0)

    gaps = []
    index = 0
    for start in range(0, x.size - win + 1, hop):
        center = (start + win // 2) / fs
        fa = Frame(x[start : start + win] * window, center, index, wsum)
        fb = Frame(y[start : start + win] * window, center, index, wsum)
        index += 1
        ca = mgc_analyze(fa, sample_rate=fs)
        cb = mgc_analyze(fb, sample_rate=fs)
        if ca.is_silence or cb.is_silence:
            continue
        d = ca.values[1:] - cb.values[1:]
        gaps.append(scale * np.sqrt(np.dot(d, d)))
    return float(np.mean(gaps)) if gaps else 0.0


def segmental_snr(reference: SampleBuffer, test: SampleBuffer) -> float:
    """Mean per-frame SNR in dB over rectangular 25 ms frames, 50% overlap.

    Each frame is clamped to [-99, 99]; a perfect match hits the cap and a
    test equal to twice the reference lands at exactly 0. Frames with a
    silent reference are skipped.
    """
    x, y, fs = _paired_samples(reference, test)
    win, hop = _metric_geometry(x.size, fs)
    values = []
    for start in range(0, x.size - win + 1, hop):
        r = x[start : start + win]
        t = y[start : start + win]
        signal = float(np.dot(r, r))
        if signal <= 0.0:
            continue
        err = r - t
        noise = float(np.dot(err, err))
        if noise <= 0.0:
            values.append(SNR_CAP_DB)
        else:
            snr = 10.0 * np.log10(signal / noise)
            values.append(float(np.clip(snr, SNR_FLOOR_DB, SNR_CAP_DB)))
    if not values:
        return SNR_CAP_DB if np.array_equal(x, y) else SNR_FLOOR_DB
    return float(np.mean(values))


def detect_weak_harmonics(
    harmonics: HarmonicFrame,
    threshold_db: float = WEAK_HARMONIC_THRESHOLD_DB,
) -> list[int]:
    """Harmonic numbers (1-based) buried threshold_db below their neighborhood.

    The neighborhood level of harmonic k is the median amplitude of its
    four nearest neighbors. A dip only counts while some higher harmonic
    rises back to that level (within WEAK_RECOVERY_SLACK_DB), so an
    ordinary rolloff tail never triggers. Fewer than five harmonics cannot
    form a neighborhood and give an empty list.
    """
    amps = np.asarray(harmonics.amplitudes, dtype=np.float64)
    n = amps.size
    if n < 5:
        return []
    db = 20.0 * np.log10(np.maximum(amps, _DB_TINY))
    weak = []
    for k in range(n):
        lo = min(max(k - 2, 0), n - 5)
        neighbors = [j for j in range(lo, lo + 5) if j != k]
        level = float(np.median(db[neighbors]))
        if db[k] > level - threshold_db:
            continue
        if np.any(db[k + 1 :] > level - WEAK_RECOVERY_SLACK_DB):
            weak.append(k + 1)
    return weak


@dataclass(frozen=True)
class InterharmonicPeak:
    """One spurious spectral peak between harmonics.

    frequency is in Hz. relative_db compares the peak against the mean
    level of its two neighboring harmonics; negative means quieter.
    """

    frequency: float
    relative_db: float


def _window_peak(
    freqs: np.ndarray, mag: np.ndarray, center: float, half_width: float
) -> int | None:
    sel = np.flatnonzero(np.abs(freqs - center) <= half_width)
    if sel.size == 0:
        return None
    return int(sel[np.argmax(mag[sel])])


def detect_interharmonics(
    spectrum: SpectrumFrame,
    f0: float,
    min_rel_amp_db: float = INTERHARMONIC_GATE_DB,
) -> list[InterharmonicPeak]:
    """Peaks near half-integer multiples of f0 that rival their neighbors.

    For every (k + 1/2) f0 with both flanking harmonics below Nyquist, the
    strongest bin within f0/8 of the half-integer frequency is checked. It
    is reported when it is a local maximum of the spectrum and lies within
    min_rel_amp_db of the mean dB level of the harmonics at k f0 and
    (k + 1) f0. Slots whose anchor harmonics have dropped more than
    INTERHARMONIC_ANCHOR_FLOOR_DB below the strongest harmonic are skipped:
    past the last real harmonic there is nothing to compare against. A
    clean harmonic spectrum leaves only window sidelobes between harmonics,
    far below any reasonable gate.
    """
    if f0 <= 0:
        raise ValueError(f"f0 must be positive, got {f0}")
    freqs = spectrum.freqs
    mag = spectrum.magnitude
    nyquist = float(freqs[-1])

    anchors = {}
    k = 1
    while k * f0 < nyquist:
        idx = _window_peak(freqs, mag, k * f0, f0 / 8.0)
        if idx is not None:
            anchors[k] = float(mag[idx])
        k += 1
    if not anchors:
        return []
    floor = max(anchors.values()) * 10.0 ** (-INTERHARMONIC_ANCHOR_FLOOR_DB / 20.0)

    found = []
    k = 1
    while (k + 1) * f0 < nyquist:
        peak = _window_peak(freqs, mag, (k + 0.5) * f0, f0 / 8.0)
        low = anchors.get(k)
        high = anchors.get(k + 1)
        k += 1
        if peak is None or low is None or high is None:
            continue
        if low < floor or high < floor:
            continue
        if peak <= 0 or peak >= mag.size - 1:
            continue
        if mag[peak] <= mag[peak - 1] or mag[peak] <= mag[peak + 1]:
            continue
        level = 20.0 * np.log10(max(mag[peak], _DB_TINY))
        anchor = 0.5 * (
            20.0 * np.log10(max(low, _DB_TINY))
            + 20.0 * np.log10(max(high, _DB_TINY))
        )
        relative = level - anchor
        if relative >= -min_rel_amp_db:
            found.append(InterharmonicPeak(float(freqs[peak]), float(relative)))
    return found


def envelope_pitch_leakage(mgc: MgcCoefficients, f0: float) -> float:
    """How much a fitted envelope remembers the harmonic comb, in dB.

    Mean gap between the envelope evaluated at k f0 and at (k + 1/2) f0
    for k = 1, 2, 3. A flat envelope scores 0 and an envelope that traced
    the harmonics scores their full comb depth. Positive values mean the
    fit dips between harmonics, which resynthesis at a new pitch turns
    into audible level error.
    """
    if f0 <= 0:
        raise ValueError(f"f0 must be positive, got {f0}")
    top = 3.5 * f0
    if top > mgc.sample_rate / 2.0:
        raise ValueError(
            f"probe point {top:.0f} Hz exceeds Nyquist for "
            f"sample rate {mgc.sample_rate}"
        )
    ks = np.array([1.0, 2.0, 3.0])
    on = envelope_eval(mgc, ks * f0)
    off = envelope_eval(mgc, (ks + 0.5) * f0)
    return float(np.mean(on - off))


@dataclass(frozen=True)
class DiagnosticReport:
    """Artifact summary for one voiced analysis frame."""

    frame_index: int
    time: float
    f0: float
    weak_harmonic_indices: tuple[int, ...]
    interharmonic_peaks: tuple[InterharmonicPeak, ...]
    envelope_leakage_score: float
    fm_underestimation_risk: bool

    def to_line(self) -> str:
        """One tab-separated record; '-' marks empty detector fields."""
        weak = ",".join(str(i) for i in self.weak_harmonic_indices) or "-"
        inter = (
            ";".join(
                f"{p.frequency:.1f}Hz{p.relative_db:+.1f}dB"
                for p in self.interharmonic_peaks
            )
            or "-"
        )
        return "\t".join(
            [
                str(self.frame_index),
                f"{self.time:.3f}",
                f"{self.f0:.1f}",
                weak,
                inter,
                f"{self.envelope_leakage_score:.2f}",
                "1" if self.fm_underestimation_risk else "0",
            ]
        )


DIAGNOSTIC_HEADER = "\t".join(
    ["frame", "time_s", "f0_hz", "weak_harmonics", "interharmonics",
     "envelope_leakage_db", "fm_risk"]
)


def _centered_segment(samples: np.ndarray, center: int, length: int) -> np.ndarray:
    start = center - length // 2
    seg = np.zeros(length)
    lo = max(start, 0)
    hi = min(start + length, samples.size)
    if hi > lo:
        seg[lo - start : hi - start] = samples[lo:hi]
    return seg


def diagnose(
    buffer: SampleBuffer,
    track: F0Track,
    weak_threshold_db: float = WEAK_HARMONIC_THRESHOLD_DB,
    interharmonic_gate_db: float = INTERHARMONIC_GATE_DB,
) -> list[DiagnosticReport]:
    """Run every artifact detector over all voiced frames of a recording.

    Each voiced frame gets a 4.5-period raw segment for the harmonic fit
    and spectrum, and a hann-windowed warped-cepstrum fit for the leakage
    score. fm_underestimation_risk is set when a harmonic still within
    FM_RISK_MARGIN_DB of the frame's strongest sits more than one harmonic
    spacing above the raw maximum-voiced-frequency estimate; one spacing is
    the estimator's own resolution, so anything inside it is not evidence.
    Unvoiced frames produce no report.
    """
    fs = buffer.sample_rate
    samples = buffer.samples
    hop = track.frame_period * fs
    reports = []
    for i, f0 in enumerate(np.asarray(track.values, dtype=np.float64)):
        if f0 <= 0:
            continue
        center = int(round(i * hop))
        length = min(int(round(4.5 * fs / f0)), samples.size)
        seg = _centered_segment(samples, center, length)
        if not np.any(seg):
            continue
        harm = harmonic_analysis(seg, f0, fs)
        spectrum = amplitude_spectrum(seg, fs)

        window = make_window("hann", length)
        mgc = mgc_analyze(
            Frame(seg * window, i * track.frame_period, i, float(window.sum())),
            sample_rate=fs,
            min_freq=0.8 * f0,
        )
        if 3.5 * f0 <= fs / 2.0:
            leakage = envelope_pitch_leakage(mgc, f0)
        else:
            leakage = 0.0

        fm, _ = estimate_fm(harm, spectrum, length, fs)
        db = 20.0 * np.log10(np.maximum(harm.amplitudes, _DB_TINY))
        strong = db >= db.max() - FM_RISK_MARGIN_DB
        harmonic_freqs = f0 * np.arange(1, harm.count + 1)
        risk = bool(np.any(strong & (harmonic_freqs > fm + f0)))

        reports.append(
            DiagnosticReport(
                frame_index=i,
                time=float(i * track.frame_period),
                f0=float(f0),
                weak_harmonic_indices=tuple(
                    detect_weak_harmonics(harm, weak_threshold_db)
                ),
                interharmonic_peaks=tuple(
                    detect_interharmonics(spectrum, f0, interharmonic_gate_db)
                ),
                envelope_leakage_score=float(leakage),
                fm_underestimation_risk=risk,
            )
        )
    return reports
