import numpy as np
import pytest
from scipy.signal import butter, lfilter

from helpers import FS, const_track, flat_vowel, tone, vowel
from singvoc.diagnostics import (
    DIAGNOSTIC_HEADER,
    detect_interharmonics,
    detect_weak_harmonics,
    diagnose,
    envelope_pitch_leakage,
    log_spectral_distortion,
    mel_cepstral_distortion,
    segmental_snr,
)
from singvoc.dsp import Frame, SampleBuffer, amplitude_spectrum, make_window
from singvoc.envelope import LOG_TO_DB, MgcCoefficients, mgc_analyze
from singvoc.hnm import harmonic_analysis, harmonic_count

GAIN_DOUBLE_DB = 20.0 * np.log10(2.0)

_clean_vowel = None


def harm_signal(f0, amps_db, n, fs=FS):
    """Cosine sum with per-harmonic levels in dB re full scale."""
    t = np.arange(n) / fs
    x = np.zeros(n)
    for k, a_db in enumerate(amps_db, start=1):
        x += 10.0 ** (a_db / 20.0) * np.cos(2.0 * np.pi * k * f0 * t + 0.3 * k)
    return x


def harmonic_frame(f0, amps_db):
    length = int(round(4.5 * FS / f0))
    return harmonic_analysis(harm_signal(f0, amps_db, length), f0, FS)


def clean_vowel():
    global _clean_vowel
    if _clean_vowel is None:
        buf, _ = vowel(110.0, 1.0)
        _clean_vowel = buf
    return _clean_vowel


def test_lsd_is_zero_for_identical_signals():
    v = clean_vowel()
    assert log_spectral_distortion(v, v) == 0.0


def test_lsd_reads_a_pure_gain_exactly():
    v = clean_vowel()
    doubled = SampleBuffer(v.samples * 2.0, FS)
    assert abs(log_spectral_distortion(v, doubled) - GAIN_DOUBLE_DB) < 1e-9


def test_lsd_band_restriction_ignores_out_of_band_error():
    # difference lives only at 7.5 kHz; the flat-source vowel keeps real
    # content under it so in-band bins are not just window skirts
    v = flat_vowel(110.0, 1.0)
    bright = SampleBuffer(v.samples + tone(7500.0, 0.05, 1.0), FS)
    banded = log_spectral_distortion(v, bright, band=(0.0, 5000.0))
    full = log_spectral_distortion(v, bright)
    assert banded < 0.1
    assert full > 10.0


def test_lsd_rejects_empty_band():
    v = clean_vowel()
    with pytest.raises(ValueError):
        log_spectral_distortion(v, v, band=(3000.0, 3000.0))


def test_metrics_reject_empty_overlap():
    empty = SampleBuffer(np.zeros(0), FS)
    with pytest.raises(ValueError):
        log_spectral_distortion(empty, clean_vowel())
    with pytest.raises(ValueError):
        segmental_snr(clean_vowel(), empty)


def test_metrics_reject_mismatched_rates():
    v = clean_vowel()
    other = SampleBuffer(v.samples, 8000)
    with pytest.raises(ValueError):
        mel_cepstral_distortion(v, other)


def test_mcd_is_zero_for_identical_signals():
    v = clean_vowel()
    assert mel_cepstral_distortion(v, v) == 0.0


def test_mcd_grows_with_spectral_distance():
    v = clean_vowel()
    rng = np.random.default_rng(5)
    noise = SampleBuffer(0.1 * rng.standard_normal(len(v)), FS)
    assert mel_cepstral_distortion(v, noise) > 4.0


def test_segsnr_caps_on_identical_signals():
    v = clean_vowel()
    assert segmental_snr(v, v) == 99.0


def test_segsnr_zero_when_test_doubles_reference():
    v = clean_vowel()
    doubled = SampleBuffer(v.samples * 2.0, FS)
    assert segmental_snr(v, doubled) == 0.0


def test_segsnr_reads_noise_twenty_db_down():
    v = clean_vowel()
    rng = np.random.default_rng(7)
    noise = rng.standard_normal(len(v))
    noise *= np.sqrt(np.dot(v.samples, v.samples) / np.dot(noise, noise)) / 10.0
    noisy = SampleBuffer(v.samples + noise, FS)
    snr = segmental_snr(v, noisy)
    assert 19.0 < snr < 21.0


def test_segsnr_skips_silent_reference_frames():
    v = clean_vowel()
    rng = np.random.default_rng(9)
    pad = np.zeros(FS // 2)
    ref = np.concatenate([pad, v.samples])
    noise = rng.standard_normal(ref.size)
    # per-sample noise power 20 dB under the voiced region's signal power
    voiced_power = np.dot(v.samples, v.samples) / len(v)
    noise *= np.sqrt(voiced_power / (np.dot(noise, noise) / ref.size)) / 10.0
    snr = segmental_snr(SampleBuffer(ref, FS), SampleBuffer(ref + noise, FS))
    # frames of pure noise over silent reference must not drag the mean down
    assert 19.0 < snr < 21.0


def test_weak_harmonic_dip_is_flagged():
    levels = np.zeros(harmonic_count(440.0, FS))
    levels[3] -= 40.0
    levels[4] -= 40.0
    assert detect_weak_harmonics(harmonic_frame(440.0, levels)) == [4, 5]


def test_weak_detector_ignores_monotone_decay():
    levels = -3.0 * np.arange(harmonic_count(440.0, FS))
    assert detect_weak_harmonics(harmonic_frame(440.0, levels)) == []


def test_weak_detector_ignores_flat_spectrum():
    levels = np.zeros(harmonic_count(440.0, FS))
    assert detect_weak_harmonics(harmonic_frame(440.0, levels)) == []


def test_weak_detector_needs_five_harmonics():
    levels = np.zeros(harmonic_count(2000.0, FS))
    assert levels.size < 5
    assert detect_weak_harmonics(harmonic_frame(2000.0, levels)) == []


def test_weak_threshold_is_adjustable():
    levels = np.zeros(harmonic_count(440.0, FS))
    levels[5] -= 20.0
    frame = harmonic_frame(440.0, levels)
    assert detect_weak_harmonics(frame) == []
    assert detect_weak_harmonics(frame, threshold_db=15.0) == [6]


def test_interharmonic_tones_are_found():
    f0, n = 440.0, 8192
    x = harm_signal(f0, np.zeros(12), n)
    x += tone(3.5 * f0, 1.0, n / FS) + tone(6.5 * f0, 1.0, n / FS)
    peaks = detect_interharmonics(amplitude_spectrum(x, FS), f0)
    assert len(peaks) == 2
    assert abs(peaks[0].frequency - 3.5 * f0) <= f0 / 8.0
    assert abs(peaks[1].frequency - 6.5 * f0) <= f0 / 8.0
    for p in peaks:
        assert abs(p.relative_db) < 3.0


def test_interharmonic_clean_signal_is_empty():
    f0, n = 440.0, 8192
    full = amplitude_spectrum(harm_signal(f0, np.zeros(harmonic_count(f0, FS)), n), FS)
    partial = amplitude_spectrum(harm_signal(f0, np.zeros(12), n), FS)
    for gate in (6.0, 10.0, 20.0):
        assert detect_interharmonics(full, f0, gate) == []
        assert detect_interharmonics(partial, f0, gate) == []


def test_interharmonic_gate_rejects_quiet_tone():
    f0, n = 440.0, 8192
    x = harm_signal(f0, np.zeros(12), n) + tone(3.5 * f0, 10.0 ** (-50.0 / 20.0), n / FS)
    assert detect_interharmonics(amplitude_spectrum(x, FS), f0) == []


def test_interharmonic_rejects_bad_f0():
    spec = amplitude_spectrum(tone(440.0, 0.5, 0.5), FS)
    with pytest.raises(ValueError):
        detect_interharmonics(spec, 0.0)


def test_leakage_flat_envelope_scores_zero():
    flat = MgcCoefficients(values=np.r_[1.0, np.zeros(24)], alpha=0.42, sample_rate=FS)
    assert envelope_pitch_leakage(flat, 200.0) == 0.0


def test_leakage_equals_comb_depth():
    # with alpha = 0 a single cosine coefficient at quefrency fs/f0 makes an
    # exact comb: +depth/2 on every harmonic, -depth/2 halfway between
    f0, depth = 200.0, 12.0
    m = FS // int(f0)
    values = np.zeros(m + 1)
    values[m] = depth / (2.0 * LOG_TO_DB)
    comb = MgcCoefficients(values=values, alpha=0.0, sample_rate=FS)
    assert abs(envelope_pitch_leakage(comb, f0) - depth) < 1e-9


def test_leakage_grows_with_pitch_for_fixed_order():
    def fitted_leak(f0):
        buf, _ = vowel(f0, 0.5)
        length = int(round(4.5 * FS / f0))
        start = len(buf) // 2
        seg = buf.samples[start : start + length]
        w = make_window("hann", length)
        mgc = mgc_analyze(
            Frame(seg * w, 0.0, 0, float(w.sum())),
            sample_rate=FS,
            min_freq=0.8 * f0,
        )
        return envelope_pitch_leakage(mgc, f0)

    low, high = fitted_leak(110.0), fitted_leak(700.0)
    assert high > low
    assert high > 10.0
    assert low < 2.0


def test_leakage_rejects_probe_past_nyquist():
    flat = MgcCoefficients(values=np.r_[1.0, np.zeros(24)], alpha=0.42, sample_rate=FS)
    with pytest.raises(ValueError):
        envelope_pitch_leakage(flat, 3000.0)


def test_diagnose_clean_vowel_stays_quiet():
    buf = clean_vowel()
    track = const_track(110.0, 1.0)
    reports = diagnose(buf, track)
    assert len(reports) == track.values.size
    mid = [r for r in reports if 0.2 < r.time < 0.8]
    assert all(r.weak_harmonic_indices == () for r in mid)
    assert all(r.interharmonic_peaks == () for r in mid)
    assert not any(r.fm_underestimation_risk for r in mid)
    assert all(abs(r.envelope_leakage_score) < 2.0 for r in mid)


def test_diagnose_flags_dipped_harmonics():
    f0, dur = 440.0, 0.5
    levels = np.zeros(harmonic_count(f0, FS))
    levels[3] -= 40.0
    levels[4] -= 40.0
    buf = SampleBuffer(0.05 * harm_signal(f0, levels, int(dur * FS)), FS)
    mid = [r for r in diagnose(buf, const_track(f0, dur)) if 0.1 < r.time < 0.4]
    assert mid
    assert all(r.weak_harmonic_indices == (4, 5) for r in mid)
    assert not any(r.fm_underestimation_risk for r in mid)


def test_diagnose_flags_interharmonic_tones():
    f0, dur = 440.0, 0.5
    n = int(dur * FS)
    x = harm_signal(f0, np.zeros(12), n)
    x += tone(3.5 * f0, 1.0, dur) + tone(6.5 * f0, 1.0, dur)
    buf = SampleBuffer(0.05 * x, FS)
    mid = [r for r in diagnose(buf, const_track(f0, dur)) if 0.1 < r.time < 0.4]
    assert mid
    for r in mid:
        ratios = tuple(round(p.frequency / f0, 1) for p in r.interharmonic_peaks)
        assert ratios == (3.5, 6.5)


def test_diagnose_flags_fm_risk_when_top_is_noise():
    f0, dur = 440.0, 0.5
    n = int(dur * FS)
    rng = np.random.default_rng(11)
    low = harm_signal(f0, np.zeros(7), n)
    b, a = butter(4, [7.6 * f0 / (FS / 2), 12.4 * f0 / (FS / 2)], "bandpass")
    band = lfilter(b, a, rng.standard_normal(n))
    band *= np.sqrt(np.dot(low, low) / np.dot(band, band))
    buf = SampleBuffer(0.05 * (low + band), FS)
    mid = [r for r in diagnose(buf, const_track(f0, dur)) if 0.1 < r.time < 0.4]
    flagged = sum(r.fm_underestimation_risk for r in mid)
    assert flagged > len(mid) // 2


def test_diagnose_skips_unvoiced_frames():
    buf = clean_vowel()
    values = np.full(200, 110.0)
    values[:60] = 0.0
    from singvoc.dsp import F0Track

    reports = diagnose(buf, F0Track(values=values, frame_period=0.005))
    assert len(reports) == 140
    assert min(r.frame_index for r in reports) == 60


def test_report_line_matches_header_layout():
    buf = clean_vowel()
    track = const_track(110.0, 1.0)
    report = diagnose(buf, track)[100]
    line = report.to_line()
    assert len(line.split("\t")) == len(DIAGNOSTIC_HEADER.split("\t"))
    fields = line.split("\t")
    assert fields[0] == "100"
    assert fields[2] == "110.0"
    assert fields[3] == "-" and fields[4] == "-"
