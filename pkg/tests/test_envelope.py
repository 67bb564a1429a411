"""Envelope analysis, MGLSA filtering, and discrete-cepstrum fitting."""
import numpy as np
import pytest

from helpers import FS, flat_vowel, tone, vowel
from singvoc.dsp import Frame, SampleBuffer, frame_count, frame_signal
from singvoc.envelope import (
    SILENCE_C0,
    MelCepstrum,
    MgcCoefficients,
    UnsupportedGammaError,
    envelope_eval,
    fit_discrete_cepstrum,
    mgc_analyze,
    mgc_inverse_filter,
    mglsa_filter,
    min_phase_eval,
    warp_frequency,
)

WINDOW = 400  # 25 ms at 16 kHz


def _mid_frame(buffer, window=WINDOW):
    frames = frame_signal(buffer, 0.005, window)
    return frames[len(frames) // 2]


def _noise_buffer(seed=0, duration=0.5, level=0.1):
    rng = np.random.default_rng(seed)
    return SampleBuffer(
        samples=level * rng.standard_normal(int(duration * FS)), sample_rate=FS
    )


def _const_stream(c, n):
    return [c] * n


# ------------------------------------------------------------------ analysis


def test_analyze_rejects_nonzero_gamma():
    buf, _ = vowel(110.0, 0.2)
    with pytest.raises(UnsupportedGammaError):
        mgc_analyze(_mid_frame(buf), gamma=-0.5)


def test_analyze_silence_marker():
    frame = Frame(samples=np.zeros(WINDOW), center_time=0.0, index=0)
    c = mgc_analyze(frame)
    assert c.values[0] == SILENCE_C0
    np.testing.assert_array_equal(c.values[1:], 0.0)
    assert c.is_silence


def test_analyze_gain_lives_in_c0():
    buf, _ = vowel(110.0, 0.2)
    frame = _mid_frame(buf)
    doubled = Frame(
        samples=2.0 * frame.samples,
        center_time=frame.center_time,
        index=frame.index,
        window_sum=frame.window_sum,
    )
    c1 = mgc_analyze(frame)
    c2 = mgc_analyze(doubled)
    assert c2.values[0] - c1.values[0] == pytest.approx(np.log(2.0), abs=1e-9)
    np.testing.assert_allclose(c2.values[1:], c1.values[1:], atol=1e-6)


def test_analyze_white_noise_envelope_is_flat():
    noise_frame = _mid_frame(_noise_buffer())
    vowel_frame = _mid_frame(vowel(110.0, 0.5)[0])
    grid = np.linspace(50.0, 7000.0, 400)
    noise_env = envelope_eval(mgc_analyze(noise_frame), grid)
    vowel_env = envelope_eval(mgc_analyze(vowel_frame), grid)
    assert np.var(noise_env) < 0.1 * np.var(vowel_env)


def test_analyze_finds_formants():
    # flat-source vowel, 40 ms frame: peaks are at the formants only when the
    # source has no tilt and the 110 Hz harmonics are resolved
    buf = flat_vowel(110.0, 0.5)
    c = mgc_analyze(_mid_frame(buf, 640))
    grid = np.linspace(50.0, 4000.0, 4000)
    env = envelope_eval(c, grid)
    peaks = [
        grid[i]
        for i in range(1, grid.size - 1)
        if env[i] >= env[i - 1] and env[i] > env[i + 1]
    ]
    for formant in (700.0, 1220.0, 2600.0):
        assert any(abs(p - formant) < 50.0 for p in peaks), (formant, peaks)


def test_analyze_tone_amplitude_calibration():
    buf = SampleBuffer(samples=tone(1000.0, 0.5, 0.3), sample_rate=FS)
    c = mgc_analyze(_mid_frame(buf))
    level = envelope_eval(c, [1000.0])[0]
    assert level == pytest.approx(20.0 * np.log10(0.5), abs=1.0)


def test_analyze_matches_smoothed_periodogram():
    # the analysis envelope is an upper envelope, so the reference is the
    # peak-held periodogram (one harmonic spacing), smoothed in dB
    buf, _ = vowel(110.0, 0.5)
    frame = _mid_frame(buf, 640)
    c = mgc_analyze(frame)
    nfft = 4096
    mag = np.abs(np.fft.rfft(frame.samples, nfft)) * 2.0 / frame.window_sum
    db = 20.0 * np.log10(np.maximum(mag, 1e-12))
    spacing = 110.0 / (FS / nfft)
    half = int(np.ceil(spacing / 2.0))
    held = np.array(
        [db[max(0, i - half) : i + half + 1].max() for i in range(db.size)]
    )
    kernel = np.hanning(int(round(1.5 * spacing)))
    kernel /= kernel.sum()
    smooth = np.convolve(held, kernel, mode="same")
    freqs = np.fft.rfftfreq(nfft, 1.0 / FS)
    band = (freqs >= 150) & (freqs <= 7000)
    env = envelope_eval(c, freqs[band])
    rms = np.sqrt(np.mean((env - smooth[band]) ** 2))
    assert rms < 2.0


# ------------------------------------------------------------------ eval


def test_envelope_eval_zero_cepstrum():
    c = MelCepstrum(values=np.zeros(25), alpha=0.42)
    freqs = np.linspace(0, 7000, 50)
    np.testing.assert_allclose(envelope_eval(c, freqs), 0.0, atol=1e-12)
    np.testing.assert_allclose(min_phase_eval(c, freqs), 0.0, atol=1e-12)


def test_envelope_eval_constant_term():
    values = np.zeros(25)
    values[0] = 1.3
    c = MelCepstrum(values=values, alpha=0.42)
    freqs = np.linspace(0, 7000, 50)
    np.testing.assert_allclose(
        envelope_eval(c, freqs), 1.3 * 20.0 / np.log(10.0), atol=1e-12
    )
    np.testing.assert_allclose(min_phase_eval(c, freqs), 0.0, atol=1e-12)


def test_min_phase_matches_fft_construction():
    rng = np.random.default_rng(7)
    values = rng.standard_normal(40) * np.exp(-np.arange(40) / 6.0) * 0.3
    c = MelCepstrum(values=values, alpha=0.42)
    n = 1 << 15
    omega = 2.0 * np.pi * np.fft.rfftfreq(n)
    warped = warp_frequency(omega, c.alpha)
    log_mag = np.cos(np.outer(warped, np.arange(40))) @ c.values
    # fold the real cepstrum to get the analytic (minimum-phase) log spectrum
    cep = np.fft.irfft(log_mag, n)
    fold = np.zeros(n)
    fold[0] = cep[0]
    fold[1 : n // 2] = 2.0 * cep[1 : n // 2]
    fold[n // 2] = cep[n // 2]
    oracle = np.imag(np.fft.rfft(fold, n))
    pick = slice(10, n // 2 - 10, 97)
    freqs = np.fft.rfftfreq(n, 1.0 / c.sample_rate)[pick]
    np.testing.assert_allclose(min_phase_eval(c, freqs), oracle[pick], atol=1e-3)


def test_warp_frequency_endpoints_and_monotonicity():
    w = np.linspace(0, np.pi, 100)
    warped = warp_frequency(w, 0.42)
    assert warped[0] == pytest.approx(0.0)
    assert warped[-1] == pytest.approx(np.pi)
    assert np.all(np.diff(warped) > 0)
    np.testing.assert_allclose(
        warp_frequency(warped, -0.42), w, atol=1e-12
    )


# ------------------------------------------------------------------ MGLSA


def test_mglsa_impulse_response_matches_envelope():
    buf, _ = vowel(110.0, 0.5)
    c = mgc_analyze(_mid_frame(buf))
    n = 4096
    impulse = np.zeros(n)
    impulse[0] = 1.0
    stream = _const_stream(c, frame_count(n, FS, 0.005))
    out = mglsa_filter(SampleBuffer(samples=impulse, sample_rate=FS), stream, 0.005)
    spectrum = np.abs(np.fft.rfft(out.samples, 2 * n))
    freqs = np.fft.rfftfreq(2 * n, 1.0 / FS)
    band = (freqs > 20) & (freqs < 7000)
    response_db = 20.0 * np.log10(np.maximum(spectrum[band], 1e-20))
    envelope_db = envelope_eval(c, freqs[band])
    np.testing.assert_allclose(response_db, envelope_db, atol=0.5)


def test_mglsa_zero_excitation():
    c = MgcCoefficients(values=np.full(25, 0.1), alpha=0.42)
    stream = _const_stream(c, frame_count(1600, FS, 0.005))
    out = mglsa_filter(SampleBuffer(samples=np.zeros(1600), sample_rate=FS), stream, 0.005)
    np.testing.assert_array_equal(out.samples, 0.0)


def test_mglsa_is_linear():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(1600)
    y = rng.standard_normal(1600)
    c = mgc_analyze(_mid_frame(vowel(110.0, 0.5)[0]))
    stream = _const_stream(c, frame_count(1600, FS, 0.005))

    def run(sig):
        return mglsa_filter(SampleBuffer(samples=sig, sample_rate=FS), stream, 0.005).samples

    combined = run(2.0 * x - 0.7 * y)
    np.testing.assert_allclose(combined, 2.0 * run(x) - 0.7 * run(y), atol=1e-9)


def test_mglsa_stream_length_checked():
    c = MgcCoefficients(values=np.zeros(25), alpha=0.42)
    with pytest.raises(ValueError, match="frames"):
        mglsa_filter(
            SampleBuffer(samples=np.zeros(1600), sample_rate=FS), [c, c], 0.005
        )


def test_mglsa_noise_through_noise_envelope_is_flat():
    noise = _noise_buffer(seed=11, duration=4.0)
    # 200 ms frame: a short frame's envelope carries its own sampling bumps
    c = mgc_analyze(_mid_frame(noise, 3200))
    stream = _const_stream(c, frame_count(len(noise), FS, 0.005))
    out = mglsa_filter(noise, stream, 0.005)
    # Welch-style long-term spectrum, lightly smoothed to tame estimator noise
    seg = 1024
    acc = np.zeros(seg // 2 + 1)
    count = 0
    w = np.hanning(seg)
    for start in range(0, len(out) - seg, seg // 2):
        acc += np.abs(np.fft.rfft(out.samples[start : start + seg] * w)) ** 2
        count += 1
    psd = np.convolve(acc / count, np.ones(9) / 9.0, mode="same")
    freqs = np.fft.rfftfreq(seg, 1.0 / FS)
    band = (freqs > 100) & (freqs < 7000)
    db = 10.0 * np.log10(psd[band])
    assert db.max() - db.min() < 6.0  # +/- 3 dB around the mean


# ------------------------------------------------------------ inverse filter


def test_inverse_round_trip_snr():
    x = _noise_buffer(seed=5, duration=0.4)
    c = mgc_analyze(_mid_frame(vowel(110.0, 0.5)[0]))
    stream = _const_stream(c, frame_count(len(x), FS, 0.005))
    shaped = mglsa_filter(x, stream, 0.005)
    back = mgc_inverse_filter(shaped, stream, 0.005)

    seg = 320
    snrs = []
    for start in range(0, len(x) - seg, seg):
        ref = x.samples[start : start + seg]
        err = ref - back.samples[start : start + seg]
        if np.dot(ref, ref) > 1e-12:
            snrs.append(10.0 * np.log10(np.dot(ref, ref) / max(np.dot(err, err), 1e-20)))
    assert np.mean(snrs) > 25.0


def test_inverse_whitens_vowel():
    buf, _ = vowel(110.0, 0.5)
    frames = frame_signal(buf, 0.005, WINDOW)
    stream = [mgc_analyze(f) for f in frames]
    residual = mgc_inverse_filter(buf, stream, 0.005)
    env = envelope_eval(
        mgc_analyze(_mid_frame(residual)), np.linspace(100, 7000, 300)
    )
    assert env.max() - env.min() < 6.0


def test_inverse_zero_input():
    c = MgcCoefficients(values=np.full(25, 0.05), alpha=0.42)
    stream = _const_stream(c, frame_count(800, FS, 0.005))
    out = mgc_inverse_filter(SampleBuffer(samples=np.zeros(800), sample_rate=FS), stream, 0.005)
    np.testing.assert_array_equal(out.samples, 0.0)


def test_inverse_handles_silence_frames():
    x = _noise_buffer(seed=9, duration=0.1)
    n = frame_count(len(x), FS, 0.005)
    silent = np.zeros(25)
    silent[0] = SILENCE_C0
    stream = [MgcCoefficients(values=silent, alpha=0.42)] * n
    out = mgc_inverse_filter(x, stream, 0.005)
    assert np.all(np.isfinite(out.samples))


# ----------------------------------------------------- discrete cepstrum fit


def _random_cepstrum(rng, order=39):
    values = rng.standard_normal(order + 1) * np.exp(-np.arange(order + 1) / 5.0)
    values[0] = rng.uniform(-1, 1)
    return MelCepstrum(values=values, alpha=0.42)


def test_discrete_cepstrum_recovers_construction():
    rng = np.random.default_rng(21)
    true = _random_cepstrum(rng)
    f0 = 110.0
    freqs = np.arange(f0, 7990.0, f0)
    amps = envelope_eval(true, freqs)
    fit = fit_discrete_cepstrum(freqs, amps)
    recovered = envelope_eval(fit, freqs)
    assert np.max(np.abs(recovered - amps)) < 0.5


def test_discrete_cepstrum_flat_input():
    freqs = 190.0 * np.arange(1, 41)
    amps = np.full(freqs.size, -12.0)
    fit = fit_discrete_cepstrum(freqs, amps)
    np.testing.assert_allclose(fit.values[1:], 0.0, atol=1e-8)
    assert envelope_eval(fit, [1234.5])[0] == pytest.approx(-12.0, abs=1e-6)


def test_discrete_cepstrum_high_f0_stays_solvable():
    rng = np.random.default_rng(22)
    true = _random_cepstrum(rng)
    freqs = np.arange(700.0, 7999.0, 700.0)  # 11 harmonics
    amps = envelope_eval(true, freqs)
    fit = fit_discrete_cepstrum(freqs, amps)
    assert np.all(np.isfinite(fit.values))
    # regularization is what makes this solvable
    omega = 2.0 * np.pi * freqs / 16000.0
    basis = np.cos(np.outer(warp_frequency(omega, 0.42), np.arange(40)))
    bare = np.linalg.cond(basis.T @ basis)
    lam = 2e-4
    m = np.arange(40.0)
    reg = (1.0 - lam) * basis.T @ basis / freqs.size + np.diag(
        np.concatenate(([0.0], lam * (m[1:] / 39.0) ** 4))
    )
    assert np.linalg.cond(reg) < 1e-4 * bare


def test_discrete_cepstrum_objective_non_increasing_in_order():
    rng = np.random.default_rng(23)
    true = _random_cepstrum(rng)
    f0 = 150.0
    freqs = np.arange(f0, 7900.0, f0)
    amps = envelope_eval(true, freqs)
    lam = 2e-4

    def objective(order):
        fit = fit_discrete_cepstrum(freqs, amps, order=order, regularization_weight=lam)
        err = (envelope_eval(fit, freqs) - amps) / (20.0 / np.log(10.0))
        m = np.arange(order + 1.0)
        penalty = np.sum((m / order) ** 4 * fit.values**2)
        return (1.0 - lam) * np.sum(err**2) / freqs.size + lam * penalty

    values = [objective(o) for o in (10, 20, 30, 39)]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_discrete_cepstrum_input_validation():
    with pytest.raises(ValueError, match="at least 2"):
        fit_discrete_cepstrum([440.0], [0.0])
    with pytest.raises(ValueError, match="increasing"):
        fit_discrete_cepstrum([440.0, 440.0], [0.0, 0.0])
    with pytest.raises(ValueError, match="Hz"):
        fit_discrete_cepstrum([440.0, 8100.0], [0.0, 0.0])


def test_discrete_cepstrum_condition_guard():
    # absurdly tight cluster of harmonics with regularization disabled
    freqs = 1000.0 + np.arange(5) * 1e-9
    amps = np.zeros(5)
    with pytest.raises(ValueError, match="condition"):
        fit_discrete_cepstrum(freqs, amps, regularization_weight=0.0)
