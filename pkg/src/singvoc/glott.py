"""Glottal vocoder: IAIF source/tract separation and stored-pulse synthesis.

Feature rows are 47 wide: frame energy, f0, five band HNRs, ten voice-source
LSFs and thirty vocal-tract LSFs. Analysis runs iterative adaptive inverse
filtering at frame rate, detects glottal closure instants in the residual,
then re-estimates both filters pitch-synchronously over every two-period
segment touching the frame, keeping the candidate closest to the mean in LSF
space. Synthesis strings a stored glottal pulse at the f0 rate, mixes in
band-leveled noise, matches the excitation spectrum to the source LSFs and
pushes the result through the tract filter.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dsp import (
    F0Track,
    Frame,
    GciSequence,
    LpFilter,
    LsfVector,
    SampleBuffer,
    amplitude_spectrum,
    autocorrelate,
    frame_count,
    frame_signal,
    levinson,
    lp_to_lsf,
    lsf_to_lp,
    make_window,
    pulse_positions,
)
from .formats import ParameterStream
from .lfmodel import lf_pulse_period
from .pulse import envelope_window_length

TRACT_ORDER = 30
SOURCE_ORDER = 10
HNR_BANDS = 5
HNR_CAP_DB = 60.0

# leaky integration of the flow derivative; a true integrator would drift
INTEGRATOR_LEAK = 0.99


@dataclass(frozen=True)
class GlottalPulse:
    """One period of glottal flow derivative, stored at a reference length.

    The waveform carries unit energy and its dominant excursion is the
    negative closure peak; synthesis rescales both duration and level.
    """

    waveform: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.waveform, dtype=np.float64)
        if w.ndim != 1 or w.size < 8:
            raise ValueError("pulse waveform must be 1-D with at least 8 samples")
        if not np.all(np.isfinite(w)):
            raise ValueError("pulse waveform must be finite")
        energy = float(np.sum(w * w))
        if abs(energy - 1.0) > 1e-6:
            raise ValueError(f"pulse waveform must have unit energy, got {energy:g}")
        if w.min() >= 0 or -w.min() < w.max():
            raise ValueError("pulse must have a single prominent negative peak")
        object.__setattr__(self, "waveform", w)

    @property
    def reference_length(self) -> int:
        return self.waveform.size


def default_glottal_pulse(reference_length: int = 320) -> GlottalPulse:
    """Synthetic modal-voice pulse used when no natural pulse is loaded."""
    period = lf_pulse_period(50.0, 50 * reference_length)
    period = period[:reference_length]
    return GlottalPulse(period / np.sqrt(np.sum(period * period)))


def write_glottal_pulse(path, pulse: GlottalPulse) -> None:
    from .formats import write_params

    stream = ParameterStream(
        vocoder_id="glott-pulse",
        frame_period=pulse.reference_length,
        frames=pulse.waveform[None, :],
    )
    write_params(path, stream)


def read_glottal_pulse(path) -> GlottalPulse:
    """Load a pulse container; energy is renormalized to exactly one, since
    the file stores float32 and the unit-energy invariant is strict."""
    from .formats import read_params

    stream = read_params(path)
    if stream.vocoder_id != "glott-pulse":
        raise ValueError(
            f"expected a glott-pulse container, got {stream.vocoder_id!r}"
        )
    w = stream.frames[0]
    return GlottalPulse(w / np.sqrt(np.sum(w * w)))


def _windowed_lp(samples: np.ndarray, order: int) -> LpFilter:
    w = make_window("hann", samples.size)
    return levinson(autocorrelate(samples * w, order), order)


def _parseval_weights(nfft: int) -> np.ndarray:
    # fold weights turning one-sided |rfft|^2 sums into nfft * time energy
    w = np.full(nfft // 2 + 1, 2.0)
    w[0] = 1.0
    if nfft % 2 == 0:
        w[-1] = 1.0
    return w


def _place_pulse(
    buffer: np.ndarray,
    wave: np.ndarray,
    onset: float,
    close: float,
    half_width: int = 16,
) -> None:
    """Add one period of the pulse to the buffer, spanning [onset, close).

    Windowed-sinc interpolation of the reference waveform, evaluated on the
    integer sample grid; both endpoints may be fractional.
    """
    n_in = wave.size
    period = close - onset
    if period < 2.0:
        return
    start = int(np.ceil(onset))
    grid = np.arange(start, min(int(np.ceil(close)), buffer.size))
    if grid.size == 0:
        return
    t = (grid - onset) * (n_in / period)
    cutoff = min(1.0, period / n_in) * 0.97
    idx = np.arange(-half_width, half_width + 1)
    base = np.floor(t).astype(int)
    offsets = idx[None, :] - (t - base)[:, None]
    kern = cutoff * np.sinc(cutoff * offsets)
    kern *= 0.5 * (1.0 + np.cos(np.pi * np.clip(offsets / (half_width + 1), -1, 1)))
    pos = base[:, None] + idx[None, :]
    valid = (pos >= 0) & (pos < n_in)
    vals = np.where(valid, wave[np.clip(pos, 0, n_in - 1)], 0.0)
    buffer[grid[0] : grid[-1] + 1] += np.sum(vals * kern, axis=1)


def iaif(
    frame,
    tract_order: int = TRACT_ORDER,
    source_order: int = SOURCE_ORDER,
) -> tuple[LpFilter, np.ndarray]:
    """Split a speech frame into a vocal-tract filter and a source waveform.

    Two passes of estimate-and-cancel: a first-order predictor stands in for
    the source tilt so a high-order predictor can pick up the tract, then the
    inverse-filtered flow yields a low-order source model whose cancellation
    (plus one integration, since the model was fit on the flow rather than
    its derivative) sharpens the second tract estimate. The returned source
    is the frame inverse-filtered by the final tract: the flow derivative,
    closure peaks pointing down.

    The tract filter comes back minimum-phase; if root reflection had to fire
    the result is flagged `stabilized`.
    """
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame, np.float64)
    if x.ndim != 1:
        raise ValueError("iaif expects a 1-D frame")
    if x.size <= 2 * tract_order:
        raise ValueError(
            f"frame of {x.size} samples is too short for tract order {tract_order}"
        )
    if not np.any(x):
        raise ValueError("degenerate frame: all samples are zero")

    leak = [1.0, -INTEGRATOR_LEAK]

    tilt = _windowed_lp(x, 1)
    detilted = lfilter(tilt.polynomial, [1.0], x)
    tract_first = _windowed_lp(detilted, tract_order)

    residual = lfilter(tract_first.polynomial, [1.0], x)
    flow = lfilter([1.0], leak, residual)
    source_model = _windowed_lp(flow, source_order)

    # cancelling a flow-fit model from the speech leaves one differentiation
    # unbalanced; integrate before the final tract fit
    stripped = lfilter(source_model.polynomial, [1.0], x)
    stripped = lfilter([1.0], leak, stripped)
    tract = _windowed_lp(stripped, tract_order)

    source = lfilter(tract.polynomial, [1.0], x)
    return tract, source


def estimate_hnr_bands(
    source,
    f0: float,
    sample_rate: int = 16000,
    bands: int = HNR_BANDS,
) -> np.ndarray:
    """Band harmonic-to-noise ratios from spectral peak/valley envelopes.

    The smoothed power spectrum is sampled at the harmonic frequencies (upper
    envelope) and halfway between them (lower envelope); each band's HNR is
    the mean dB gap between the two envelopes across the band. Smoothing uses
    a box one sixth of the harmonic spacing wide, narrow enough to keep the
    peaks and valleys apart but wide enough that a noise-only input reads the
    same level at both sampling combs, i.e. HNR near zero. Values cap at
    +60 dB; unvoiced input returns all zeros by convention.
    """
    x = np.asarray(source, dtype=np.float64)
    if f0 <= 0:
        return np.zeros(bands)
    if x.size < 2 * sample_rate / f0:
        raise ValueError(
            f"need at least two periods ({2 * sample_rate / f0:.0f} samples) "
            f"of source at f0 {f0:g}, got {x.size}"
        )
    spec = amplitude_spectrum(x, sample_rate)
    power = spec.magnitude**2
    bin_hz = spec.freqs[1] - spec.freqs[0]
    width = max(3, int(round(f0 / 6.0 / bin_hz)) | 1)
    smooth = np.convolve(power, np.ones(width) / width, mode="same")

    nyquist = sample_rate / 2.0
    harmonics = np.arange(1, int(nyquist / f0) + 1) * f0
    valleys = harmonics - 0.5 * f0
    if harmonics.size < 2:
        raise ValueError(f"f0 {f0:g} leaves fewer than two harmonics below Nyquist")

    def sample_db(freqs_at):
        idx = np.clip(np.round(freqs_at / bin_hz).astype(int), 0, smooth.size - 1)
        return 10.0 * np.log10(np.maximum(smooth[idx], 1e-24))

    upper = np.interp(spec.freqs, harmonics, sample_db(harmonics))
    lower = np.interp(spec.freqs, valleys, sample_db(valleys))

    edges = np.linspace(0.0, nyquist, bands + 1)
    hnr = np.empty(bands)
    for b in range(bands):
        sel = (spec.freqs >= edges[b]) & (spec.freqs < edges[b + 1])
        hnr[b] = np.mean(upper[sel] - lower[sel])
    return np.minimum(hnr, HNR_CAP_DB)


def detect_gci_glott(
    source,
    f0track: F0Track,
    sample_rate: int = 16000,
) -> GciSequence:
    """Glottal closure instants as the most negative source sample per period.

    Walks each voiced run one fundamental period at a time and records the
    minimum inside the current window, never letting two detections sit
    closer than half a period. Unvoiced stretches contribute nothing.
    """
    x = np.asarray(source, dtype=np.float64)
    f0 = f0track.per_sample(sample_rate, x.size)
    times = []
    n = 0
    while n < x.size:
        if f0[n] <= 0:
            n += 1
            continue
        period = sample_rate / f0[n]
        stop = min(x.size, n + int(round(period)))
        if stop - n < 3:
            break
        peak = n + int(np.argmin(x[n:stop]))
        t = peak / sample_rate
        if not times or t - times[-1] >= 0.5 / f0[n]:
            times.append(t)
        # resume half a period past the detection so neighbouring minima
        # cannot double-fire inside one cycle
        n = max(peak + int(round(0.5 * period)), n + 1)
    return GciSequence(times=np.asarray(times))


def _neutral_lsf(order: int) -> np.ndarray:
    """Evenly spread line spectral frequencies: the flat, do-nothing filter."""
    return np.arange(1, order + 1) * np.pi / (order + 1)


def _lsf_or_neutral(filt: LpFilter) -> np.ndarray:
    try:
        return lp_to_lsf(filt).frequencies
    except ValueError:
        return _neutral_lsf(filt.order)


def _source_lp(source: np.ndarray, order: int = SOURCE_ORDER) -> LpFilter:
    if not np.any(source):
        return LpFilter(coefficients=np.zeros(order), gain=1.0)
    return _windowed_lp(source, order)


def _closest_to_mean(vectors: list[np.ndarray]) -> int:
    stack = np.stack(vectors)
    dist = np.linalg.norm(stack - stack.mean(axis=0), axis=1)
    return int(np.argmin(dist))


def _analysis_window(f0track: F0Track, sample_rate: int) -> int:
    voiced = f0track.values[f0track.values > 0]
    median = float(np.median(voiced)) if voiced.size else 0.0
    return envelope_window_length(sample_rate, median)


def _frame_rate_pass(buffer: SampleBuffer, f0track: F0Track):
    """Frame-rate IAIF over the whole buffer.

    Returns per-frame tract filters and source residuals (None on silence)
    plus the Hann-tapered overlap-add of the residuals: a full-length voice
    source estimate."""
    fs = buffer.sample_rate
    window_length = _analysis_window(f0track, fs)
    frames = frame_signal(buffer, f0track.frame_period, window_length, "rect")
    hop = int(round(f0track.frame_period * fs))
    tracts: list[LpFilter | None] = []
    residuals: list[np.ndarray | None] = []
    ola = np.zeros(len(buffer))
    norm = np.zeros(len(buffer))
    taper = make_window("hann", window_length)
    for cut in frames:
        if not np.any(cut.samples):
            tracts.append(None)
            residuals.append(None)
            continue
        tract, source = iaif(cut.samples)
        tracts.append(tract)
        residuals.append(source)
        start = cut.index * hop - window_length // 2
        lo = max(0, start)
        hi = min(len(buffer), start + window_length)
        seg = slice(lo - start, hi - start)
        ola[lo:hi] += (source * taper)[seg]
        norm[lo:hi] += taper[seg]
    return tracts, residuals, ola / np.maximum(norm, 1e-12)


def source_signal(buffer: SampleBuffer, f0track: F0Track) -> np.ndarray:
    """Full-length voice source estimate: frame-rate IAIF residuals,
    overlap-added with a Hann taper. Silent frames contribute nothing."""
    return _frame_rate_pass(buffer, f0track)[2]


def _segment_estimate(buffer: SampleBuffer, a: int, b: int):
    """LSF pair from IAIF over one two-period segment, or None if the
    segment is too short or empty."""
    if b - a <= 2 * TRACT_ORDER:
        return None
    seg = buffer.samples[max(0, a) : min(len(buffer), b)]
    if seg.size <= 2 * TRACT_ORDER or not np.any(seg):
        return None
    seg_tract, seg_source = iaif(seg)
    return _lsf_or_neutral(seg_tract), _lsf_or_neutral(_source_lp(seg_source))


def pitch_sync_candidates(
    buffer: SampleBuffer,
    gci_samples: np.ndarray,
    lo: int,
    hi: int,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Tract and source LSF estimates from every two-period segment
    overlapping [lo, hi); segments too short for the tract order are
    skipped."""
    tract_cands: list[np.ndarray] = []
    source_cands: list[np.ndarray] = []
    for j in range(gci_samples.size - 2):
        a, b = int(gci_samples[j]), int(gci_samples[j + 2])
        if b <= lo or a >= hi:
            continue
        est = _segment_estimate(buffer, a, b)
        if est is not None:
            tract_cands.append(est[0])
            source_cands.append(est[1])
    return tract_cands, source_cands


def analyze(buffer: SampleBuffer, f0track: F0Track) -> ParameterStream:
    """Extract the 47-column glottal feature stream from audio.

    Frame-rate IAIF supplies tract filters whose overlap-added residual gives
    a full-length source signal; closure instants found there anchor the
    pitch-synchronous pass, where every two-period segment overlapping a
    frame is analyzed again and the estimate closest to the candidates' mean
    (separately for tract and source, in LSF space) represents the frame.
    The chosen vector is always one of the candidates, never an average.
    Unvoiced frames keep their frame-rate estimates, silent frames a neutral
    flat filter. Energy is the RMS of the raw frame.
    """
    fs = buffer.sample_rate
    expected = frame_count(len(buffer), fs, f0track.frame_period)
    if len(f0track) != expected:
        raise ValueError(
            f"f0 track holds {len(f0track)} frames, framing the buffer "
            f"at period {f0track.frame_period:g} yields {expected}"
        )
    window_length = _analysis_window(f0track, fs)
    frames = frame_signal(buffer, f0track.frame_period, window_length, "rect")
    hop = int(round(f0track.frame_period * fs))

    tracts, residuals, source_track = _frame_rate_pass(buffer, f0track)
    gcis = detect_gci_glott(source_track, f0track, fs)
    gci_samples = np.round(gcis.times * fs).astype(int)
    # neighbouring frames share most two-period segments; estimate each once
    segment_cache: dict[int, tuple[np.ndarray, np.ndarray] | None] = {}

    rows = np.zeros((len(frames), 2 + HNR_BANDS + SOURCE_ORDER + TRACT_ORDER))
    for i, cut in enumerate(frames):
        f0 = float(f0track.values[i])
        energy = float(np.sqrt(np.mean(cut.samples**2)))
        row = rows[i]
        row[0] = energy
        row[1] = f0
        if tracts[i] is None:
            row[7:17] = _neutral_lsf(SOURCE_ORDER)
            row[17:] = _neutral_lsf(TRACT_ORDER)
            continue

        tract_lsf = _lsf_or_neutral(tracts[i])
        source_lsf = _lsf_or_neutral(_source_lp(residuals[i]))

        if f0 > 0:
            lo_t = cut.index * hop - window_length // 2
            hi_t = lo_t + window_length
            tract_cands, source_cands = [], []
            for j in range(gci_samples.size - 2):
                a, b = int(gci_samples[j]), int(gci_samples[j + 2])
                if b <= lo_t or a >= hi_t:
                    continue
                if j not in segment_cache:
                    segment_cache[j] = _segment_estimate(buffer, a, b)
                est = segment_cache[j]
                if est is not None:
                    tract_cands.append(est[0])
                    source_cands.append(est[1])
            if tract_cands:
                tract_lsf = tract_cands[_closest_to_mean(tract_cands)]
                source_lsf = source_cands[_closest_to_mean(source_cands)]

            span = max(window_length, int(np.ceil(2.2 * fs / f0)))
            lo_h = max(0, cut.index * hop - span // 2)
            segment = source_track[lo_h : min(len(buffer), lo_h + span)]
            row[2:7] = estimate_hnr_bands(segment, f0, fs)

        row[7:17] = source_lsf
        row[17:] = tract_lsf
    return ParameterStream(
        vocoder_id="glott", frame_period=f0track.frame_period, frames=rows
    )


def synthesize(
    params: ParameterStream,
    pulse: GlottalPulse | None = None,
    seed: int = 0,
    sample_rate: int = 16000,
) -> SampleBuffer:
    """Render audio from a glottal feature stream and a stored pulse.

    The pulse is sinc-resampled to each period read off the f0 contour and
    laid down at the closure rate; per frame, band-limited noise joins it at
    the level the HNR column dictates (unvoiced frames are all noise). The
    mixed excitation is whitened by the pulse's own order-10 LP, colored by
    the stored source LSFs, run through the tract filter, and finally gain-
    matched so each frame's RMS lands on the energy column.
    """
    if params.vocoder_id != "glott":
        raise ValueError(f"expected a glott stream, got {params.vocoder_id!r}")
    if pulse is None:
        pulse = default_glottal_pulse()
    rows = params.frames
    if rows.shape[0] == 0:
        return SampleBuffer(samples=np.zeros(0), sample_rate=sample_rate)
    hop = int(round(params.frame_period * sample_rate))
    n = max(hop, (rows.shape[0] - 1) * hop)

    track = F0Track(values=rows[:, 1], frame_period=params.frame_period)
    f0_ps = track.per_sample(sample_rate, n)

    # deterministic part: one resampled pulse per period, rendered at its
    # exact fractional onset; snapping onsets to the sample grid would jitter
    # the timing by half a sample and smear the upper harmonics into noise
    excitation = np.zeros(n)
    positions = pulse_positions(f0_ps, sample_rate)
    for j in range(positions.size):
        a = positions[j]
        if a >= n:
            continue
        nominal = sample_rate / max(f0_ps[min(int(a), n - 1)], 1.0)
        if j + 1 < positions.size and positions[j + 1] - a <= 1.6 * nominal:
            b = positions[j + 1]
        else:
            # run boundary: the next onset (if any) starts a new voiced
            # stretch, so close this period at the local nominal length
            b = a + nominal
        _place_pulse(excitation, pulse.waveform, a, b)

    # flatten the pulse train with its own LP before the noise joins; adding
    # the noise in this whitened domain keeps its spectral contrast small, so
    # block-edge leakage has no steep response left to ride through, and the
    # later coloring stages act on pulses and noise identically
    whitener = _windowed_lp(pulse.waveform, SOURCE_ORDER)
    excitation = lfilter(whitener.polynomial, [1.0], excitation)
    source_polys = [
        lsf_to_lp(LsfVector(frequencies=rows[i, 7:17])).polynomial
        for i in range(rows.shape[0])
    ]
    tract_polys = [
        lsf_to_lp(LsfVector(frequencies=rows[i, 17:])).polynomial
        for i in range(rows.shape[0])
    ]

    # Per-frame noise, leveled band by band against the whitened pulse train.
    # Two details keep the balance honest on the rendered signal rather than
    # on intermediate buffers: both sides of each band sum are weighted by
    # the power response of the coloring filters the excitation is about to
    # pass through, and the noise gain is calibrated on the drawn realization
    # so its band energies land exactly where the hnr column says.
    rng = np.random.default_rng(seed)
    noise = np.zeros(n)
    taper = np.hanning(2 * hop)
    edges = np.linspace(0.0, sample_rate / 2.0, HNR_BANDS + 1)
    ref_freqs = np.fft.rfftfreq(2 * hop, 1.0 / sample_rate)
    blk_freqs = np.fft.rfftfreq(hop, 1.0 / sample_rate)
    ref_fold = _parseval_weights(2 * hop)
    blk_fold = _parseval_weights(hop)
    for i in range(rows.shape[0]):
        lo = i * hop
        hi = min(n, lo + hop)
        if rows[i, 0] <= 0 or hi <= lo:
            continue
        white = rng.standard_normal(hop)
        if rows[i, 1] > 0:
            ref_lo = i * hop - hop
            seg = slice(max(0, ref_lo) - ref_lo, min(n, ref_lo + 2 * hop) - ref_lo)
            chunk = np.zeros(2 * hop)
            chunk[seg] = excitation[max(0, ref_lo) : min(n, ref_lo + 2 * hop)]
            chain_ref = 1.0 / np.maximum(
                np.abs(np.fft.rfft(source_polys[i], 2 * hop)) ** 2
                * np.abs(np.fft.rfft(tract_polys[i], 2 * hop)) ** 2,
                1e-12,
            )
            chain_blk = 1.0 / np.maximum(
                np.abs(np.fft.rfft(source_polys[i], hop)) ** 2
                * np.abs(np.fft.rfft(tract_polys[i], hop)) ** 2,
                1e-12,
            )
            harm_bins = np.abs(np.fft.rfft(chunk * taper)) ** 2 * ref_fold * chain_ref
            # density of the tapered reference is bandE / (2 hop sum(taper^2));
            # the noise block wants hop samples at that density
            harm_scale = hop / (2.0 * np.sum(taper**2))
            white_bins = np.fft.rfft(white)
            white_power = np.abs(white_bins) ** 2 * blk_fold * chain_blk
            gains = np.zeros_like(blk_freqs)
            for b in range(HNR_BANDS):
                ref_sel = (ref_freqs >= edges[b]) & (ref_freqs < edges[b + 1])
                blk_sel = (blk_freqs >= edges[b]) & (blk_freqs < edges[b + 1])
                have = float(np.sum(white_power[blk_sel]))
                want = (
                    float(np.sum(harm_bins[ref_sel]))
                    * harm_scale
                    * 10.0 ** (-rows[i, 2 + b] / 10.0)
                )
                if have > 0:
                    gains[blk_sel] = np.sqrt(want / have)
            noise[lo:hi] += np.fft.irfft(white_bins * gains, hop)[: hi - lo]
        else:
            # unvoiced: flat noise, level left to the energy matching below
            noise[lo:hi] += white[: hi - lo]
    excitation += noise

    # source coloring then tract filtering, block by block with carried state
    y = np.zeros(n)
    zi_s = np.zeros(SOURCE_ORDER)
    zi_t = np.zeros(TRACT_ORDER)
    for i in range(rows.shape[0]):
        lo = i * hop
        hi = min(n, lo + hop)
        if hi <= lo:
            break
        block = excitation[lo:hi]
        block, zi_s = lfilter([1.0], source_polys[i], block, zi=zi_s)
        block, zi_t = lfilter([1.0], tract_polys[i], block, zi=zi_t)
        y[lo:hi] = block

    # frame-rate gain so measured RMS tracks the stored energy column; use
    # the same window the analysis energy was measured over, otherwise the
    # two RMS readings sample different stretches of the waveform
    voiced = rows[:, 1] > 0
    f0_median = float(np.median(rows[voiced, 1])) if np.any(voiced) else 0.0
    centers = np.arange(rows.shape[0]) * hop
    window_length = min(n, envelope_window_length(sample_rate, f0_median))
    gains = np.ones(rows.shape[0])
    for i, c in enumerate(centers):
        lo = max(0, c - window_length // 2)
        hi = min(n, lo + window_length)
        rms = float(np.sqrt(np.mean(y[lo:hi] ** 2))) if hi > lo else 0.0
        gains[i] = rows[i, 0] / rms if rms > 1e-12 else 0.0
    per_sample = np.interp(np.arange(n), centers, gains)
    return SampleBuffer(samples=y * per_sample, sample_rate=sample_rate)
