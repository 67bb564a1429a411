"""File I/O: WAV audio, F0-track text files, binary parameter streams and
listening-test score records.

Parameter streams use a small self-describing binary container (magic,
version, vocoder id, frame period, row width, row count, row-major float32).
The same container carries the DSM voice model (vocoder id ``dsm-model``,
exactly 3 rows) and the stored glottal pulse (``glott-pulse``, 1 row); for
those two the frame_period field holds the sample spacing of the stored
waveforms, i.e. 1/sample_rate.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import F0Track, SampleBuffer

F0_VOICED_MIN = 30.0
F0_VOICED_MAX = 2000.0

VOCODER_IDS = ("pulse", "dsm", "hnm", "glott", "dsm-model", "glott-pulse")
SYNTH_VOCODERS = ("pulse", "dsm", "hnm", "glott")

# feature row widths: pulse/dsm 1+25, hnm 1+40+1, glott 1+1+5+10+30
ROW_WIDTHS = {"pulse": 26, "dsm": 26, "hnm": 42, "glott": 47}

SINGER_CATEGORIES = ("baritone", "countertenor", "soprano")

PARAMS_MAGIC = b"SVPS"
PARAMS_VERSION = 1
_HEADER = struct.Struct("<4sHHdII")  # magic, version, vocoder, period, w, n


class FormatError(ValueError):
    """Malformed or inconsistent file content."""


class UnsupportedFormatError(FormatError):
    """Well-formed file in an encoding this package does not handle."""


@dataclass(frozen=True)
class ParameterStream:
    """Frame-rate feature rows for one vocoder, plus the frame period."""

    vocoder_id: str
    frame_period: float
    frames: np.ndarray

    def __post_init__(self):
        if self.vocoder_id not in VOCODER_IDS:
            raise FormatError(
                f"unknown vocoder_id {self.vocoder_id!r}, expected one of {VOCODER_IDS}"
            )
        if self.frame_period <= 0:
            raise FormatError(f"frame_period must be positive, got {self.frame_period}")
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise FormatError(f"frames must be 2-D (rows x features), got {frames.ndim}-D")
        object.__setattr__(self, "frames", frames)
        expected = ROW_WIDTHS.get(self.vocoder_id)
        if expected is not None and frames.shape[0] and frames.shape[1] != expected:
            raise FormatError(
                f"row width mismatch for {self.vocoder_id}: "
                f"expected {expected}, got {frames.shape[1]}"
            )
        if self.vocoder_id == "dsm-model" and frames.shape[0] != 3:
            raise FormatError(
                f"dsm-model streams hold exactly 3 rows, got {frames.shape[0]}"
            )
        if self.vocoder_id == "glott-pulse" and frames.shape[0] != 1:
            raise FormatError(
                f"glott-pulse streams hold exactly 1 row, got {frames.shape[0]}"
            )
        if frames.size and not np.all(np.isfinite(frames)):
            raise FormatError("frames contain non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class CmosRecord:
    """One comparative mean opinion score judgment."""

    participant_id: str
    singer_category: str
    vocoder_a: str
    vocoder_b: str
    sample_id: str
    score: int

    def __post_init__(self):
        for name in ("participant_id", "sample_id"):
            token = getattr(self, name)
            if not token or any(c in token for c in "\t\n\r"):
                raise ValueError(f"{name} must be a non-empty token without tabs/newlines")
        if self.singer_category not in SINGER_CATEGORIES:
            raise ValueError(
                f"singer_category {self.singer_category!r} not in {SINGER_CATEGORIES}"
            )
        for name in ("vocoder_a", "vocoder_b"):
            if getattr(self, name) not in SYNTH_VOCODERS:
                raise ValueError(f"{name} {getattr(self, name)!r} not in {SYNTH_VOCODERS}")
        if self.vocoder_a == self.vocoder_b:
            raise ValueError("vocoder_a and vocoder_b must differ")
        if not isinstance(self.score, (int, np.integer)) or isinstance(self.score, bool):
            raise ValueError(f"score must be an integer, got {self.score!r}")
        object.__setattr__(self, "score", int(self.score))
        if not -3 <= self.score <= 3:
            raise ValueError(f"score must lie in [-3, 3], got {self.score}")


# ---------------------------------------------------------------------- WAV


def read_wav(path) -> SampleBuffer:
    """Read a mono PCM16 RIFF/WAVE file; samples scaled to [-1, 1)."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"truncated RIFF header: file ends at byte {len(data)}, need 12")
    if data[0:4] != b"RIFF":
        raise FormatError(f"bad RIFF tag at byte 0: {data[0:4]!r}")
    (riff_size,) = struct.unpack_from("<I", data, 4)
    if riff_size != len(data) - 8:
        raise FormatError(
            f"RIFF chunk size field says {riff_size} bytes, "
            f"file holds {len(data) - 8} after byte 8"
        )
    if data[8:12] != b"WAVE":
        raise FormatError(f"bad WAVE tag at byte 8: {data[8:12]!r}")

    fmt = None
    samples = None
    offset = 12
    while offset < len(data):
        if offset + 8 > len(data):
            raise FormatError(f"truncated chunk header at byte {offset}")
        chunk_id = data[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", data, offset + 4)
        body_start = offset + 8
        if body_start + chunk_size > len(data):
            raise FormatError(
                f"chunk {chunk_id!r} at byte {offset} claims {chunk_size} bytes, "
                f"file ends at byte {len(data)}"
            )
        body = data[body_start : body_start + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise FormatError(f"fmt chunk at byte {offset} too short: {chunk_size} < 16")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if tag == 3:
                raise UnsupportedFormatError("float WAV not supported, expected PCM16")
            if tag != 1:
                raise UnsupportedFormatError(
                    f"compressed WAV (format tag {tag}) not supported, expected PCM16"
                )
            if channels != 1:
                raise UnsupportedFormatError(
                    f"{channels}-channel WAV not supported, expected mono"
                )
            if bits != 16:
                raise UnsupportedFormatError(
                    f"{bits}-bit WAV not supported, expected 16-bit PCM"
                )
            if rate <= 0:
                raise FormatError(f"fmt chunk declares non-positive sample rate {rate}")
            fmt = rate
        elif chunk_id == b"data":
            if chunk_size % 2:
                raise FormatError(
                    f"data chunk at byte {offset} holds {chunk_size} bytes, "
                    "not a whole number of 16-bit samples"
                )
            samples = np.frombuffer(body, dtype="<i2").astype(np.float64) / 32768.0
        offset = body_start + chunk_size + (chunk_size & 1)  # RIFF pads to even

    if fmt is None:
        raise FormatError("missing fmt chunk")
    if samples is None:
        raise FormatError("missing data chunk")
    return SampleBuffer(samples=samples, sample_rate=fmt)


def write_wav(path, buffer: SampleBuffer) -> None:
    """Write mono PCM16; read_wav(write_wav(x)) is sample-exact for PCM16 content."""
    ints = np.clip(np.rint(buffer.samples * 32768.0), -32768, 32767).astype("<i2")
    body = ints.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH",
        16,
        1,
        1,
        buffer.sample_rate,
        buffer.sample_rate * 2,
        2,
        16,
    )
    header += b"data" + struct.pack("<I", len(body))
    Path(path).write_bytes(header + body)


# ----------------------------------------------------------------- F0 text


def read_f0_track(path, frame_period: float) -> F0Track:
    """One Hz value per line; 0 marks unvoiced frames."""
    text = Path(path).read_text()
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        token = raw.strip()
        if not token:
            raise FormatError(f"line {lineno}: blank line in f0 track")
        try:
            value = float(token)
        except ValueError:
            raise FormatError(f"line {lineno}: not a number: {token!r}") from None
        if not np.isfinite(value):
            raise FormatError(f"line {lineno}: non-finite f0 {token!r}")
        if value < 0:
            raise FormatError(f"line {lineno}: negative f0 {value:g}")
        if value > 0 and not F0_VOICED_MIN <= value <= F0_VOICED_MAX:
            raise FormatError(
                f"line {lineno}: voiced f0 {value:g} outside "
                f"[{F0_VOICED_MIN:g}, {F0_VOICED_MAX:g}] Hz"
            )
        values.append(value)
    return F0Track(values=np.asarray(values), frame_period=frame_period)


def write_f0_track(path, track: F0Track) -> None:
    lines = [repr(float(v)) for v in track.values]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------- parameter files


def write_params(path, stream: ParameterStream) -> None:
    frames = np.ascontiguousarray(stream.frames, dtype="<f4")
    width = frames.shape[1] if frames.shape[0] else ROW_WIDTHS.get(stream.vocoder_id, 0)
    header = _HEADER.pack(
        PARAMS_MAGIC,
        PARAMS_VERSION,
        VOCODER_IDS.index(stream.vocoder_id),
        stream.frame_period,
        width,
        frames.shape[0],
    )
    Path(path).write_bytes(header + frames.tobytes())


def read_params(path) -> ParameterStream:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(
            f"truncated header: file ends at byte {len(data)}, need {_HEADER.size}"
        )
    magic, version, vocoder_index, frame_period, width, count = _HEADER.unpack_from(data)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"bad magic at byte 0: {magic!r}, expected {PARAMS_MAGIC!r}")
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported container version {version}")
    if vocoder_index >= len(VOCODER_IDS):
        raise FormatError(f"unknown vocoder index {vocoder_index}")
    vocoder_id = VOCODER_IDS[vocoder_index]
    expected = ROW_WIDTHS.get(vocoder_id)
    if expected is not None and count and width != expected:
        raise FormatError(
            f"row width mismatch for {vocoder_id}: expected {expected}, got {width}"
        )
    need = _HEADER.size + 4 * width * count
    if len(data) != need:
        raise FormatError(
            f"data section holds {len(data) - _HEADER.size} bytes, "
            f"need {need - _HEADER.size} for {count} rows of width {width}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    frames = flat.reshape(count, width) if count else np.zeros((0, expected or width))
    return ParameterStream(
        vocoder_id=vocoder_id, frame_period=frame_period, frames=frames
    )


# ------------------------------------------------------------- score files


def _format_score_line(record: CmosRecord) -> str:
    return "\t".join(
        (
            record.participant_id,
            record.singer_category,
            record.vocoder_a,
            record.vocoder_b,
            record.sample_id,
            str(record.score),
        )
    )


def append_score(path, record: CmosRecord) -> None:
    """Append one record; a single write call keeps records whole on disk."""
    line = (_format_score_line(record) + "\n").encode()
    with open(path, "ab") as handle:
        handle.write(line)


def read_scores(path) -> list[CmosRecord]:
    text = Path(path).read_text()
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 6:
            raise FormatError(f"line {lineno}: expected 6 fields, got {len(fields)}")
        try:
            score = int(fields[5])
        except ValueError:
            raise FormatError(f"line {lineno}: score is not an integer: {fields[5]!r}") from None
        try:
            records.append(
                CmosRecord(
                    participant_id=fields[0],
                    singer_category=fields[1],
                    vocoder_a=fields[2],
                    vocoder_b=fields[3],
                    sample_id=fields[4],
                    score=score,
                )
            )
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return records
