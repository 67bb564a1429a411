"""Command-line front end for the whole toolkit.

One binary, subcommand per task: feature analysis, synthesis from stored
parameters, copy-synthesis with an objective report, DSM voice-model
training, artifact diagnosis, listening-test scheduling, score aggregation,
and the collection service. Exit codes: 0 on success, 1 when processing
fails, 2 for usage errors (bad flags, missing input files).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dsm, glott, hnm, pulse
from .config import Config, ConfigError, load_config, override_config
from .diagnostics import (
    DIAGNOSTIC_HEADER,
    diagnose,
    log_spectral_distortion,
    mel_cepstral_distortion,
    segmental_snr,
)
from .formats import (
    SINGER_CATEGORIES,
    FormatError,
    read_f0_track,
    read_params,
    read_scores,
    read_wav,
    write_params,
    write_wav,
)
from .listening import (
    SchedulingError,
    aggregate_cmos,
    make_schedule,
    read_schedule,
    summary_lines,
    write_schedule,
)

VOCODER_CHOICES = ("pulse", "dsm", "hnm", "glott")

REPORT_HEADER = "\t".join(["vocoder", "lsd_db", "mcd_db", "segsnr_db"])


class UsageError(Exception):
    """Bad invocation: wrong flag combination or missing input file."""


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _config_from(args) -> Config:
    config = load_config(args.config) if args.config else Config()
    return override_config(
        config,
        sample_rate=getattr(args, "sample_rate", None),
        frame_period=getattr(args, "frame_period", None),
        mgc_order=getattr(args, "mgc_order", None),
        mgc_alpha=getattr(args, "mgc_alpha", None),
        hnm_order=getattr(args, "hnm_order", None),
        hnm_regularization=getattr(args, "hnm_regularization", None),
        hnm_lambda=getattr(args, "hnm_lambda", None),
        seed=getattr(args, "seed", None),
        weak_harmonic_threshold_db=getattr(args, "weak_threshold_db", None),
        interharmonic_gate_db=getattr(args, "interharmonic_gate_db", None),
    )


def _read_audio(args, config: Config):
    buf = read_wav(_require_file(args.input, "input wav"))
    if buf.sample_rate != config.sample_rate:
        raise FormatError(
            f"{args.input}: sample rate {buf.sample_rate} does not match "
            f"configured {config.sample_rate}"
        )
    track = read_f0_track(_require_file(args.f0, "f0 track"), config.frame_period)
    return buf, track


def _analyze(vocoder: str, buf, track, config: Config):
    if vocoder == "pulse":
        return pulse.analyze(buf, track, order=config.mgc_order, alpha=config.mgc_alpha)
    if vocoder == "dsm":
        return dsm.analyze(buf, track, order=config.mgc_order, alpha=config.mgc_alpha)
    if vocoder == "hnm":
        return hnm.analyze(
            buf,
            track,
            order=config.hnm_order,
            alpha=config.mgc_alpha,
            lam=config.hnm_lambda,
            regularization_weight=config.hnm_regularization,
        )
    return glott.analyze(buf, track)


def _synthesize(stream, args, config: Config):
    vocoder = stream.vocoder_id
    if vocoder == "pulse":
        return pulse.synthesize(
            stream, seed=config.seed, sample_rate=config.sample_rate,
            alpha=config.mgc_alpha,
        )
    if vocoder == "dsm":
        if not getattr(args, "model", None):
            raise UsageError("dsm synthesis needs --model (trained voice model)")
        model = dsm.load_voice_model(_require_file(args.model, "voice model"))
        return dsm.synthesize(
            stream, model, seed=config.seed, sample_rate=config.sample_rate,
            alpha=config.mgc_alpha,
        )
    if vocoder == "hnm":
        return hnm.synthesize(
            stream, seed=config.seed, sample_rate=config.sample_rate,
            alpha=config.mgc_alpha,
        )
    pulse_shape = None
    if getattr(args, "pulse", None):
        pulse_shape = glott.read_glottal_pulse(_require_file(args.pulse, "pulse file"))
    return glott.synthesize(
        stream, pulse=pulse_shape, seed=config.seed, sample_rate=config.sample_rate
    )


def cmd_analyze(args) -> int:
    config = _config_from(args)
    buf, track = _read_audio(args, config)
    stream = _analyze(args.vocoder, buf, track, config)
    write_params(args.out, stream)
    voiced = float(np.mean(track.values > 0)) * 100.0
    print(f"frames {stream.frames.shape[0]}  voiced {voiced:.1f}%")
    return 0


def cmd_synth(args) -> int:
    config = _config_from(args)
    stream = read_params(_require_file(args.input, "parameter file"))
    if args.vocoder and args.vocoder != stream.vocoder_id:
        raise UsageError(
            f"parameter file is for {stream.vocoder_id!r}, not {args.vocoder!r}"
        )
    out = _synthesize(stream, args, config)
    write_wav(args.out, out)
    print(f"wrote {args.out}: {len(out)} samples at {out.sample_rate} Hz")
    return 0


def _metric_row(vocoder: str, reference, test) -> str:
    lsd = log_spectral_distortion(reference, test)
    mcd = mel_cepstral_distortion(reference, test)
    snr = segmental_snr(reference, test)
    return f"{vocoder}\t{lsd:.3f}\t{mcd:.3f}\t{snr:.3f}"


def cmd_copysynth(args) -> int:
    config = _config_from(args)
    buf, track = _read_audio(args, config)
    vocoders = VOCODER_CHOICES if args.vocoder == "all" else (args.vocoder,)

    in_path = Path(args.input).resolve()
    rows = []
    for vocoder in vocoders:
        if len(vocoders) == 1:
            out_path = Path(args.out)
        else:
            # batch mode treats --out as a directory of per-vocoder files
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            out_path = out_dir / f"{Path(args.input).stem}.{vocoder}.wav"
        if out_path.resolve() == in_path and not args.force:
            raise UsageError(
                f"refusing to overwrite the input {in_path} without --force"
            )
        stream = _analyze(vocoder, buf, track, config)
        synth_args = argparse.Namespace(
            model=getattr(args, "model", None), pulse=getattr(args, "pulse", None)
        )
        out = _synthesize(stream, synth_args, config)
        write_wav(out_path, out)
        rows.append(_metric_row(vocoder, buf, out))

    report = "\n".join([REPORT_HEADER] + rows) + "\n"
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    else:
        sys.stdout.write(report)
    return 0


def cmd_train_dsm(args) -> int:
    config = _config_from(args)
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise UsageError(f"corpus directory not found: {corpus_dir}")
    pairs = []
    for wav_path in sorted(corpus_dir.glob("*.wav")):
        f0_path = wav_path.with_suffix(".f0")
        if not f0_path.is_file():
            raise UsageError(f"no f0 track beside {wav_path}: expected {f0_path}")
        pairs.append(
            (read_wav(wav_path), read_f0_track(f0_path, config.frame_period))
        )
    if not pairs:
        raise UsageError(f"corpus directory {corpus_dir} holds no wav files")
    model = dsm.train_voice_model(pairs, sample_rate=config.sample_rate)
    dsm.save_voice_model(args.out, model)
    print(f"trained voice model on {len(pairs)} recording(s) -> {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    config = _config_from(args)
    buf, track = _read_audio(args, config)
    reports = diagnose(
        buf,
        track,
        weak_threshold_db=config.weak_harmonic_threshold_db,
        interharmonic_gate_db=config.interharmonic_gate_db,
    )
    lines = [DIAGNOSTIC_HEADER] + [r.to_line() for r in reports]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    flagged = sum(
        1
        for r in reports
        if r.weak_harmonic_indices or r.interharmonic_peaks or r.fm_underestimation_risk
    )
    print(f"{len(reports)} voiced frame(s), {flagged} with artifact flags",
          file=sys.stderr)
    return 0


def _read_sample_pool(path) -> dict[str, list[str]]:
    pool: dict[str, list[str]] = {}
    for number, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(
                f"{path}:{number}: expected 'category<TAB>sample_id', got {raw!r}"
            )
        category, sample_id = parts
        if category not in SINGER_CATEGORIES:
            raise FormatError(f"{path}:{number}: unknown category {category!r}")
        pool.setdefault(category, []).append(sample_id)
    return pool


def cmd_schedule(args) -> int:
    config = _config_from(args)
    pool = _read_sample_pool(_require_file(args.samples, "sample list"))
    schedule = make_schedule(args.participants, pool, seed=config.seed)
    write_schedule(args.out, schedule)
    participants = len({q.participant_id for q in schedule})
    print(f"scheduled {len(schedule)} questions for {participants} participant(s)")
    return 0


def cmd_aggregate(args) -> int:
    records = read_scores(_require_file(args.scores, "score file"))
    lines = summary_lines(aggregate_cmos(records))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve(args) -> int:
    from .service import build_app
    import uvicorn

    schedule = read_schedule(_require_file(args.schedule, "schedule manifest"))
    media_dir = Path(args.media)
    if not media_dir.is_dir():
        raise UsageError(f"media directory not found: {media_dir}")
    ui_dir = None
    if args.ui:
        ui_dir = Path(args.ui)
        if not ui_dir.is_dir():
            raise UsageError(f"ui directory not found: {ui_dir}")
    app = build_app(schedule, media_dir, args.scores, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_config_flags(parser: argparse.ArgumentParser, diagnostics=False) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="noise generator seed")
    parser.add_argument("--sample-rate", dest="sample_rate", type=int)
    parser.add_argument("--frame-period", dest="frame_period", type=float)
    parser.add_argument("--mgc-order", dest="mgc_order", type=int)
    parser.add_argument("--mgc-alpha", dest="mgc_alpha", type=float)
    parser.add_argument("--hnm-order", dest="hnm_order", type=int)
    parser.add_argument("--hnm-regularization", dest="hnm_regularization", type=float)
    parser.add_argument("--hnm-lambda", dest="hnm_lambda", type=float)
    if diagnostics:
        parser.add_argument("--weak-threshold-db", dest="weak_threshold_db", type=float)
        parser.add_argument(
            "--interharmonic-gate-db", dest="interharmonic_gate_db", type=float
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singvoc", description="singing-voice analysis/resynthesis toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="extract vocoder features from audio")
    p.add_argument("--vocoder", required=True, choices=VOCODER_CHOICES)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--f0", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="synthesize audio from stored features")
    p.add_argument("--vocoder", choices=VOCODER_CHOICES)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="dsm voice model file")
    p.add_argument("--pulse", help="glottal pulse file for glott synthesis")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("copysynth", help="analyze then resynthesize, with metrics")
    p.add_argument(
        "--vocoder", required=True, choices=VOCODER_CHOICES + ("all",)
    )
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--f0", required=True)
    p.add_argument("--out", required=True,
                   help="output wav, or directory when --vocoder all")
    p.add_argument("--report", help="write the metric table here instead of stdout")
    p.add_argument("--model", help="dsm voice model file")
    p.add_argument("--pulse", help="glottal pulse file for glott synthesis")
    p.add_argument("--force", action="store_true",
                   help="allow overwriting the input file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_copysynth)

    p = sub.add_parser("train-dsm", help="train the deterministic-plus-stochastic voice model")
    p.add_argument("--corpus", required=True, help="directory of wav + .f0 pairs")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_dsm)

    p = sub.add_parser("diagnose", help="scan audio for high-pitch analysis artifacts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--f0", required=True)
    p.add_argument("--out", help="report file (default: stdout)")
    _add_config_flags(p, diagnostics=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("schedule", help="lay out a listening-test schedule")
    p.add_argument("--participants", type=int, required=True)
    p.add_argument("--samples", required=True,
                   help="tsv of category<TAB>sample_id lines")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("aggregate", help="summarize collected scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", help="summary file (default: stdout)")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("serve", help="run the listening-test collection service")
    p.add_argument("--schedule", required=True)
    p.add_argument("--media", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument(
        "--port",
        type=int,
        default=int(os.environ.get("SINGVOC_PORT", "8000")),
        help="defaults to SINGVOC_PORT or 8000",
    )
    p.add_argument("--ui", help="directory of static client files to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as error:
        print(f"error: {error}", file=sys.stderr)
        return 2
    except (ConfigError, FormatError, SchedulingError, ValueError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
