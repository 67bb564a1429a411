"""Run configuration shared by the command-line tools.

A Config collects the knobs that the analysis and synthesis modules accept,
with the same defaults those modules declare. Values can come from a plain
key=value text file (one pair per line, # starts a comment) and individual
command-line flags override whatever the file said, so an experiment is
reproducible from its config file plus the invocation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .diagnostics import INTERHARMONIC_GATE_DB, WEAK_HARMONIC_THRESHOLD_DB
from .envelope import DEFAULT_ALPHA, HNM_CEPSTRUM_ORDER, MGC_ORDER
from .glott import HNR_BANDS
from .hnm import DEFAULT_FM_LAMBDA


class ConfigError(ValueError):
    """A config file line or value the tools cannot accept."""


@dataclass(frozen=True)
class Config:
    sample_rate: int = 16000
    frame_period: float = 0.005
    mgc_order: int = MGC_ORDER
    mgc_alpha: float = DEFAULT_ALPHA
    hnm_order: int = HNM_CEPSTRUM_ORDER
    hnm_regularization: float = 2e-4
    hnm_lambda: float = DEFAULT_FM_LAMBDA
    glott_bands: int = HNR_BANDS
    seed: int = 0
    weak_harmonic_threshold_db: float = WEAK_HARMONIC_THRESHOLD_DB
    interharmonic_gate_db: float = INTERHARMONIC_GATE_DB


def validate_config(config: Config) -> Config:
    """Check every field against the range its consuming module declares."""
    if config.sample_rate <= 0:
        raise ConfigError(f"sample_rate must be positive, got {config.sample_rate}")
    if config.frame_period <= 0:
        raise ConfigError(f"frame_period must be positive, got {config.frame_period}")
    if config.mgc_order < 1 or config.hnm_order < 1:
        raise ConfigError("cepstrum orders must be at least 1")
    if not -1.0 < config.mgc_alpha < 1.0:
        raise ConfigError(f"mgc_alpha must lie in (-1, 1), got {config.mgc_alpha}")
    if config.hnm_regularization < 0:
        raise ConfigError("hnm_regularization cannot be negative")
    if config.hnm_lambda < 0:
        raise ConfigError("hnm_lambda cannot be negative")
    if config.glott_bands != HNR_BANDS:
        # the 47-column row layout reserves exactly HNR_BANDS slots
        raise ConfigError(
            f"glott_bands is fixed at {HNR_BANDS} by the feature layout, "
            f"got {config.glott_bands}"
        )
    if config.weak_harmonic_threshold_db <= 0:
        raise ConfigError("weak_harmonic_threshold_db must be positive")
    if config.interharmonic_gate_db <= 0:
        raise ConfigError("interharmonic_gate_db must be positive")
    return config


def load_config(path) -> Config:
    """Parse a key=value config file into a validated Config."""
    text = Path(path).read_text(encoding="utf-8")
    types = {f.name: f.type for f in fields(Config)}
    converters = {"int": int, "float": float}
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in types:
            raise ConfigError(f"{path}:{number}: unknown key {key!r}")
        try:
            values[key] = converters[types[key]](value)
        except ValueError:
            raise ConfigError(
                f"{path}:{number}: {key} expects {types[key]}, got {value!r}"
            ) from None
    return validate_config(Config(**values))


def override_config(config: Config, **overrides) -> Config:
    """Apply non-None flag values on top of a config and revalidate."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    for key in changes:
        if key not in {f.name for f in fields(Config)}:
            raise ConfigError(f"unknown config field {key!r}")
    if not changes:
        return config
    return validate_config(replace(config, **changes))
