"""Comparative listening-test scheduling and score aggregation.

make_schedule lays out a full comparison session: every unordered pair of
vocoders is judged twice per singer category by every participant, which
comes to 36 questions each. aggregate_cmos folds the collected judgments
into one summary per (vocoder, category) cell with a normal-approximation
confidence interval. Both ends serialize as tab-separated lines so the CLI
and the collection service can pass them through files.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .formats import SINGER_CATEGORIES, SYNTH_VOCODERS, CmosRecord, FormatError

QUESTIONS_PER_PAIRING = 2

PAIRINGS = tuple(combinations(SYNTH_VOCODERS, 2))

SCHEDULE_HEADER = "\t".join(
    ["participant", "index", "category", "vocoder_a", "vocoder_b", "sample_id"]
)

CMOS_HEADER = "\t".join(["vocoder", "category", "mean", "ci95", "count"])


class SchedulingError(ValueError):
    """A category's sample pool cannot support the requested layout."""


@dataclass(frozen=True)
class ScheduleQuestion:
    """One blind comparison to be answered by one participant.

    index runs 0..35 within the participant's session and fixes the
    presentation order. vocoder_a is the clip played as "A"; the listener
    never sees either name.
    """

    participant_id: str
    index: int
    singer_category: str
    vocoder_a: str
    vocoder_b: str
    sample_id: str

    def to_line(self) -> str:
        return "\t".join(
            [
                self.participant_id,
                str(self.index),
                self.singer_category,
                self.vocoder_a,
                self.vocoder_b,
                self.sample_id,
            ]
        )


def make_schedule(
    participants: int | Sequence[str],
    samples: Mapping[str, Sequence[str]],
    questions_per_pairing: int = QUESTIONS_PER_PAIRING,
    seed: int = 0,
) -> list[ScheduleQuestion]:
    """Build the full question list for a comparison test.

    participants is either a count (ids become p01, p02, ...) or explicit
    ids. samples maps each singer category to the ids of its source
    excerpts; every category needs at least questions_per_pairing entries
    because the questions of one pairing are asked on distinct samples.

    Each participant judges every vocoder pairing questions_per_pairing
    times per category. Sample choice, A/B order, and question order are
    randomized per participant but fully determined by seed.
    """
    if isinstance(participants, int):
        if participants < 1:
            raise ValueError(f"need at least one participant, got {participants}")
        ids = [f"p{i + 1:02d}" for i in range(participants)]
    else:
        ids = list(participants)
        if not ids:
            raise ValueError("participant id list is empty")
        if len(set(ids)) != len(ids):
            raise ValueError("participant ids must be unique")
    if questions_per_pairing < 1:
        raise ValueError(
            f"questions_per_pairing must be positive, got {questions_per_pairing}"
        )
    pools = {}
    for category in SINGER_CATEGORIES:
        pool = list(samples.get(category, ()))
        if len(pool) < questions_per_pairing:
            raise SchedulingError(
                f"category {category!r} has {len(pool)} sample(s); "
                f"need at least {questions_per_pairing}"
            )
        pools[category] = pool

    rng = np.random.default_rng(seed)
    schedule = []
    for participant in ids:
        session = []
        for category in SINGER_CATEGORIES:
            pool = pools[category]
            for pair in PAIRINGS:
                chosen = rng.choice(
                    len(pool), size=questions_per_pairing, replace=False
                )
                for sample_index in chosen:
                    a, b = pair if rng.random() < 0.5 else pair[::-1]
                    session.append((category, a, b, pool[int(sample_index)]))
        for index, place in enumerate(rng.permutation(len(session))):
            category, a, b, sample_id = session[int(place)]
            schedule.append(
                ScheduleQuestion(
                    participant_id=participant,
                    index=index,
                    singer_category=category,
                    vocoder_a=a,
                    vocoder_b=b,
                    sample_id=sample_id,
                )
            )
    return schedule


def write_schedule(path, schedule: Sequence[ScheduleQuestion]) -> None:
    """Write a schedule manifest: header line, then one question per line."""
    lines = [SCHEDULE_HEADER]
    lines.extend(q.to_line() for q in schedule)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_schedule(path) -> list[ScheduleQuestion]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != SCHEDULE_HEADER:
        raise FormatError(f"{path}: missing schedule header line")
    questions = []
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 6:
            raise FormatError(f"{path}:{number}: expected 6 fields, got {len(parts)}")
        participant, index, category, a, b, sample_id = parts
        if category not in SINGER_CATEGORIES:
            raise FormatError(f"{path}:{number}: unknown category {category!r}")
        if a not in SYNTH_VOCODERS or b not in SYNTH_VOCODERS or a == b:
            raise FormatError(f"{path}:{number}: bad vocoder pair {a!r}/{b!r}")
        questions.append(
            ScheduleQuestion(
                participant_id=participant,
                index=int(index),
                singer_category=category,
                vocoder_a=a,
                vocoder_b=b,
                sample_id=sample_id,
            )
        )
    return questions


@dataclass(frozen=True)
class CmosSummary:
    """Aggregated comparison result for one (vocoder, category) cell.

    mean is NaN when no record touched the cell; ci95 is the 1.96·stderr
    half-width, 0 when fewer than two scores exist.
    """

    vocoder: str
    singer_category: str
    mean: float
    ci95: float
    count: int

    def to_line(self) -> str:
        mean = "-" if math.isnan(self.mean) else f"{self.mean:+.3f}"
        return "\t".join(
            [self.vocoder, self.singer_category, mean,
             f"{self.ci95:.3f}", str(self.count)]
        )


def aggregate_cmos(records: Sequence[CmosRecord]) -> list[CmosSummary]:
    """Fold pairwise judgments into per-(vocoder, category) summaries.

    Positive scores favor the clip played first, so each record adds
    +score to vocoder_a's cell and -score to vocoder_b's. Every cell of
    the 4 vocoders x 3 categories grid is returned, in constant order,
    including untouched ones.
    """
    contributions: dict[tuple[str, str], list[float]] = {
        (v, c): [] for v in SYNTH_VOCODERS for c in SINGER_CATEGORIES
    }
    for record in records:
        contributions[(record.vocoder_a, record.singer_category)].append(
            float(record.score)
        )
        contributions[(record.vocoder_b, record.singer_category)].append(
            -float(record.score)
        )
    summaries = []
    for vocoder in SYNTH_VOCODERS:
        for category in SINGER_CATEGORIES:
            scores = contributions[(vocoder, category)]
            n = len(scores)
            if n == 0:
                summaries.append(
                    CmosSummary(vocoder, category, float("nan"), 0.0, 0)
                )
                continue
            mean = float(np.mean(scores))
            if n > 1:
                stderr = float(np.std(scores, ddof=1)) / math.sqrt(n)
                ci = 1.96 * stderr
            else:
                ci = 0.0
            summaries.append(CmosSummary(vocoder, category, mean, ci, n))
    return summaries


def summary_lines(summaries: Sequence[CmosSummary]) -> list[str]:
    """Header plus one line per cell, ready to print or write."""
    return [CMOS_HEADER] + [s.to_line() for s in summaries]
