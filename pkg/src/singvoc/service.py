"""HTTP service for collecting blind listening-test judgments.

The service owns the mapping from opaque media tokens to actual files, so a
participant's browser only ever sees reference/A/B tokens and can never
learn which vocoder produced a clip. Scores arrive as (participant,
question, score) and the server reattaches the hidden condition labels
before appending to the score file; it is the file's only writer.

Media files live flat in one directory: {sample_id}.wav holds the
reference recording and {sample_id}.{vocoder}.wav each vocoder's
resynthesis of it.
"""

from __future__ import annotations

import math
import secrets
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .formats import CmosRecord, append_score, read_scores
from .listening import ScheduleQuestion, aggregate_cmos

MEDIA_TOKEN_BYTES = 16


class ScoreSubmission(BaseModel):
    participant_id: str
    question_index: int = Field(ge=1)
    score: int = Field(ge=-3, le=3)


def _question_key(participant, category, a, b, sample):
    # unordered vocoder pair: a schedule never repeats a sample within one
    # pairing, so this identifies the question regardless of A/B flip
    return (participant, category, frozenset((a, b)), sample)


def reference_media_name(sample_id: str) -> str:
    return f"{sample_id}.wav"


def rendition_media_name(sample_id: str, vocoder: str) -> str:
    return f"{sample_id}.{vocoder}.wav"


def build_app(
    schedule: list[ScheduleQuestion],
    media_dir,
    scores_path,
    ui_dir=None,
) -> FastAPI:
    """Wire a schedule, its media files, and a score file into an app.

    Raises FileNotFoundError immediately if any media file a question
    needs is absent; a half-servable test would corrupt the balance of
    the design. Existing scores are replayed so a restarted service
    resumes sessions instead of collecting duplicates.
    """
    media_dir = Path(media_dir)
    scores_path = Path(scores_path)

    sessions: dict[str, list[ScheduleQuestion]] = {}
    for question in schedule:
        sessions.setdefault(question.participant_id, []).append(question)
    for participant_id, questions in sessions.items():
        questions.sort(key=lambda q: q.index)
        if [q.index for q in questions] != list(range(len(questions))):
            raise ValueError(
                f"participant {participant_id!r}: question indices are not 0..n-1"
            )

    tokens: dict[str, Path] = {}

    def register(name: str) -> str:
        path = media_dir / name
        if not path.is_file():
            raise FileNotFoundError(f"media file missing: {path}")
        token = secrets.token_hex(MEDIA_TOKEN_BYTES)
        tokens[token] = path
        return token

    views: dict[tuple[str, int], dict[str, str]] = {}
    for q in schedule:
        views[(q.participant_id, q.index)] = {
            "reference": register(reference_media_name(q.sample_id)),
            "a": register(rendition_media_name(q.sample_id, q.vocoder_a)),
            "b": register(rendition_media_name(q.sample_id, q.vocoder_b)),
        }

    by_key = {
        _question_key(
            q.participant_id, q.singer_category, q.vocoder_a, q.vocoder_b, q.sample_id
        ): q
        for q in schedule
    }
    answered: set[tuple[str, int]] = set()
    if scores_path.exists():
        for record in read_scores(scores_path):
            match = by_key.get(
                _question_key(
                    record.participant_id,
                    record.singer_category,
                    record.vocoder_a,
                    record.vocoder_b,
                    record.sample_id,
                )
            )
            if match is not None:
                answered.add((match.participant_id, match.index))
    write_lock = threading.Lock()

    app = FastAPI(title="singing-voice listening test")

    def _progress(participant_id: str) -> tuple[int, int]:
        questions = sessions[participant_id]
        count = sum((participant_id, q.index) in answered for q in questions)
        return count, len(questions)

    @app.get("/api/session/{participant_id}")
    def next_question(participant_id: str):
        questions = sessions.get(participant_id)
        if questions is None:
            raise HTTPException(404, f"unknown participant {participant_id!r}")
        done_count, total = _progress(participant_id)
        for q in questions:
            if (participant_id, q.index) in answered:
                continue
            view = views[(participant_id, q.index)]
            return {
                "participant_id": participant_id,
                "done": False,
                "question_index": q.index + 1,
                "total": total,
                "answered": done_count,
                "category": q.singer_category,
                "reference": view["reference"],
                "a": view["a"],
                "b": view["b"],
            }
        return {
            "participant_id": participant_id,
            "done": True,
            "total": total,
            "answered": done_count,
        }

    @app.get("/media/{token}")
    def media(token: str):
        path = tokens.get(token)
        if path is None:
            raise HTTPException(404, "unknown media id")
        return Response(content=path.read_bytes(), media_type="audio/wav")

    @app.post("/api/score")
    def submit_score(submission: ScoreSubmission):
        questions = sessions.get(submission.participant_id)
        if questions is None:
            raise HTTPException(
                404, f"unknown participant {submission.participant_id!r}"
            )
        if submission.question_index > len(questions):
            raise HTTPException(
                404, f"no question {submission.question_index} in this session"
            )
        q = questions[submission.question_index - 1]
        key = (q.participant_id, q.index)
        with write_lock:
            if key in answered:
                recorded = False
            else:
                record = CmosRecord(
                    participant_id=q.participant_id,
                    singer_category=q.singer_category,
                    vocoder_a=q.vocoder_a,
                    vocoder_b=q.vocoder_b,
                    sample_id=q.sample_id,
                    score=submission.score,
                )
                append_score(scores_path, record)
                answered.add(key)
                recorded = True
        done_count, total = _progress(submission.participant_id)
        return {
            "recorded": recorded,
            "already": not recorded,
            "question_index": submission.question_index,
            "answered": done_count,
            "total": total,
            "done": done_count == total,
        }

    @app.get("/api/summary")
    def summary():
        records = read_scores(scores_path) if scores_path.exists() else []
        cells = aggregate_cmos(records)
        return [
            {
                "vocoder": cell.vocoder,
                "category": cell.singer_category,
                "mean": None if math.isnan(cell.mean) else cell.mean,
                "ci95": cell.ci95,
                "count": cell.count,
            }
            for cell in cells
        ]

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
