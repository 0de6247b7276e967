"""Turn raw predicted ratings into binary outcomes and ranked recommendations."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ._fileio import atomic_write_text, format_float, meta_comment
from .factorization import FactorModel

RECOMMENDATION_HEADER = ["rank", "subject_id", "score", "predicted_outcome", "cold_start"]


@dataclass(frozen=True)
class Recommendation:
    """One ranked subject (pipeline or dataset) with its score and rounded outcome."""

    subject_id: str
    score: float
    predicted_outcome: int
    cold_start: bool


def classify(score: float, threshold: float) -> int:
    """Round a raw score to 2 (success) iff score >= threshold, else 1 (failure).

    The boundary counts as success so a threshold sweep over observed
    score values is exhaustive.
    """
    if not math.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold!r}")
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score!r}")
    return 2 if score >= threshold else 1


def _ranked(
    scored: Iterable[tuple[int, str, float, bool]], top_n: int, threshold: float
) -> list[Recommendation]:
    # Sort by score descending, ties broken by index order for reproducibility.
    kept = [(idx, sid, score, cold) for idx, sid, score, cold in scored if score >= threshold]
    kept.sort(key=lambda t: (-t[2], t[0]))
    return [
        Recommendation(sid, score, classify(score, threshold), cold)
        for _, sid, score, cold in kept[:top_n]
    ]


def recommend_pipelines(
    model: FactorModel, dataset_id: str, top_n: int, threshold: float
) -> list[Recommendation]:
    """Pipelines predicted to succeed on a dataset, best score first.

    Scores every pipeline, keeps those at or above the threshold, and
    truncates to `top_n`.  Cold-start pipelines rank by the training mean
    and stay flagged so callers can exclude them.
    """
    if top_n < 0:
        raise ValueError(f"top_n must be >= 0, got {top_n}")
    try:
        i = model.dataset_index[dataset_id]
    except KeyError:
        raise KeyError(f"unknown dataset {dataset_id!r}") from None
    scored = []
    for u, pid in enumerate(model.pipeline_ids):
        pred = model.predict_raw(u, i)
        scored.append((u, pid, pred.score, pred.cold_start))
    return _ranked(scored, top_n, threshold)


def recommend_datasets(
    model: FactorModel, pipeline_id: str, top_n: int, threshold: float
) -> list[Recommendation]:
    """Datasets a pipeline is predicted to process successfully, best first."""
    if top_n < 0:
        raise ValueError(f"top_n must be >= 0, got {top_n}")
    try:
        u = model.pipeline_index[pipeline_id]
    except KeyError:
        raise KeyError(f"unknown pipeline {pipeline_id!r}") from None
    scored = []
    for i, did in enumerate(model.dataset_ids):
        pred = model.predict_raw(u, i)
        scored.append((i, did, pred.score, pred.cold_start))
    return _ranked(scored, top_n, threshold)


def format_recommendations(recs: Iterable[Recommendation], meta: dict | None = None) -> str:
    """Render as `rank,subject_id,score,predicted_outcome,cold_start` text."""
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECOMMENDATION_HEADER)
    for rank, rec in enumerate(recs, start=1):
        writer.writerow(
            [rank, rec.subject_id, format_float(rec.score), rec.predicted_outcome, int(rec.cold_start)]
        )
    return buf.getvalue()


def write_recommendations(
    path: str | Path, recs: Iterable[Recommendation], meta: dict | None = None
) -> None:
    atomic_write_text(path, format_recommendations(recs, meta))
