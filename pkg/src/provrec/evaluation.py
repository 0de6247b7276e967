"""Evaluation harness: k-fold cross validation, ROC/AUC, expert baseline.

The system and the expert baseline are scored through the same
`roc_curve`/`auc` code path: anything that can produce (score, label)
pairs gets the identical curve treatment.  Labels come from observed
execution outcomes, with rating 2 (success) as the positive class.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from ._fileio import FormatError, atomic_write_text, format_float, meta_comment
from .factorization import TrainConfig, als_fit
from .matrix import UtilityMatrix

ROC_HEADER = ["threshold", "fpr", "tpr", "tp", "fp", "tn", "fn"]
SURVEY_HEADER = ["pipeline_id", "dataset_id", "expert_id", "prediction", "confidence"]

CONFIDENCE_LEVELS = ("none", "some", "good", "expert")


@dataclass(frozen=True)
class ExpertVote:
    """One expert's predicted outcome for a pipeline-dataset pair.

    Votes exist only where the expert reported good (2) or expert (3)
    knowledge of both the pipeline and the dataset; the 0-3 scale is the
    survey's full confidence range.
    """

    expert_id: str
    prediction: int
    confidence: int

    def __post_init__(self) -> None:
        if self.prediction not in (1, 2):
            raise ValueError(f"prediction must be 1 or 2, got {self.prediction!r}")
        if self.confidence not in (0, 1, 2, 3):
            raise ValueError(f"confidence must be in 0..3, got {self.confidence!r}")
        if self.confidence < 2:
            raise ValueError(
                f"a vote requires confidence 'good' or 'expert', got "
                f"{CONFIDENCE_LEVELS[self.confidence]!r}"
            )


@dataclass(frozen=True)
class ExpertSurvey:
    """Expert votes keyed by (pipeline_id, dataset_id); unvoted pairs are absent."""

    votes: dict[tuple[str, str], tuple[ExpertVote, ...]]

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self.votes)


@dataclass(frozen=True)
class RocPoint:
    """Confusion counts and rates at one decision threshold."""

    threshold: float
    fpr: float
    tpr: float
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")
        if self.tp + self.fn > 0 and self.tpr != self.tp / (self.tp + self.fn):
            raise ValueError("tpr inconsistent with tp/(tp+fn)")
        if self.fp + self.tn > 0 and self.fpr != self.fp / (self.fp + self.tn):
            raise ValueError("fpr inconsistent with fp/(fp+tn)")
        if not (0.0 <= self.tpr <= 1.0 and 0.0 <= self.fpr <= 1.0):
            raise ValueError("rates must lie in [0, 1]")


@dataclass
class EvaluationReport:
    """Cross-validation output plus the optional expert baseline."""

    fold_assignments: dict[tuple[int, int], int]
    roc: list[RocPoint]
    auc: float
    per_fold_auc: list[float]
    n_cold_start: int
    n_scored: int
    config: dict
    baseline_roc: list[RocPoint] | None = None
    baseline_auc: float | None = None


@dataclass(frozen=True)
class ConfidenceComparison:
    """Mann-Whitney comparison of expert confidence between outcome classes."""

    mean_conf_success: float
    mean_conf_failure: float
    u_statistic: float
    p_value: float


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground truth behind a generated matrix: block labels and flipped pairs."""

    pipeline_blocks: tuple[int, ...]
    dataset_blocks: tuple[int, ...]
    flipped: tuple[tuple[int, int], ...]

    def true_rating(self, u: int, i: int) -> int:
        return 2 if self.pipeline_blocks[u] == self.dataset_blocks[i] else 1


def kfold_split(
    matrix: UtilityMatrix, k: int, seed: int, stratified: bool = True
) -> dict[tuple[int, int], int]:
    """Partition observed entries into k folds, sizes differing by at most 1.

    Stratified splitting shuffles each rating class and deals the classes
    consecutively round-robin, so every fold's success count is within one
    entry of the class share.  Deterministic given the seed.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    entries = [(u, i) for u, i, _ in matrix.entries()]
    if k > len(entries):
        raise ValueError(f"k={k} exceeds the {len(entries)} observed entries")
    rng = np.random.default_rng(seed)
    if stratified:
        positives = [e for e in entries if matrix.ratings[e] == 2]
        negatives = [e for e in entries if matrix.ratings[e] == 1]
        deck = [positives[j] for j in rng.permutation(len(positives))]
        deck += [negatives[j] for j in rng.permutation(len(negatives))]
    else:
        deck = [entries[j] for j in rng.permutation(len(entries))]
    fold_order = rng.permutation(k)
    return {entry: int(fold_order[j % k]) for j, entry in enumerate(deck)}


def default_thresholds(scores: Iterable[float]) -> list[float]:
    """Every distinct score plus -inf/+inf sentinels: the exact empirical sweep."""
    return sorted(set(scores)) + [float("-inf"), float("inf")]


def roc_curve(
    scored: Sequence[tuple[float, int]], thresholds: Sequence[float]
) -> list[RocPoint]:
    """One confusion point per threshold, predicting success iff score >= threshold.

    Points come back sorted by ascending false-positive rate.  Requires at
    least one observation of each class.
    """
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    for _, label in scored:
        if label not in (1, 2):
            raise ValueError(f"labels must be 1 or 2, got {label!r}")
    pos = np.sort(np.array([s for s, lab in scored if lab == 2], dtype=np.float64))
    neg = np.sort(np.array([s for s, lab in scored if lab == 1], dtype=np.float64))
    if pos.size == 0:
        raise ValueError("scored set has no successful executions (label 2)")
    if neg.size == 0:
        raise ValueError("scored set has no failed executions (label 1)")
    points = []
    for tau in thresholds:
        # Count of scores >= tau, matching the inclusive-boundary classify rule.
        tp = int(pos.size - np.searchsorted(pos, tau, side="left"))
        fp = int(neg.size - np.searchsorted(neg, tau, side="left"))
        fn = int(pos.size) - tp
        tn = int(neg.size) - fp
        points.append(
            RocPoint(
                threshold=float(tau),
                fpr=fp / neg.size,
                tpr=tp / pos.size,
                tp=tp,
                fp=fp,
                tn=tn,
                fn=fn,
            )
        )
    points.sort(key=lambda pt: (pt.fpr, pt.tpr, -pt.threshold))
    return points


def auc(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the ROC, with (0,0) and (1,1) corners ensured.

    With thresholds at every distinct score this equals the
    concordant-pair (Mann-Whitney) statistic with ties counted half.
    """
    if not points:
        raise ValueError("auc needs at least one ROC point")
    coords = {(pt.fpr, pt.tpr) for pt in points}
    coords.add((0.0, 0.0))
    coords.add((1.0, 1.0))
    path = sorted(coords)
    if len(path) < 2:
        raise ValueError("auc needs at least two distinct ROC coordinates")
    area = 0.0
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def cross_validate(
    matrix: UtilityMatrix,
    train_config: TrainConfig = TrainConfig(),
    k: int = 10,
    seed: int = 0,
    thresholds: Sequence[float] | None = None,
    stratified: bool = True,
    jobs: int = 1,
) -> EvaluationReport:
    """Score every observed entry while held out of training, then pool into one ROC.

    Each fold's model is fit on the other k-1 folds with the full index
    kept, so a pipeline or dataset left fully unobserved by a split is
    scored through the cold-start fallback and counted, never an error.
    `thresholds` of None sweeps every distinct held-out score.
    """
    if thresholds is not None and not list(thresholds):
        raise ValueError("thresholds must be nonempty")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    folds = kfold_split(matrix, k, seed, stratified)
    held_by_fold: list[list[tuple[int, int]]] = [[] for _ in range(k)]
    for pair, f in folds.items():
        held_by_fold[f].append(pair)

    def run_fold(f: int) -> tuple[list[tuple[float, int]], int]:
        held = sorted(held_by_fold[f])
        model = als_fit(matrix.without(held), train_config)
        scored, cold = [], 0
        for u, i in held:
            pred = model.predict_raw(u, i)
            scored.append((pred.score, matrix.ratings[(u, i)]))
            cold += pred.cold_start
        return scored, cold

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, range(k)))
    else:
        results = [run_fold(f) for f in range(k)]

    pooled: list[tuple[float, int]] = []
    per_fold_auc: list[float] = []
    n_cold = 0
    for scored, cold in results:
        pooled.extend(scored)
        n_cold += cold
        labels = {lab for _, lab in scored}
        if labels == {1, 2}:
            fold_points = roc_curve(scored, default_thresholds(s for s, _ in scored))
            per_fold_auc.append(auc(fold_points))
        else:
            per_fold_auc.append(float("nan"))

    sweep = list(thresholds) if thresholds is not None else default_thresholds(s for s, _ in pooled)
    points = roc_curve(pooled, sweep)
    return EvaluationReport(
        fold_assignments=folds,
        roc=points,
        auc=auc(points),
        per_fold_auc=per_fold_auc,
        n_cold_start=n_cold,
        n_scored=len(pooled),
        config={
            "k_folds": k,
            "seed": seed,
            "stratified": stratified,
            "thresholds": "auto" if thresholds is None else [float(t) for t in thresholds],
            "train": asdict(train_config),
        },
    )


def expert_fraction(survey: ExpertSurvey, pair: tuple[str, str]) -> float | None:
    """Fraction of experts predicting success for the pair; None when unvoted."""
    votes = survey.votes.get(pair)
    if not votes:
        return None
    return sum(1 for v in votes if v.prediction == 2) / len(votes)


def expert_roc(
    survey: ExpertSurvey,
    matrix: UtilityMatrix,
    thresholds: Sequence[float] | None = None,
) -> tuple[list[RocPoint], float]:
    """ROC of the expert-vote baseline over pairs that were voted on and executed.

    The predictor thresholds the fraction of experts predicting success;
    labels come from the observed outcomes.  Thresholds, when given, are
    fractions in [0, 1]; the default sweeps every distinct fraction.
    """
    pindex = matrix.pipeline_index
    dindex = matrix.dataset_index
    scored: list[tuple[float, int]] = []
    for pid, did in survey.pairs():
        u, i = pindex.get(pid), dindex.get(did)
        if u is None or i is None or (u, i) not in matrix.ratings:
            continue
        fraction = expert_fraction(survey, (pid, did))
        if fraction is None:  # pair present but unvoted
            continue
        scored.append((fraction, matrix.ratings[(u, i)]))
    if not scored:
        raise ValueError("no pair has both expert votes and an observed execution")
    sweep = list(thresholds) if thresholds is not None else default_thresholds(s for s, _ in scored)
    points = roc_curve(scored, sweep)
    return points, auc(points)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and values[order[stop + 1]] == values[order[start]]:
            stop += 1
        ranks[order[start : stop + 1]] = (start + stop) / 2.0 + 1.0
        start = stop + 1
    return ranks


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U for `x` vs `y`: (U of x, p-value).

    Normal approximation with tie correction, no continuity correction.
    A fully tied sample has zero variance and yields p = 1.0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    combined = np.concatenate([x, y])
    ranks = _average_ranks(combined)
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float((counts.astype(np.float64) ** 3 - counts).sum())
    variance = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if variance <= 0.0:
        return u1, 1.0
    z = (u1 - n1 * n2 / 2.0) / math.sqrt(variance)
    return u1, math.erfc(abs(z) / math.sqrt(2.0))


def confidence_comparison(survey: ExpertSurvey, matrix: UtilityMatrix) -> ConfidenceComparison:
    """Compare per-pair mean expert confidence between successful and failed executions."""
    pindex = matrix.pipeline_index
    dindex = matrix.dataset_index
    success_conf: list[float] = []
    failure_conf: list[float] = []
    for (pid, did), votes in survey.votes.items():
        u, i = pindex.get(pid), dindex.get(did)
        if not votes or u is None or i is None or (u, i) not in matrix.ratings:
            continue
        mean_conf = sum(v.confidence for v in votes) / len(votes)
        if matrix.ratings[(u, i)] == 2:
            success_conf.append(mean_conf)
        else:
            failure_conf.append(mean_conf)
    if not success_conf:
        raise ValueError("no voted pair with a successful execution")
    if not failure_conf:
        raise ValueError("no voted pair with a failed execution")
    u_stat, p_value = mann_whitney_u(success_conf, failure_conf)
    return ConfidenceComparison(
        mean_conf_success=sum(success_conf) / len(success_conf),
        mean_conf_failure=sum(failure_conf) / len(failure_conf),
        u_statistic=u_stat,
        p_value=p_value,
    )


def generate_synthetic(
    n_pipelines: int,
    n_datasets: int,
    n_blocks: int,
    density: float,
    noise_rate: float,
    seed: int,
) -> tuple[UtilityMatrix, SyntheticTruth]:
    """Block-structured matrix: a pair truly succeeds iff its blocks match.

    Pipelines and datasets are spread evenly over blocks (shuffled), a
    `density` fraction of pairs is observed uniformly at random, and each
    observation flips with probability `noise_rate`.  Deterministic given
    the seed.
    """
    if n_pipelines < 1 or n_datasets < 1:
        raise ValueError("matrix dimensions must be positive")
    if not 1 <= n_blocks <= min(n_pipelines, n_datasets):
        raise ValueError(f"n_blocks must be in [1, {min(n_pipelines, n_datasets)}], got {n_blocks}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if not 0.0 <= noise_rate < 0.5:
        raise ValueError(f"noise_rate must be in [0, 0.5), got {noise_rate}")
    total = n_pipelines * n_datasets
    n_obs = round(density * total)
    if n_obs < 1:
        raise ValueError(f"density {density} observes no pair of {total}")

    rng = np.random.default_rng(seed)
    pipeline_blocks = rng.permutation([u % n_blocks for u in range(n_pipelines)])
    dataset_blocks = rng.permutation([i % n_blocks for i in range(n_datasets)])
    chosen = rng.choice(total, size=n_obs, replace=False)
    flips = rng.random(n_obs) < noise_rate

    ratings: dict[tuple[int, int], int] = {}
    flipped: list[tuple[int, int]] = []
    for cell, flip in zip(chosen, flips):
        u, i = int(cell) // n_datasets, int(cell) % n_datasets
        rating = 2 if pipeline_blocks[u] == dataset_blocks[i] else 1
        if flip:
            rating = 3 - rating
            flipped.append((u, i))
        ratings[(u, i)] = rating

    matrix = UtilityMatrix(
        tuple(f"P{u:03d}" for u in range(n_pipelines)),
        tuple(f"D{i:03d}" for i in range(n_datasets)),
        ratings,
    )
    truth = SyntheticTruth(
        tuple(int(b) for b in pipeline_blocks),
        tuple(int(b) for b in dataset_blocks),
        tuple(sorted(flipped)),
    )
    return matrix, truth


def parse_survey(stream: IO[str] | str) -> ExpertSurvey:
    """Parse votes from `pipeline_id,dataset_id,expert_id,prediction,confidence` text."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = [r for r in stream if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("survey file is empty") from None
    if [h.strip() for h in header] != SURVEY_HEADER:
        raise FormatError(f"survey header must be {','.join(SURVEY_HEADER)!r}, got {header!r}")
    votes: dict[tuple[str, str], list[ExpertVote]] = {}
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 5:
            raise FormatError(f"survey row {row_no}: expected 5 columns, got {len(row)}")
        pid, did, expert, prediction, confidence = (c.strip() for c in row)
        pred_map = {"success": 2, "failure": 1}
        if prediction.lower() not in pred_map:
            raise FormatError(f"survey row {row_no}: prediction must be success or failure")
        try:
            conf = int(confidence)
        except ValueError:
            raise FormatError(f"survey row {row_no}: confidence must be an integer 0..3") from None
        try:
            vote = ExpertVote(expert, pred_map[prediction.lower()], conf)
        except ValueError as exc:
            raise FormatError(f"survey row {row_no}: {exc}") from None
        votes.setdefault((pid, did), []).append(vote)
    return ExpertSurvey({pair: tuple(vs) for pair, vs in votes.items()})


def parse_survey_path(path: str | Path) -> ExpertSurvey:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_survey(fh)


def write_roc(path: str | Path, points: Iterable[RocPoint], meta: dict | None = None) -> None:
    """Write `threshold,fpr,tpr,tp,fp,tn,fn` rows."""
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROC_HEADER)
    for pt in points:
        writer.writerow(
            [
                format_float(pt.threshold),
                format_float(pt.fpr),
                format_float(pt.tpr),
                pt.tp,
                pt.fp,
                pt.tn,
                pt.fn,
            ]
        )
    atomic_write_text(path, buf.getvalue())


def _roc_points_doc(points: Iterable[RocPoint]) -> list[dict]:
    # Sentinel thresholds are +/-inf, which strict JSON lacks; emit as strings.
    return [
        {
            "threshold": pt.threshold if math.isfinite(pt.threshold) else format_float(pt.threshold),
            "fpr": pt.fpr,
            "tpr": pt.tpr,
            "tp": pt.tp,
            "fp": pt.fp,
            "tn": pt.tn,
            "fn": pt.fn,
        }
        for pt in points
    ]


def report_to_json(report: EvaluationReport, meta: dict | None = None) -> str:
    """Serialize the full report; NaN per-fold AUCs become nulls."""
    doc: dict = {
        "format": "provrec-evaluation-report",
        "version": 1,
        "config": report.config,
        "auc": report.auc,
        "per_fold_auc": [None if math.isnan(a) else a for a in report.per_fold_auc],
        "n_cold_start": report.n_cold_start,
        "n_scored": report.n_scored,
        "fold_assignments": [[u, i, f] for (u, i), f in sorted(report.fold_assignments.items())],
        "roc": _roc_points_doc(report.roc),
        "baseline_auc": report.baseline_auc,
        "baseline_roc": None if report.baseline_roc is None else _roc_points_doc(report.baseline_roc),
    }
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"
