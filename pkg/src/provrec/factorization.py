"""Latent-factor completion of the utility matrix by alternating least squares.

The model minimizes

    sum over observed (u, i) of (target_ui - q_i . p_u)^2
        + reg * (sum_i ||q_i||^2 + sum_u ||p_u||^2)

where each factor row enters the regularizer exactly once (plain,
unweighted regularization; an opt-in flag scales it by each row's
observation count for parity with implementations that default to that).
By default the targets are ratings centered on the training mean and
predictions add the mean back; `center=False` fits raw ratings.  Each
half-sweep fixes one side and solves every row of the other side as a
small ridge system by Cholesky factorization, so the objective is
nonincreasing across half-sweeps.

The solver core (`fit_sparse`) works on arbitrary real-valued sparse
triples; `als_fit` applies it to a UtilityMatrix and carries the index
maps along.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._fileio import FormatError, atomic_write_text, format_float
from .matrix import UtilityMatrix

_JITTER = 1e-10


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one fit; all randomness flows from `seed`.

    `init_scale` of None means 1/sqrt(rank).  `tolerance` 0 disables the
    early stop on relative objective decrease.  With `center` on (the
    default) the factors fit deviations from the training mean and
    predictions add the mean back; at desk scale this generalizes far
    better than fitting raw ratings, which `center=False` restores.
    """

    rank: int = 8
    reg: float = 0.1
    max_iterations: int = 20
    tolerance: float = 1e-4
    seed: int = 0
    init_scale: float | None = None
    weighted_reg: bool = False
    center: bool = True

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.reg < 0:
            raise ValueError(f"reg must be >= 0, got {self.reg}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValueError(f"init_scale must be > 0, got {self.init_scale}")

    def resolved_init_scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 1.0 / math.sqrt(self.rank)


class Prediction(NamedTuple):
    score: float
    cold_start: bool


class FitResult(NamedTuple):
    """Raw output of the sparse solver, before index maps attach."""

    p: np.ndarray
    q: np.ndarray
    trace: list[float]
    row_observed: np.ndarray
    col_observed: np.ndarray
    mean_rating: float


@dataclass
class FactorModel:
    """Fitted factors: pipelines as rows of `p`, datasets as rows of `q`.

    Rows with no training observations keep their random initialization
    and are excluded from the observed masks; predictions involving them
    fall back to the training mean.
    """

    pipeline_ids: tuple[str, ...]
    dataset_ids: tuple[str, ...]
    p: np.ndarray
    q: np.ndarray
    reg: float
    global_mean: float
    observed_pipelines: np.ndarray
    observed_datasets: np.ndarray
    config: TrainConfig
    trace: list[float]

    @property
    def rank(self) -> int:
        return self.p.shape[1]

    @property
    def pipeline_index(self) -> dict[str, int]:
        return {pid: u for u, pid in enumerate(self.pipeline_ids)}

    @property
    def dataset_index(self) -> dict[str, int]:
        return {did: i for i, did in enumerate(self.dataset_ids)}

    @property
    def base(self) -> float:
        """Offset the factors were fit around: the training mean when centered."""
        return self.global_mean if self.config.center else 0.0

    def predict_raw(self, u: int, i: int) -> Prediction:
        """Predicted rating for (pipeline row, dataset column): base + dot product.

        Falls back to the training mean, flagged, when either side was
        unobserved at training time.
        """
        if not 0 <= u < self.p.shape[0]:
            raise IndexError(f"pipeline row {u} out of range [0, {self.p.shape[0]})")
        if not 0 <= i < self.q.shape[0]:
            raise IndexError(f"dataset column {i} out of range [0, {self.q.shape[0]})")
        if not (self.observed_pipelines[u] and self.observed_datasets[i]):
            return Prediction(self.global_mean, True)
        return Prediction(self.base + float(self.p[u] @ self.q[i]), False)


def ridge_solve(features: np.ndarray, targets: np.ndarray, reg: float) -> np.ndarray:
    """Solve (F'F + reg*I) x = F'y by Cholesky, with a diagonal jitter retry.

    The jitter path covers singular unregularized systems (fewer
    observations than factors with reg == 0); a system singular even
    after jitter raises LinAlgError.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    k = features.shape[1]
    gram = features.T @ features
    if reg:
        gram = gram + reg * np.eye(k)
    rhs = features.T @ targets
    try:
        return cho_solve(cho_factor(gram, lower=True), rhs)
    except np.linalg.LinAlgError:
        scale = max(1.0, float(np.trace(gram)) / k)
        jittered = gram + _JITTER * scale * np.eye(k)
        try:
            return cho_solve(cho_factor(jittered, lower=True), rhs)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "ridge system singular even after diagonal jitter"
            ) from None


def _pack_observations(
    triples: Sequence[tuple[int, int, float]], n_rows: int, n_cols: int
) -> tuple[list[tuple[np.ndarray, np.ndarray]], list[tuple[np.ndarray, np.ndarray]]]:
    """Per-row and per-column (indices, values) arrays for the half-sweeps."""
    by_row: dict[int, list[tuple[int, float]]] = {}
    by_col: dict[int, list[tuple[int, float]]] = {}
    for u, i, r in triples:
        by_row.setdefault(u, []).append((i, r))
        by_col.setdefault(i, []).append((u, r))

    def pack(groups: dict[int, list[tuple[int, float]]], n: int) -> list:
        packed = []
        for row in range(n):
            pairs = groups.get(row, [])
            idx = np.array([p[0] for p in pairs], dtype=np.intp)
            vals = np.array([p[1] for p in pairs], dtype=np.float64)
            packed.append((idx, vals))
        return packed

    return pack(by_row, n_rows), pack(by_col, n_cols)


def _sweep(
    target: np.ndarray,
    other: np.ndarray,
    observations: list[tuple[np.ndarray, np.ndarray]],
    reg: float,
    weighted: bool,
) -> None:
    """Solve every observed row of `target` in place, `other` held fixed."""
    for row, (idx, vals) in enumerate(observations):
        if idx.size == 0:
            continue
        reg_eff = reg * idx.size if weighted else reg
        target[row] = ridge_solve(other[idx], vals, reg_eff)


def _sse(p: np.ndarray, q: np.ndarray, us: np.ndarray, is_: np.ndarray, rs: np.ndarray) -> float:
    preds = np.einsum("ij,ij->i", p[us], q[is_])
    return float(np.square(rs - preds).sum())


def fit_sparse(
    n_rows: int,
    n_cols: int,
    triples: Sequence[tuple[int, int, float]],
    config: TrainConfig = TrainConfig(),
) -> FitResult:
    """Alternating ridge half-sweeps over sparse (row, col, value) triples.

    The trace holds the training objective at initialization and after
    every half-sweep; with unweighted regularization it is nonincreasing.
    Identical (triples, config) give bit-identical factors.
    """
    if not triples:
        raise ValueError("cannot fit with no observed entries")
    k = config.rank
    rng = np.random.default_rng(config.seed)
    scale = config.resolved_init_scale()
    p = rng.uniform(0.0, scale, size=(n_rows, k))
    q = rng.uniform(0.0, scale, size=(n_cols, k))

    raw_mean = float(np.mean([t[2] for t in triples]))
    base = raw_mean if config.center else 0.0
    targets = [(u, i, r - base) for u, i, r in triples]
    by_row, by_col = _pack_observations(targets, n_rows, n_cols)
    us = np.array([t[0] for t in targets], dtype=np.intp)
    is_ = np.array([t[1] for t in targets], dtype=np.intp)
    rs = np.array([t[2] for t in targets], dtype=np.float64)
    row_counts = np.array([idx.size for idx, _ in by_row], dtype=np.float64)
    col_counts = np.array([idx.size for idx, _ in by_col], dtype=np.float64)

    def current_objective() -> float:
        sse = _sse(p, q, us, is_, rs)
        if config.weighted_reg:
            penalty = float(
                row_counts @ np.square(p).sum(axis=1) + col_counts @ np.square(q).sum(axis=1)
            )
        else:
            penalty = float(np.square(p).sum() + np.square(q).sum())
        return sse + config.reg * penalty

    trace = [current_objective()]
    for _ in range(config.max_iterations):
        start = trace[-1]
        _sweep(p, q, by_row, config.reg, config.weighted_reg)
        trace.append(current_objective())
        _sweep(q, p, by_col, config.reg, config.weighted_reg)
        trace.append(current_objective())
        if config.tolerance > 0:
            drop = (start - trace[-1]) / max(abs(start), np.finfo(np.float64).tiny)
            if drop < config.tolerance:
                break

    return FitResult(
        p=p,
        q=q,
        trace=trace,
        row_observed=row_counts > 0,
        col_observed=col_counts > 0,
        mean_rating=raw_mean,
    )


def als_fit(matrix: UtilityMatrix, config: TrainConfig = TrainConfig()) -> FactorModel:
    """Fit factors for a utility matrix, keeping its index maps."""
    if matrix.n_entries == 0:
        raise ValueError("cannot fit a matrix with no observed entries")
    triples = [(u, i, float(r)) for u, i, r in matrix.entries()]
    result = fit_sparse(matrix.n_pipelines, matrix.n_datasets, triples, config)
    return FactorModel(
        pipeline_ids=matrix.pipeline_ids,
        dataset_ids=matrix.dataset_ids,
        p=result.p,
        q=result.q,
        reg=config.reg,
        global_mean=result.mean_rating,
        observed_pipelines=result.row_observed,
        observed_datasets=result.col_observed,
        config=config,
        trace=result.trace,
    )


def objective(model: FactorModel, matrix: UtilityMatrix) -> float:
    """Regularized squared error of the model on the matrix's observed entries:

        sum (target_ui - q_i . p_u)^2 + reg * (||p||_F^2 + ||q||_F^2)

    where target_ui is the rating minus the model's base (zero for an
    uncentered model, so the residual term is exactly r_ui - q_i . p_u).
    Each row of p and q is penalized exactly once, matching what the
    unweighted fit minimizes.
    """
    if (
        model.pipeline_ids != matrix.pipeline_ids
        or model.dataset_ids != matrix.dataset_ids
    ):
        raise ValueError("model and matrix index maps do not match")
    triples = list(matrix.entries())
    us = np.array([t[0] for t in triples], dtype=np.intp)
    is_ = np.array([t[1] for t in triples], dtype=np.intp)
    rs = np.array([t[2] for t in triples], dtype=np.float64) - model.base
    sse = _sse(model.p, model.q, us, is_, rs) if triples else 0.0
    return sse + model.reg * float(np.square(model.p).sum() + np.square(model.q).sum())


def save_model(model: FactorModel, path: str | Path, meta: dict | None = None) -> None:
    """Persist as a JSON header line followed by one factor row per line.

    Factor entries are written with 17 significant digits so the
    round-trip is exact at double precision.
    """
    header: dict = {
        "format": "provrec-factor-model",
        "version": 1,
        "k": model.rank,
        "lambda": model.reg,
        "global_mean": model.global_mean,
        "n_pipelines": len(model.pipeline_ids),
        "n_datasets": len(model.dataset_ids),
        "pipelines": list(model.pipeline_ids),
        "datasets": list(model.dataset_ids),
        "observed_pipelines": [int(u) for u in np.flatnonzero(model.observed_pipelines)],
        "observed_datasets": [int(i) for i in np.flatnonzero(model.observed_datasets)],
        "config": asdict(model.config),
        "trace": list(model.trace),
    }
    if meta:
        header["meta"] = meta
    lines = [json.dumps(header, separators=(", ", ": "))]
    for row in model.p:
        lines.append(" ".join(format_float(x) for x in row))
    for row in model.q:
        lines.append(" ".join(format_float(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path: str | Path) -> FactorModel:
    """Load a model written by `save_model`."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty model file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid header JSON: {exc.msg}") from None
    if header.get("format") != "provrec-factor-model":
        raise FormatError(f"{path}: not a factor model file")
    n_p, n_d, k = header["n_pipelines"], header["n_datasets"], header["k"]
    if len(lines) != 1 + n_p + n_d:
        raise FormatError(
            f"{path}: expected {1 + n_p + n_d} lines for {n_p}+{n_d} factor rows, got {len(lines)}"
        )

    def parse_rows(raw: list[str], what: str) -> np.ndarray:
        if not raw:
            return np.zeros((0, k))
        try:
            rows = [[float(tok) for tok in line.split()] for line in raw]
        except ValueError:
            raise FormatError(f"{path}: non-numeric {what} factor row") from None
        if any(len(r) != k for r in rows):
            raise FormatError(f"{path}: {what} factor row width != k={k}")
        return np.array(rows, dtype=np.float64)

    p = parse_rows(lines[1 : 1 + n_p], "pipeline")
    q = parse_rows(lines[1 + n_p :], "dataset")
    observed_p = np.zeros(n_p, dtype=bool)
    observed_p[header["observed_pipelines"]] = True
    observed_d = np.zeros(n_d, dtype=bool)
    observed_d[header["observed_datasets"]] = True
    return FactorModel(
        pipeline_ids=tuple(header["pipelines"]),
        dataset_ids=tuple(header["datasets"]),
        p=p,
        q=q,
        reg=float(header["lambda"]),
        global_mean=float(header["global_mean"]),
        observed_pipelines=observed_p,
        observed_datasets=observed_d,
        config=TrainConfig(**header["config"]),
        trace=[float(x) for x in header["trace"]],
    )
