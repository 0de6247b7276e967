"""Sparse pipeline-by-dataset utility matrix with stable index maps.

Ratings keep the literal {1, 2} scale (1 = failed, 2 = succeeded) because
both the factorization objective and the rounding threshold are stated on
that scale.  Index order is first appearance in the triplet stream and is
persisted in a sidecar header so factor rows stay aligned across
save/load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from ._fileio import FormatError, atomic_write_text, meta_comment
from .provenance import ExecutionTriplet

MATRIX_HEADER = ["pipeline_id", "dataset_id", "rating"]
SIDECAR_SUFFIX = ".meta.json"


class ConflictPolicy(Enum):
    """How to resolve several observed outcomes for one (pipeline, dataset) pair."""

    ANY_SUCCESS = "any-success"
    MAJORITY = "majority"
    LATEST_TIMESTAMP = "latest-timestamp"


@dataclass(frozen=True)
class UtilityMatrix:
    """Sparse ratings over indexed pipelines (rows) and datasets (columns).

    `ratings` maps (row, column) to a rating in {1, 2}; at most one entry
    per pair by construction.  Rows or columns may have zero entries, e.g.
    in a cross-validation training split that must keep the full index.
    """

    pipeline_ids: tuple[str, ...]
    dataset_ids: tuple[str, ...]
    ratings: Mapping[tuple[int, int], int]

    def __post_init__(self) -> None:
        if len(set(self.pipeline_ids)) != len(self.pipeline_ids):
            raise ValueError("duplicate pipeline ids in index")
        if len(set(self.dataset_ids)) != len(self.dataset_ids):
            raise ValueError("duplicate dataset ids in index")
        for (u, i), r in self.ratings.items():
            if not (0 <= u < len(self.pipeline_ids) and 0 <= i < len(self.dataset_ids)):
                raise ValueError(f"entry ({u}, {i}) outside index range")
            if r not in (1, 2):
                raise ValueError(f"rating must be 1 or 2, got {r!r} at ({u}, {i})")

    @property
    def n_pipelines(self) -> int:
        return len(self.pipeline_ids)

    @property
    def n_datasets(self) -> int:
        return len(self.dataset_ids)

    @property
    def n_entries(self) -> int:
        return len(self.ratings)

    @property
    def pipeline_index(self) -> dict[str, int]:
        return {pid: u for u, pid in enumerate(self.pipeline_ids)}

    @property
    def dataset_index(self) -> dict[str, int]:
        return {did: i for i, did in enumerate(self.dataset_ids)}

    def entries(self) -> Iterator[tuple[int, int, int]]:
        """Yield (row, column, rating) sorted by (row, column)."""
        for (u, i) in sorted(self.ratings):
            yield u, i, self.ratings[(u, i)]

    def mean_rating(self) -> float:
        if not self.ratings:
            raise ValueError("matrix has no entries")
        return sum(self.ratings.values()) / len(self.ratings)

    def without(self, pairs: Iterable[tuple[int, int]]) -> "UtilityMatrix":
        """Copy with the given (row, column) entries removed; index maps kept."""
        drop = set(pairs)
        kept = {k: v for k, v in self.ratings.items() if k not in drop}
        return UtilityMatrix(self.pipeline_ids, self.dataset_ids, kept)

    def as_triplets(self) -> list[ExecutionTriplet]:
        """Entries as triplets, ordered so re-aggregation reproduces this matrix.

        Emission introduces pipelines and datasets in index order (greedy
        schedule), so for any matrix built by `aggregate` the round trip
        aggregate(m.as_triplets()) == m holds exactly, index maps included.
        """
        pending = set(self.ratings)
        order: list[tuple[int, int]] = []
        next_p, next_i = 0, 0
        while pending:
            ready = sorted(e for e in pending if e[0] < next_p and e[1] < next_i)
            order.extend(ready)
            pending.difference_update(ready)
            if not pending:
                break
            intro_p = sorted(e for e in pending if e[0] == next_p and e[1] < next_i)
            intro_i = sorted(e for e in pending if e[1] == next_i and e[0] < next_p)
            if intro_p:
                order.append(intro_p[0])
                pending.remove(intro_p[0])
                next_p += 1
            elif intro_i:
                order.append(intro_i[0])
                pending.remove(intro_i[0])
                next_i += 1
            elif (next_p, next_i) in pending:
                order.append((next_p, next_i))
                pending.remove((next_p, next_i))
                next_p += 1
                next_i += 1
            else:
                # not an aggregation image (e.g. rows indexed without entries);
                # emit the rest in scan order
                order.extend(sorted(pending))
                break
        return [
            ExecutionTriplet(self.pipeline_ids[u], self.dataset_ids[i], self.ratings[(u, i)])
            for u, i in order
        ]


def aggregate(
    triplets: Iterable[ExecutionTriplet],
    policy: ConflictPolicy = ConflictPolicy.ANY_SUCCESS,
) -> UtilityMatrix:
    """Collapse triplets into one rating per (pipeline, dataset) pair.

    ANY_SUCCESS keeps 2 if any observation succeeded (failures may be
    transient); MAJORITY takes the more frequent outcome with ties going
    to failure; LATEST_TIMESTAMP keeps the most recent observation and
    requires timestamps wherever a pair actually conflicts.
    """
    pipeline_ids: list[str] = []
    dataset_ids: list[str] = []
    pindex: dict[str, int] = {}
    dindex: dict[str, int] = {}
    by_pair: dict[tuple[int, int], list[ExecutionTriplet]] = {}
    for t in triplets:
        if t.pipeline_id not in pindex:
            pindex[t.pipeline_id] = len(pipeline_ids)
            pipeline_ids.append(t.pipeline_id)
        if t.dataset_id not in dindex:
            dindex[t.dataset_id] = len(dataset_ids)
            dataset_ids.append(t.dataset_id)
        by_pair.setdefault((pindex[t.pipeline_id], dindex[t.dataset_id]), []).append(t)

    ratings: dict[tuple[int, int], int] = {}
    for pair, group in by_pair.items():
        if len(group) == 1:
            ratings[pair] = group[0].outcome
        elif policy is ConflictPolicy.ANY_SUCCESS:
            ratings[pair] = 2 if any(t.outcome == 2 for t in group) else 1
        elif policy is ConflictPolicy.MAJORITY:
            successes = sum(1 for t in group if t.outcome == 2)
            ratings[pair] = 2 if successes > len(group) - successes else 1
        else:
            if any(t.timestamp is None for t in group):
                u, i = pair
                raise ValueError(
                    f"latest-timestamp policy needs timestamps on every observation of "
                    f"conflicting pair ({pipeline_ids[u]!r}, {dataset_ids[i]!r})"
                )
            ratings[pair] = max(enumerate(group), key=lambda it: (it[1].timestamp, it[0]))[1].outcome
    return UtilityMatrix(tuple(pipeline_ids), tuple(dataset_ids), ratings)


def density(matrix: UtilityMatrix) -> float:
    """Fraction of pipeline-dataset pairs with an observed rating."""
    cells = matrix.n_pipelines * matrix.n_datasets
    if cells == 0:
        raise ValueError("density undefined for a zero-dimension matrix")
    return matrix.n_entries / cells


def save_matrix(matrix: UtilityMatrix, path: str | Path, meta: dict | None = None) -> None:
    """Persist as `pipeline_id,dataset_id,rating` rows plus a sidecar index header.

    Rows are written in (row, column) order and the sidecar records the full
    index order, so save -> load -> save is byte-identical.
    """
    path = Path(path)
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MATRIX_HEADER)
    for u, i, r in matrix.entries():
        writer.writerow([matrix.pipeline_ids[u], matrix.dataset_ids[i], r])
    sidecar = {
        "format": "provrec-utility-matrix",
        "version": 1,
        "n_pipelines": matrix.n_pipelines,
        "n_datasets": matrix.n_datasets,
        "n_entries": matrix.n_entries,
        "pipelines": list(matrix.pipeline_ids),
        "datasets": list(matrix.dataset_ids),
    }
    if meta:
        sidecar["meta"] = meta
    atomic_write_text(path, buf.getvalue())
    atomic_write_text(str(path) + SIDECAR_SUFFIX, json.dumps(sidecar, indent=2) + "\n")


def load_matrix(path: str | Path) -> UtilityMatrix:
    """Load a matrix written by `save_matrix`, restoring the sidecar's index order."""
    path = Path(path)
    sidecar_path = Path(str(path) + SIDECAR_SUFFIX)
    if not sidecar_path.exists():
        raise FormatError(f"missing sidecar header {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar_path}: invalid JSON: {exc.msg}") from None
    for key in ("pipelines", "datasets"):
        if not isinstance(sidecar.get(key), list):
            raise FormatError(f"{sidecar_path}: missing or invalid {key!r}")
    pipeline_ids = tuple(sidecar["pipelines"])
    dataset_ids = tuple(sidecar["datasets"])
    pindex = {pid: u for u, pid in enumerate(pipeline_ids)}
    dindex = {did: i for i, did in enumerate(dataset_ids)}

    with open(path, "r", encoding="utf-8") as fh:
        rows = [r for r in fh if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty matrix file") from None
    if [h.strip() for h in header] != MATRIX_HEADER:
        raise FormatError(f"{path}: bad matrix header {header!r}")
    ratings: dict[tuple[int, int], int] = {}
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise FormatError(f"{path}:{row_no}: expected 3 columns")
        pid, did, raw = row
        if pid not in pindex:
            raise FormatError(f"{path}:{row_no}: pipeline {pid!r} not in sidecar index")
        if did not in dindex:
            raise FormatError(f"{path}:{row_no}: dataset {did!r} not in sidecar index")
        try:
            rating = int(raw)
        except ValueError:
            raise FormatError(f"{path}:{row_no}: rating must be an integer") from None
        key = (pindex[pid], dindex[did])
        if key in ratings:
            raise FormatError(f"{path}:{row_no}: duplicate entry for ({pid!r}, {did!r})")
        if rating not in (1, 2):
            raise FormatError(f"{path}:{row_no}: rating must be 1 or 2")
        ratings[key] = rating
    n_expected = sidecar.get("n_entries")
    if n_expected is not None and n_expected != len(ratings):
        raise FormatError(f"{path}: sidecar declares {n_expected} entries, file has {len(ratings)}")
    return UtilityMatrix(pipeline_ids, dataset_ids, ratings)
