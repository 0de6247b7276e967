"""Execution provenance ingestion and dataset attribution.

Provenance records arrive as line-delimited JSON, one execution per line.
Dataset manifests list the content hashes of every file in a dataset.
A record is attributed to the dataset whose manifest shares the most
hashes with the record's inputs; attributed records become
(pipeline, dataset, outcome) triplets with outcome 2 for exit code 0
and 1 otherwise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

from ._fileio import FormatError, atomic_write_text, meta_comment

TRIPLET_HEADER = ["pipeline_id", "dataset_id", "outcome"]
MANIFEST_HEADER = ["dataset_id", "hash"]


class TiePolicy(Enum):
    """What to do when a record overlaps several datasets equally well."""

    EMIT_ALL = "emit-all"
    EMIT_NONE = "emit-none"


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 instant; naive values are taken as UTC."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise FormatError(f"bad timestamp {value!r}: {exc}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class ProvenanceRecord:
    """Summary of one pipeline execution."""

    record_id: str
    pipeline_id: str
    input_hashes: frozenset[str]
    output_hashes: frozenset[str] = frozenset()
    exit_code: int = 0
    timestamp: datetime | None = None
    parameters_digest: str | None = None

    def __post_init__(self) -> None:
        if not self.pipeline_id:
            raise ValueError("pipeline_id must be nonempty")
        if not self.input_hashes:
            raise ValueError("input_hashes must be nonempty")

    @property
    def succeeded(self) -> bool:
        return self.exit_code == 0


@dataclass(frozen=True)
class DatasetManifest:
    """Content-hash index of one dataset's files (duplicates collapsed)."""

    dataset_id: str
    hashes: frozenset[str]

    def __post_init__(self) -> None:
        if not self.dataset_id:
            raise ValueError("dataset_id must be nonempty")
        if not self.hashes:
            raise ValueError(f"manifest {self.dataset_id!r} has no hashes")

    @property
    def file_count(self) -> int:
        return len(self.hashes)


@dataclass(frozen=True)
class ExecutionTriplet:
    """One (pipeline, dataset, outcome) observation; outcome 2 = success, 1 = failure."""

    pipeline_id: str
    dataset_id: str
    outcome: int
    timestamp: datetime | None = None

    def __post_init__(self) -> None:
        if self.outcome not in (1, 2):
            raise ValueError(f"outcome must be 1 or 2, got {self.outcome!r}")


@dataclass(frozen=True)
class RejectedLine:
    """A record line skipped during parsing, with the reason."""

    line_no: int
    reason: str


@dataclass(frozen=True)
class Attribution:
    """Datasets a record was matched to: zero (unattributable), one, or a tie."""

    dataset_ids: tuple[str, ...]
    overlap: int

    @property
    def is_tie(self) -> bool:
        return len(self.dataset_ids) > 1

    @property
    def unattributable(self) -> bool:
        return not self.dataset_ids


@dataclass
class AttributionReport:
    """Counts and per-record details from one attribution pass."""

    attributed: int = 0
    unattributable: int = 0
    tied: int = 0
    rejected: int = 0
    n_triplets: int = 0
    unattributable_records: list[str] = field(default_factory=list)
    tied_records: list[str] = field(default_factory=list)

    def to_json(self, meta: dict | None = None) -> str:
        doc = {
            "attributed": self.attributed,
            "unattributable": self.unattributable,
            "tied": self.tied,
            "rejected": self.rejected,
            "n_triplets": self.n_triplets,
            "unattributable_records": self.unattributable_records,
            "tied_records": self.tied_records,
        }
        if meta:
            doc["meta"] = meta
        return json.dumps(doc, indent=2) + "\n"


_REQUIRED_FIELDS = ("pipeline_id", "exit_code", "input_hashes")


def _record_from_obj(obj: dict, line_no: int) -> ProvenanceRecord:
    missing = [name for name in _REQUIRED_FIELDS if name not in obj]
    if missing:
        raise FormatError(f"missing field(s): {', '.join(missing)}")
    hashes = obj["input_hashes"]
    if not isinstance(hashes, list) or not hashes:
        raise FormatError("input_hashes must be a nonempty list")
    exit_code = obj["exit_code"]
    if not isinstance(exit_code, int) or isinstance(exit_code, bool):
        raise FormatError(f"exit_code must be an integer, got {exit_code!r}")
    pipeline_id = obj["pipeline_id"]
    if not isinstance(pipeline_id, str) or not pipeline_id:
        raise FormatError("pipeline_id must be a nonempty string")
    ts = obj.get("timestamp")
    return ProvenanceRecord(
        record_id=str(obj.get("record_id", f"line-{line_no}")),
        pipeline_id=pipeline_id,
        input_hashes=frozenset(str(h) for h in hashes),
        output_hashes=frozenset(str(h) for h in obj.get("output_hashes") or ()),
        exit_code=exit_code,
        timestamp=parse_timestamp(ts) if ts else None,
        parameters_digest=obj.get("parameters_digest"),
    )


def parse_records(stream: IO[str] | str) -> tuple[list[ProvenanceRecord], list[RejectedLine]]:
    """Parse line-delimited JSON provenance records.

    Malformed lines are collected as rejects with a per-line reason and
    never abort the batch; blank lines are ignored.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records: list[ProvenanceRecord] = []
    rejects: list[RejectedLine] = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            rejects.append(RejectedLine(line_no, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            rejects.append(RejectedLine(line_no, "record is not a JSON object"))
            continue
        try:
            records.append(_record_from_obj(obj, line_no))
        except (FormatError, ValueError) as exc:
            rejects.append(RejectedLine(line_no, str(exc)))
    return records, rejects


def parse_records_path(path: str | Path) -> tuple[list[ProvenanceRecord], list[RejectedLine]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records(fh)


def parse_manifests(stream: IO[str] | str) -> list[DatasetManifest]:
    """Parse dataset manifests from `dataset_id,hash` delimited text.

    Rows are grouped by dataset; duplicate hashes within a dataset collapse.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(row for row in stream if row.strip() and not row.lstrip().startswith("#"))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("manifest file is empty") from None
    if [h.strip() for h in header] != MANIFEST_HEADER:
        raise FormatError(f"manifest header must be {','.join(MANIFEST_HEADER)!r}, got {header!r}")
    hashes: dict[str, set[str]] = {}
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise FormatError(f"manifest row {row_no}: expected 2 columns, got {len(row)}")
        dataset_id, digest = row[0].strip(), row[1].strip()
        if not dataset_id or not digest:
            raise FormatError(f"manifest row {row_no}: empty dataset_id or hash")
        hashes.setdefault(dataset_id, set()).add(digest)
    return [DatasetManifest(did, frozenset(hs)) for did, hs in hashes.items()]


def parse_manifests_path(path: str | Path) -> list[DatasetManifest]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_manifests(fh)


def attribute_dataset(
    record: ProvenanceRecord, manifests: Sequence[DatasetManifest]
) -> Attribution:
    """Match a record to the dataset(s) with maximal input-hash overlap.

    Ties return every tied dataset, sorted by id so the result is
    independent of manifest ordering.  Zero overlap with every manifest
    yields an empty attribution.
    """
    if not manifests:
        raise ValueError("manifests must be nonempty")
    best = 0
    winners: list[str] = []
    for manifest in manifests:
        overlap = len(record.input_hashes & manifest.hashes)
        if overlap > best:
            best, winners = overlap, [manifest.dataset_id]
        elif overlap == best and overlap > 0:
            winners.append(manifest.dataset_id)
    return Attribution(tuple(sorted(winners)), best)


def to_triplets(
    records: Iterable[ProvenanceRecord],
    manifests: Sequence[DatasetManifest],
    tie_policy: TiePolicy = TiePolicy.EMIT_ALL,
    n_rejected: int = 0,
) -> tuple[list[ExecutionTriplet], AttributionReport]:
    """Attribute each record and emit one triplet per (record, dataset) pair.

    Under EMIT_ALL, an n-way tie emits n triplets; under EMIT_NONE it emits
    none.  Unattributable records are excluded and counted.  `n_rejected`
    is carried into the report so parse-stage rejects appear alongside
    attribution counts.
    """
    triplets: list[ExecutionTriplet] = []
    report = AttributionReport(rejected=n_rejected)
    for record in records:
        attribution = attribute_dataset(record, manifests)
        if attribution.unattributable:
            report.unattributable += 1
            report.unattributable_records.append(record.record_id)
            continue
        if attribution.is_tie:
            report.tied += 1
            report.tied_records.append(record.record_id)
            if tie_policy is TiePolicy.EMIT_NONE:
                continue
        outcome = 2 if record.exit_code == 0 else 1
        report.attributed += 1
        for dataset_id in attribution.dataset_ids:
            triplets.append(
                ExecutionTriplet(record.pipeline_id, dataset_id, outcome, record.timestamp)
            )
    report.n_triplets = len(triplets)
    return triplets, report


def write_triplets(
    path: str | Path, triplets: Iterable[ExecutionTriplet], meta: dict | None = None
) -> None:
    """Write triplets as `pipeline_id,dataset_id,outcome` delimited text."""
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIPLET_HEADER)
    for t in triplets:
        writer.writerow([t.pipeline_id, t.dataset_id, t.outcome])
    atomic_write_text(path, buf.getvalue())


def read_triplets(path: str | Path) -> list[ExecutionTriplet]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [r for r in fh if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty triplet file") from None
    if [h.strip() for h in header] != TRIPLET_HEADER:
        raise FormatError(f"{path}: bad triplet header {header!r}")
    triplets = []
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise FormatError(f"{path}:{row_no}: expected 3 columns")
        try:
            outcome = int(row[2])
        except ValueError:
            raise FormatError(f"{path}:{row_no}: outcome must be an integer") from None
        try:
            triplets.append(ExecutionTriplet(row[0], row[1], outcome))
        except ValueError as exc:
            raise FormatError(f"{path}:{row_no}: {exc}") from None
    return triplets
