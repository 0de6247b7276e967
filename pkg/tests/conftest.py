"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json

import numpy as np
import pytest

from provrec.matrix import UtilityMatrix
from provrec.provenance import DatasetManifest


def record_line(pipeline_id="doi:pipe-a", input_hashes=("aa",), exit_code=0, **extra) -> str:
    obj = {
        "pipeline_id": pipeline_id,
        "input_hashes": list(input_hashes),
        "exit_code": exit_code,
    }
    obj.update(extra)
    return json.dumps(obj)


def manifest(dataset_id: str, *hashes: str) -> DatasetManifest:
    return DatasetManifest(dataset_id, frozenset(hashes))


def random_matrix(
    rng: np.random.Generator,
    n_pipelines: int,
    n_datasets: int,
    density: float,
    success_rate: float = 0.5,
) -> UtilityMatrix:
    """Random {1,2} utility matrix with at least one entry."""
    ratings = {}
    for u in range(n_pipelines):
        for i in range(n_datasets):
            if rng.random() < density:
                ratings[(u, i)] = 2 if rng.random() < success_rate else 1
    if not ratings:
        ratings[(0, 0)] = 2
    return UtilityMatrix(
        tuple(f"P{u}" for u in range(n_pipelines)),
        tuple(f"D{i}" for i in range(n_datasets)),
        ratings,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
