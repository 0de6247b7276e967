"""Classification threshold and ranked recommendation output."""

from __future__ import annotations

import numpy as np
import pytest

from provrec.factorization import TrainConfig, als_fit
from provrec.recommend import (
    classify,
    format_recommendations,
    recommend_datasets,
    recommend_pipelines,
)
from conftest import random_matrix
from oracles import rank_by_score_then_index
from test_factorization import hand_model


class TestClassify:
    def test_above_threshold_is_success(self):
        assert classify(1.5, 1.2) == 2

    def test_boundary_counts_as_success(self):
        assert classify(1.2, 1.2) == 2

    def test_below_threshold_is_failure(self):
        assert classify(1.0, 1.2) == 1

    def test_non_finite_score_rejected(self):
        for bad in (float("nan"), float("inf")):
            with pytest.raises(ValueError):
                classify(bad, 1.2)

    def test_non_finite_threshold_rejected(self):
        with pytest.raises(ValueError):
            classify(1.0, float("nan"))

    def test_monotone_in_score(self, rng):
        taus = rng.uniform(-3, 3, 20)
        scores = np.sort(rng.uniform(-3, 3, 50))
        for tau in taus:
            outcomes = [classify(float(s), float(tau)) for s in scores]
            assert outcomes == sorted(outcomes)


def model_with_scores(dataset_scores: list[float]):
    """Rank-1 hand model whose score for (u, D0) is dataset_scores[u]."""
    p = np.array([[s] for s in dataset_scores])
    q = np.array([[1.0]])
    return hand_model(p, q)


class TestRecommendPipelines:
    def test_filter_keeps_only_scores_at_or_above_threshold(self):
        model = model_with_scores([2.0, 1.5, 1.0, 1.3])
        recs = recommend_pipelines(model, "D0", top_n=10, threshold=1.3)
        assert [r.subject_id for r in recs] == ["P0", "P1", "P3"]
        assert all(r.predicted_outcome == 2 for r in recs)

    def test_top_n_zero_is_empty(self):
        model = model_with_scores([2.0, 1.5])
        assert recommend_pipelines(model, "D0", top_n=0, threshold=0.0) == []

    def test_negative_top_n_rejected(self):
        model = model_with_scores([2.0])
        with pytest.raises(ValueError):
            recommend_pipelines(model, "D0", top_n=-1, threshold=0.0)

    def test_unknown_dataset_named_in_error(self):
        model = model_with_scores([2.0])
        with pytest.raises(KeyError, match="D9"):
            recommend_pipelines(model, "D9", top_n=5, threshold=0.0)

    def test_scores_descending_ties_by_index(self):
        model = model_with_scores([1.5, 2.0, 1.5, 2.0])
        recs = recommend_pipelines(model, "D0", top_n=10, threshold=0.0)
        assert [r.subject_id for r in recs] == ["P1", "P3", "P0", "P2"]

    def test_matches_brute_force_oracle_on_fitted_model(self, rng):
        m = random_matrix(rng, 9, 7, density=0.6)
        model = als_fit(m, TrainConfig(rank=2, seed=4))
        for i, did in enumerate(model.dataset_ids):
            scored = [
                (u, pid, model.predict_raw(u, i).score)
                for u, pid in enumerate(model.pipeline_ids)
            ]
            expected = rank_by_score_then_index(scored)
            recs = recommend_pipelines(model, did, top_n=9, threshold=-1e300)
            assert [r.subject_id for r in recs] == expected

    def test_raising_threshold_never_grows_result(self):
        model = model_with_scores([2.0, 1.5, 1.0, 1.3, 1.9])
        sizes = [
            len(recommend_pipelines(model, "D0", top_n=10, threshold=tau))
            for tau in (0.0, 1.0, 1.3, 1.5, 2.0, 2.1)
        ]
        assert sizes == sorted(sizes, reverse=True)

    def test_cold_start_flag_propagates(self):
        from provrec.matrix import UtilityMatrix

        m = UtilityMatrix(("P0", "P1"), ("D0",), {(0, 0): 2})
        model = als_fit(m, TrainConfig(rank=1))
        recs = recommend_pipelines(model, "D0", top_n=5, threshold=-10.0)
        flags = {r.subject_id: r.cold_start for r in recs}
        assert flags["P1"] is True and flags["P0"] is False


class TestRecommendDatasets:
    def test_symmetric_filter_and_order(self):
        # transpose of the pipeline fixtures: one pipeline, many datasets
        q = np.array([[2.0], [1.5], [1.0], [1.3]])
        p = np.array([[1.0]])
        model = hand_model(p, q)
        recs = recommend_datasets(model, "P0", top_n=10, threshold=1.3)
        assert [r.subject_id for r in recs] == ["D0", "D1", "D3"]

    def test_top_n_zero(self):
        model = hand_model(np.array([[1.0]]), np.array([[2.0]]))
        assert recommend_datasets(model, "P0", top_n=0, threshold=0.0) == []

    def test_unknown_pipeline(self):
        model = hand_model(np.array([[1.0]]), np.array([[2.0]]))
        with pytest.raises(KeyError, match="P7"):
            recommend_datasets(model, "P7", top_n=3, threshold=0.0)

    def test_matches_oracle_on_larger_model(self, rng):
        # exhaustive score-all-then-sort equality, up to 50x50
        m = random_matrix(rng, 50, 50, density=0.3)
        model = als_fit(m, TrainConfig(rank=3, seed=2, max_iterations=5))
        for pid in ("P0", "P17", "P49"):
            u = model.pipeline_index[pid]
            scored = [
                (i, did, model.predict_raw(u, i).score)
                for i, did in enumerate(model.dataset_ids)
            ]
            expected = rank_by_score_then_index(scored)
            recs = recommend_datasets(model, pid, top_n=50, threshold=-1e300)
            assert [r.subject_id for r in recs] == expected


class TestFormatting:
    def test_table_layout(self):
        model = model_with_scores([2.0, 1.0])
        recs = recommend_pipelines(model, "D0", top_n=10, threshold=1.2)
        text = format_recommendations(recs, meta={"seed": 1})
        lines = text.splitlines()
        assert lines[0].startswith("# ")
        assert lines[1] == "rank,subject_id,score,predicted_outcome,cold_start"
        assert lines[2] == "1,P0,2,2,0"
