"""Command-line behavior: exit codes, file outputs, reproducibility."""

from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from provrec.cli import main
from provrec.factorization import load_model, objective
from provrec.matrix import load_matrix
from conftest import record_line


@pytest.fixture
def corpus(tmp_path):
    """Records for 3 pipelines x 2 datasets, unique attribution, no ties."""
    records = [
        record_line("P1", ("h-a",), 0, record_id="r1"),
        record_line("P1", ("h-b",), 1, record_id="r2"),
        record_line("P2", ("h-a",), 0, record_id="r3"),
        record_line("P2", ("h-b",), 0, record_id="r4"),
        record_line("P3", ("h-a",), 1, record_id="r5"),
        record_line("P3", ("h-b",), 1, record_id="r6"),
    ]
    records_path = tmp_path / "records.jsonl"
    records_path.write_text("\n".join(records) + "\n")
    manifests_path = tmp_path / "manifests.csv"
    manifests_path.write_text("dataset_id,hash\nD1,h-a\nD2,h-b\n")
    return records_path, manifests_path


def run_ingest(tmp_path, corpus, extra=()):
    records_path, manifests_path = corpus
    out = tmp_path / "triplets.csv"
    matrix_out = tmp_path / "matrix.csv"
    code = main(
        [
            "ingest",
            "--records",
            str(records_path),
            "--manifests",
            str(manifests_path),
            "--out",
            str(out),
            "--matrix-out",
            str(matrix_out),
            *extra,
        ]
    )
    return code, out, matrix_out


class TestIngest:
    def test_valid_fixture_counts(self, tmp_path, corpus):
        code, out, matrix_out = run_ingest(tmp_path, corpus)
        assert code == 0
        rows = [r for r in out.read_text().splitlines() if r and not r.startswith("#")]
        report = json.loads((tmp_path / "triplets.csv.report.json").read_text())
        assert len(rows) - 1 == report["attributed"] == 6
        assert report["rejected"] == 0 and report["unattributable"] == 0
        matrix = load_matrix(matrix_out)
        assert matrix.n_entries == 6

    def test_missing_records_file_names_path(self, tmp_path, corpus, capsys):
        _, manifests_path = corpus
        code = main(
            [
                "ingest",
                "--records",
                str(tmp_path / "nope.jsonl"),
                "--manifests",
                str(manifests_path),
                "--out",
                str(tmp_path / "t.csv"),
            ]
        )
        assert code == 2
        assert "nope.jsonl" in capsys.readouterr().err

    def test_empty_records_file_is_ok(self, tmp_path, corpus):
        records_path, manifests_path = corpus
        records_path.write_text("")
        out = tmp_path / "t.csv"
        code = main(
            ["ingest", "--records", str(records_path), "--manifests", str(manifests_path), "--out", str(out)]
        )
        assert code == 0
        rows = [r for r in out.read_text().splitlines() if r and not r.startswith("#")]
        assert rows == ["pipeline_id,dataset_id,outcome"]
        report = json.loads((tmp_path / "t.csv.report.json").read_text())
        assert report["attributed"] == 0 and report["n_triplets"] == 0

    def test_outputs_embed_tool_version_and_seed(self, tmp_path, corpus):
        _, out, _ = run_ingest(tmp_path, corpus)
        first = out.read_text().splitlines()[0]
        meta = json.loads(first.lstrip("# "))
        assert meta["tool"] == "provrec" and "version" in meta and meta["seed"] == 0
        assert "--records" in meta["args"]


class TestTrain:
    def test_fixed_seed_is_byte_identical(self, tmp_path, corpus):
        _, _, matrix_out = run_ingest(tmp_path, corpus)
        m1, m2 = tmp_path / "model1.txt", tmp_path / "model2.txt"
        args = ["train", "--matrix", str(matrix_out), "--seed", "7"]
        assert main(args + ["--out", str(m1)]) == 0
        assert main(args + ["--out", str(m2)]) == 0
        assert m1.read_bytes().replace(b"model1", b"model2") == m2.read_bytes()

    def test_rank_zero_is_usage_error(self, tmp_path, corpus, capsys):
        _, _, matrix_out = run_ingest(tmp_path, corpus)
        code = main(
            ["train", "--matrix", str(matrix_out), "--out", str(tmp_path / "m.txt"), "--rank", "0"]
        )
        assert code == 1
        assert "rank" in capsys.readouterr().err

    def test_printed_objective_matches_recomputation(self, tmp_path, corpus, capsys):
        _, _, matrix_out = run_ingest(tmp_path, corpus)
        model_path = tmp_path / "model.txt"
        assert main(["train", "--matrix", str(matrix_out), "--out", str(model_path)]) == 0
        printed = capsys.readouterr().out
        value = float([tok for tok in printed.split() if tok.startswith("objective=")][0].split("=")[1])
        model = load_model(model_path)
        matrix = load_matrix(matrix_out)
        assert value == pytest.approx(objective(model, matrix), rel=1e-15)


def trained_model(tmp_path, corpus):
    _, _, matrix_out = run_ingest(tmp_path, corpus)
    model_path = tmp_path / "model.txt"
    assert main(["train", "--matrix", str(matrix_out), "--out", str(model_path)]) == 0
    return model_path, matrix_out


class TestPredict:
    def test_known_pair(self, tmp_path, corpus, capsys):
        model_path, _ = trained_model(tmp_path, corpus)
        capsys.readouterr()  # drain the train command's output
        code = main(["predict", "--model", str(model_path), "--pipeline", "P1", "--dataset", "D1"])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "pipeline_id,dataset_id,score,predicted_outcome,cold_start"
        fields = out[1].split(",")
        assert fields[0] == "P1" and fields[3] in {"1", "2"}

    def test_unknown_pipeline(self, tmp_path, corpus, capsys):
        model_path, _ = trained_model(tmp_path, corpus)
        code = main(["predict", "--model", str(model_path), "--pipeline", "PX", "--dataset", "D1"])
        assert code == 2
        assert "PX" in capsys.readouterr().err


class TestRecommend:
    def test_ranked_table_descending(self, tmp_path, corpus, capsys):
        model_path, _ = trained_model(tmp_path, corpus)
        capsys.readouterr()
        code = main(
            [
                "recommend",
                "--model",
                str(model_path),
                "--dataset",
                "D1",
                "--top-n",
                "10",
                "--threshold",
                "1.2",
            ]
        )
        assert code == 0
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
        assert len(rows) <= 10
        scores = [float(r["score"]) for r in rows]
        assert scores == sorted(scores, reverse=True)

    def test_unknown_id_exits_two(self, tmp_path, corpus, capsys):
        model_path, _ = trained_model(tmp_path, corpus)
        code = main(["recommend", "--model", str(model_path), "--dataset", "DX", "--top-n", "3"])
        assert code == 2
        assert "DX" in capsys.readouterr().err

    def test_top_n_zero_empty_table(self, tmp_path, corpus, capsys):
        model_path, _ = trained_model(tmp_path, corpus)
        capsys.readouterr()
        code = main(["recommend", "--model", str(model_path), "--pipeline", "P1", "--top-n", "0"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines == ["rank,subject_id,score,predicted_outcome,cold_start"]

    def test_dataset_and_pipeline_flags_exclusive(self, tmp_path, corpus):
        model_path, _ = trained_model(tmp_path, corpus)
        code = main(
            ["recommend", "--model", str(model_path), "--dataset", "D1", "--pipeline", "P1"]
        )
        assert code == 1

    def test_out_file_written_with_meta(self, tmp_path, corpus):
        model_path, _ = trained_model(tmp_path, corpus)
        out = tmp_path / "recs.csv"
        code = main(
            ["recommend", "--model", str(model_path), "--dataset", "D1", "--out", str(out)]
        )
        assert code == 0
        assert out.read_text().startswith("# ")


@pytest.fixture
def synth_matrix(tmp_path):
    path = tmp_path / "synth.csv"
    code = main(
        [
            "synth",
            "--pipelines",
            "32",
            "--datasets",
            "22",
            "--blocks",
            "3",
            "--density",
            str(288 / 704),
            "--noise",
            "0.1",
            "--seed",
            "5",
            "--out",
            str(path),
        ]
    )
    assert code == 0
    return path


class TestEvaluate:
    def test_report_fields_on_synthetic(self, tmp_path, synth_matrix):
        out = tmp_path / "report.json"
        code = main(
            ["evaluate", "--matrix", str(synth_matrix), "--out", str(out), "--seed", "5"]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert 0.0 <= doc["auc"] <= 1.0
        assert len(doc["per_fold_auc"]) == 10
        assert (tmp_path / "report_roc.csv").exists()

    def test_survey_adds_baseline(self, tmp_path, synth_matrix):
        matrix = load_matrix(synth_matrix)
        survey_path = tmp_path / "survey.csv"
        lines = ["pipeline_id,dataset_id,expert_id,prediction,confidence"]
        for u, i, r in list(matrix.entries())[:60]:
            word = "success" if r == 2 else "failure"
            lines.append(f"{matrix.pipeline_ids[u]},{matrix.dataset_ids[i]},e1,{word},2")
        survey_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "report.json"
        code = main(
            [
                "evaluate",
                "--matrix",
                str(synth_matrix),
                "--out",
                str(out),
                "--survey",
                str(survey_path),
                "--seed",
                "5",
            ]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["baseline_auc"] == 1.0  # survey mirrors outcomes exactly
        assert (tmp_path / "report_expert_roc.csv").exists()

    def test_explicit_thresholds_and_jobs(self, tmp_path, synth_matrix):
        out = tmp_path / "report.json"
        code = main(
            [
                "evaluate",
                "--matrix", str(synth_matrix),
                "--out", str(out),
                "--thresholds", "1.0,1.2,1.5",
                "--jobs", "3",
                "--seed", "5",
            ]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert sorted(pt["threshold"] for pt in doc["roc"]) == [1.0, 1.2, 1.5]
        fprs = [pt["fpr"] for pt in doc["roc"]]
        assert fprs == sorted(fprs)
        assert doc["config"]["thresholds"] == [1.0, 1.2, 1.5]

    def test_malformed_thresholds_is_usage_error(self, tmp_path, synth_matrix):
        code = main(
            [
                "evaluate",
                "--matrix", str(synth_matrix),
                "--out", str(tmp_path / "r.json"),
                "--thresholds", "a,b",
            ]
        )
        assert code == 1

    def test_too_many_folds_is_usage_error(self, tmp_path, synth_matrix, capsys):
        code = main(
            [
                "evaluate",
                "--matrix",
                str(synth_matrix),
                "--out",
                str(tmp_path / "r.json"),
                "--k-folds",
                "1000",
            ]
        )
        assert code == 1
        assert "288" in capsys.readouterr().err


class TestRocCommand:
    def test_computes_auc_from_scored_file(self, tmp_path, capsys):
        scored = tmp_path / "scored.csv"
        scored.write_text("score,label\n2.0,2\n1.9,2\n1.1,1\n0.8,1\n")
        out = tmp_path / "roc.csv"
        code = main(["roc", "--scored", str(scored), "--out", str(out)])
        assert code == 0
        assert "auc=1" in capsys.readouterr().out
        assert out.read_text().splitlines()[1] == "threshold,fpr,tpr,tp,fp,tn,fn"

    def test_one_class_input_exits_two(self, tmp_path):
        scored = tmp_path / "scored.csv"
        scored.write_text("score,label\n2.0,2\n1.9,2\n")
        code = main(["roc", "--scored", str(scored), "--out", str(tmp_path / "roc.csv")])
        assert code == 2


class TestSynth:
    def test_identical_args_give_identical_bytes(self, tmp_path, monkeypatch):
        dirs = [tmp_path / "runA", tmp_path / "runB"]
        for d in dirs:
            d.mkdir()
            monkeypatch.chdir(d)
            assert main(["synth", "--seed", "3", "--out", "m.csv", "--truth-out", "t.json"]) == 0
        for name in ("m.csv", "m.csv.meta.json", "t.json"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_bad_density_is_usage_error(self, tmp_path):
        code = main(["synth", "--density", "1.5", "--out", str(tmp_path / "m.csv")])
        assert code == 1


class TestUsage:
    def test_unknown_flag(self, tmp_path):
        assert main(["train", "--matrix", "x", "--out", "y", "--bogus"]) == 1

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_module_entrypoint_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "provrec", "--version"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "provrec" in proc.stdout
