"""Command-line front end: ingest provenance, train, recommend, evaluate.

Exit codes: 0 success, 1 bad usage, 2 unreadable or malformed input,
3 internal error.  Every output file embeds the tool version, the seed,
and the full flag set in a comment or header, and all randomness flows
from --seed, so re-running a command reproduces its outputs byte for
byte.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import __version__
from ._fileio import FormatError, atomic_write_text
from .factorization import TrainConfig, als_fit, load_model, objective, save_model
from .matrix import ConflictPolicy, aggregate, density, load_matrix, save_matrix
from .provenance import (
    TiePolicy,
    parse_manifests_path,
    parse_records_path,
    to_triplets,
    write_triplets,
)
from .recommend import (
    classify,
    format_recommendations,
    recommend_datasets,
    recommend_pipelines,
    write_recommendations,
)
from .evaluation import (
    cross_validate,
    expert_roc,
    generate_synthetic,
    parse_survey_path,
    report_to_json,
    roc_curve,
    auc,
    default_thresholds,
    write_roc,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    """Bad flags or flag values; exit code 1."""


class InputError(Exception):
    """Missing or malformed input data; exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _meta(args: argparse.Namespace, argv: list[str]) -> dict:
    return {
        "tool": "provrec",
        "version": __version__,
        "seed": getattr(args, "seed", 0),
        "args": argv,
    }


def _read_path(description: str, path: str, reader):
    try:
        return reader(path)
    except FileNotFoundError:
        raise InputError(f"{description} file not found: {path}") from None
    except (OSError, FormatError) as exc:
        raise InputError(f"cannot read {description} file {path}: {exc}") from None


def _parse_threshold_list(text: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"--thresholds must be a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise UsageError("--thresholds must list at least one value")
    return values


def _train_config(args: argparse.Namespace) -> TrainConfig:
    try:
        return TrainConfig(
            rank=args.rank,
            reg=args.reg,
            max_iterations=args.max_iterations,
            tolerance=args.tolerance,
            seed=args.seed,
            init_scale=args.init_scale,
            weighted_reg=args.weighted_reg,
            center=not args.no_center,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_ingest(args: argparse.Namespace, argv: list[str]) -> None:
    records, rejects = _read_path("records", args.records, parse_records_path)
    manifests = _read_path("manifests", args.manifests, parse_manifests_path)
    if not manifests:
        raise InputError(f"manifest file {args.manifests} defines no datasets")
    meta = _meta(args, argv)
    triplets, report = to_triplets(
        records, manifests, TiePolicy(args.tie_policy), n_rejected=len(rejects)
    )
    write_triplets(args.out, triplets, meta)
    report_path = args.report or str(args.out) + ".report.json"
    atomic_write_text(report_path, report.to_json(meta))
    if args.matrix_out:
        matrix = aggregate(triplets, ConflictPolicy(args.conflict_policy))
        save_matrix(matrix, args.matrix_out, meta)
    print(
        f"ingested {len(records)} records ({report.rejected} rejected): "
        f"{report.n_triplets} triplets, {report.attributed} attributed, "
        f"{report.unattributable} unattributable, {report.tied} tied"
    )


def cmd_train(args: argparse.Namespace, argv: list[str]) -> None:
    config = _train_config(args)
    matrix = _read_path("matrix", args.matrix, load_matrix)
    try:
        model = als_fit(matrix, config)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    save_model(model, args.out, _meta(args, argv))
    iterations = (len(model.trace) - 1) // 2
    print(f"objective={objective(model, matrix):.17g} iterations={iterations}")


def cmd_predict(args: argparse.Namespace, argv: list[str]) -> None:
    model = _read_path("model", args.model, load_model)
    if not math.isfinite(args.threshold):
        raise UsageError(f"--threshold must be finite, got {args.threshold}")
    pindex = model.pipeline_index
    dindex = model.dataset_index
    if args.pipeline not in pindex:
        raise InputError(f"unknown pipeline {args.pipeline!r}")
    if args.dataset not in dindex:
        raise InputError(f"unknown dataset {args.dataset!r}")
    pred = model.predict_raw(pindex[args.pipeline], dindex[args.dataset])
    outcome = classify(pred.score, args.threshold)
    lines = [
        "pipeline_id,dataset_id,score,predicted_outcome,cold_start",
        f"{args.pipeline},{args.dataset},{pred.score:.17g},{outcome},{int(pred.cold_start)}",
    ]
    print("\n".join(lines))
    if args.out:
        atomic_write_text(args.out, f"# {json.dumps(_meta(args, argv))}\n" + "\n".join(lines) + "\n")


def cmd_recommend(args: argparse.Namespace, argv: list[str]) -> None:
    model = _read_path("model", args.model, load_model)
    if args.top_n < 0:
        raise UsageError(f"--top-n must be >= 0, got {args.top_n}")
    if not math.isfinite(args.threshold):
        raise UsageError(f"--threshold must be finite, got {args.threshold}")
    try:
        if args.dataset is not None:
            recs = recommend_pipelines(model, args.dataset, args.top_n, args.threshold)
        else:
            recs = recommend_datasets(model, args.pipeline, args.top_n, args.threshold)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    print(format_recommendations(recs), end="")
    if args.out:
        write_recommendations(args.out, recs, _meta(args, argv))


def cmd_evaluate(args: argparse.Namespace, argv: list[str]) -> None:
    config = _train_config(args)
    if args.k_folds < 1:
        raise UsageError(f"--k-folds must be >= 1, got {args.k_folds}")
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    matrix = _read_path("matrix", args.matrix, load_matrix)
    if args.k_folds > matrix.n_entries:
        raise UsageError(
            f"--k-folds {args.k_folds} exceeds the {matrix.n_entries} observed entries"
        )
    thresholds = _parse_threshold_list(args.thresholds) if args.thresholds else None
    try:
        report = cross_validate(
            matrix,
            config,
            k=args.k_folds,
            seed=args.seed,
            thresholds=thresholds,
            stratified=not args.no_stratify,
            jobs=args.jobs,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None

    meta = _meta(args, argv)
    out = Path(args.out)
    if args.survey:
        survey = _read_path("survey", args.survey, parse_survey_path)
        try:
            baseline_points, baseline_auc = expert_roc(survey, matrix)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        report.baseline_roc = baseline_points
        report.baseline_auc = baseline_auc
        baseline_path = args.baseline_roc_out or out.with_name(out.stem + "_expert_roc.csv")
        write_roc(baseline_path, baseline_points, meta)
    roc_path = args.roc_out or out.with_name(out.stem + "_roc.csv")
    write_roc(roc_path, report.roc, meta)
    atomic_write_text(out, report_to_json(report, meta))
    summary = f"auc={report.auc:.17g} folds={args.k_folds} scored={report.n_scored}"
    if report.baseline_auc is not None:
        summary += f" baseline_auc={report.baseline_auc:.17g}"
    print(summary)


def _read_scored(path: str) -> list[tuple[float, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [r for r in fh if r.strip() and not r.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty scored file") from None
    if [h.strip() for h in header] != ["score", "label"]:
        raise FormatError(f"{path}: header must be 'score,label', got {header!r}")
    scored = []
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise FormatError(f"{path}:{row_no}: expected 2 columns")
        try:
            scored.append((float(row[0]), int(row[1])))
        except ValueError:
            raise FormatError(f"{path}:{row_no}: expected numeric score and integer label") from None
    return scored


def cmd_roc(args: argparse.Namespace, argv: list[str]) -> None:
    scored = _read_path("scored", args.scored, _read_scored)
    thresholds = (
        _parse_threshold_list(args.thresholds)
        if args.thresholds
        else default_thresholds(s for s, _ in scored)
    )
    try:
        points = roc_curve(scored, thresholds)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_roc(args.out, points, _meta(args, argv))
    print(f"auc={auc(points):.17g} points={len(points)}")


def cmd_synth(args: argparse.Namespace, argv: list[str]) -> None:
    try:
        matrix, truth = generate_synthetic(
            n_pipelines=args.pipelines,
            n_datasets=args.datasets,
            n_blocks=args.blocks,
            density=args.density,
            noise_rate=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = _meta(args, argv)
    save_matrix(matrix, args.out, meta)
    if args.truth_out:
        doc = {
            "pipeline_blocks": {pid: b for pid, b in zip(matrix.pipeline_ids, truth.pipeline_blocks)},
            "dataset_blocks": {did: b for did, b in zip(matrix.dataset_ids, truth.dataset_blocks)},
            "flipped": [list(pair) for pair in truth.flipped],
            "meta": meta,
        }
        atomic_write_text(args.truth_out, json.dumps(doc, indent=2) + "\n")
    print(
        f"synthetic matrix {matrix.n_pipelines}x{matrix.n_datasets}: "
        f"{matrix.n_entries} entries, density={density(matrix):.4f}, "
        f"{len(truth.flipped)} flipped"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="provrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"provrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--rank", type=int, default=8, help="latent factors per side (default 8)")
    train_flags.add_argument("--reg", type=float, default=0.1, help="ridge regularization (default 0.1)")
    train_flags.add_argument(
        "--max-iterations", type=int, default=20, help="full ALS iterations (default 20)"
    )
    train_flags.add_argument(
        "--tolerance",
        type=float,
        default=1e-4,
        help="relative objective decrease for early stop; 0 disables (default 1e-4)",
    )
    train_flags.add_argument(
        "--init-scale",
        type=float,
        default=None,
        help="upper bound of the uniform factor initialization (default 1/sqrt(rank))",
    )
    train_flags.add_argument(
        "--weighted-reg",
        action="store_true",
        help="scale regularization by each row's observation count",
    )
    train_flags.add_argument(
        "--no-center",
        action="store_true",
        help="fit raw ratings instead of deviations from the training mean",
    )

    p = sub.add_parser(
        "ingest", parents=[common], help="records + manifests -> triplets, report, matrix"
    )
    p.add_argument("--records", required=True, help="line-delimited JSON provenance records")
    p.add_argument("--manifests", required=True, help="dataset_id,hash manifest file")
    p.add_argument("--out", required=True, help="triplets output path")
    p.add_argument("--report", default=None, help="attribution report path (default <out>.report.json)")
    p.add_argument("--matrix-out", default=None, help="also aggregate and write a utility matrix")
    p.add_argument(
        "--tie-policy",
        choices=[t.value for t in TiePolicy],
        default=TiePolicy.EMIT_ALL.value,
        help="attribution ties: emit every tied dataset or none (default emit-all)",
    )
    p.add_argument(
        "--conflict-policy",
        choices=[c.value for c in ConflictPolicy],
        default=ConflictPolicy.ANY_SUCCESS.value,
        help="rating conflicts during aggregation (default any-success)",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common, train_flags], help="fit factors on a matrix file")
    p.add_argument("--matrix", required=True, help="utility matrix path")
    p.add_argument("--out", required=True, help="model output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score one pipeline-dataset pair")
    p.add_argument("--model", required=True, help="model path")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=1.2, help="decision threshold (default 1.2)")
    p.add_argument("--out", default=None, help="also write the row as delimited text")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("recommend", parents=[common], help="ranked pipelines or datasets")
    p.add_argument("--model", required=True, help="model path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dataset", help="recommend pipelines for this dataset")
    group.add_argument("--pipeline", help="recommend datasets for this pipeline")
    p.add_argument("--top-n", type=int, default=10, help="result cap (default 10)")
    p.add_argument("--threshold", type=float, default=1.2, help="decision threshold (default 1.2)")
    p.add_argument("--out", default=None, help="also write the table as delimited text")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser(
        "evaluate", parents=[common, train_flags], help="k-fold cross validation with ROC/AUC"
    )
    p.add_argument("--matrix", required=True, help="utility matrix path")
    p.add_argument("--out", required=True, help="evaluation report path (JSON)")
    p.add_argument("--roc-out", default=None, help="ROC points path (default <out stem>_roc.csv)")
    p.add_argument("--survey", default=None, help="expert survey for the baseline ROC")
    p.add_argument(
        "--baseline-roc-out",
        default=None,
        help="expert ROC points path (default <out stem>_expert_roc.csv)",
    )
    p.add_argument("--k-folds", type=int, default=10, help="number of folds (default 10)")
    p.add_argument(
        "--thresholds",
        default=None,
        help="comma-separated rounding thresholds (default: every distinct score)",
    )
    p.add_argument("--no-stratify", action="store_true", help="plain random folds")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers (default 1)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", parents=[common], help="ROC/AUC from a score,label file")
    p.add_argument("--scored", required=True, help="CSV with header score,label")
    p.add_argument("--out", required=True, help="ROC points output path")
    p.add_argument("--thresholds", default=None, help="comma-separated thresholds")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("synth", parents=[common], help="block-structured synthetic matrix")
    p.add_argument("--pipelines", type=int, default=32, help="rows (default 32)")
    p.add_argument("--datasets", type=int, default=22, help="columns (default 22)")
    p.add_argument("--blocks", type=int, default=3, help="compatibility blocks (default 3)")
    p.add_argument("--density", type=float, default=288 / 704, help="observed fraction")
    p.add_argument("--noise", type=float, default=0.0, help="flip probability (default 0)")
    p.add_argument("--out", required=True, help="matrix output path")
    p.add_argument("--truth-out", default=None, help="ground-truth JSON path")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args, argv)
        return EXIT_OK
    except UsageError as exc:
        print(f"provrec: error: {exc}", file=sys.stderr)
        print("run 'provrec --help' or 'provrec <command> --help' for usage", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"provrec: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, FormatError, KeyError) as exc:
        print(f"provrec: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"provrec: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
