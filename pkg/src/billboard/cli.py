"""Operator command line: init, submit, recompute, report, serve.

Exit codes: 0 success, 1 validation error, 2 internal error.  Machine
readable output goes to stdout, diagnostics to stderr.  The board directory
defaults to the BILLBOARD_HOME environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .datastore import (
    Board,
    GeneratorSubmission,
    MetricSpec,
    canonical_json,
    load_generator_outputs,
    load_judgments,
    load_testset,
)
from .errors import BillboardError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INTERNAL = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="billboard",
        description="Bidimensional leaderboard over text generators and evaluation metrics.",
    )
    parser.add_argument(
        "--board",
        default=os.environ.get("BILLBOARD_HOME"),
        help="board directory (default: $BILLBOARD_HOME)",
    )
    sub = parser.add_subparsers(dest="command")

    p_init = sub.add_parser("init", help="create a new board directory")
    p_init.add_argument("--board-id", required=True)
    p_init.add_argument("--testset", required=True, help="JSONL test set file")
    p_init.add_argument("--judgments", required=True, help="JSONL human judgments file")
    p_init.add_argument("--reference-tags", default=None, help="comma separated tag subset")

    p_gen = sub.add_parser("submit-generator", help="submit generator outputs")
    p_gen.add_argument("--file", required=True, help="JSONL outputs file")
    p_gen.add_argument("--id", required=True)
    p_gen.add_argument("--kind", required=True, choices=["machine", "human"])
    p_gen.add_argument("--description", default="")

    p_met = sub.add_parser("submit-metric", help="submit a metric spec")
    p_met.add_argument("--spec", required=True, help="JSON metric spec file")

    sub.add_parser("recompute", help="score pending cells and refresh analyses")

    p_rep = sub.add_parser("report", help="print a report")
    p_rep.add_argument(
        "--kind", required=True, choices=["generators", "metrics", "ensemble", "overrate"]
    )
    p_rep.add_argument("--format", default="json", choices=["json", "html", "tsv"])

    p_srv = sub.add_parser("serve", help="run the HTTP API")
    p_srv.add_argument(
        "--port", type=int, default=int(os.environ.get("BILLBOARD_PORT", "8100"))
    )
    p_srv.add_argument("--host", default="127.0.0.1")

    return parser


def _require_board(args) -> Board:
    if not args.board:
        raise ValidationError("no board directory (pass --board or set BILLBOARD_HOME)")
    if not (Path(args.board) / "board.json").exists():
        raise ValidationError(f"no board at {args.board} (run `billboard init` first)")
    return Board(args.board)


def _cmd_init(args) -> int:
    if not args.board:
        raise ValidationError("no board directory (pass --board or set BILLBOARD_HOME)")
    testset = load_testset(args.testset)
    judgments = load_judgments(args.judgments, testset)
    tags = None
    if args.reference_tags:
        tags = tuple(t.strip() for t in args.reference_tags.split(",") if t.strip())
    Board.create(
        args.board,
        board_id=args.board_id,
        testset=testset,
        judgments=judgments,
        reference_tags=tags,
    )
    print(canonical_json({"board_id": args.board_id, "path": str(Path(args.board))}))
    return EXIT_OK


def _cmd_submit_generator(args) -> int:
    board = _require_board(args)
    outputs = load_generator_outputs(args.file, board.load_testset())
    receipt = board.add_generator_submission(
        GeneratorSubmission(
            generator_id=args.id,
            kind=args.kind,
            outputs=outputs,
            description=args.description,
        )
    )
    print(
        canonical_json(
            {
                "generator_id": receipt.submission_id,
                "submitted_at": receipt.submitted_at,
                "version": receipt.version,
            }
        )
    )
    return EXIT_OK


def _cmd_submit_metric(args) -> int:
    board = _require_board(args)
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ValidationError(f"metric spec file not found: {spec_path}")
    try:
        payload = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"metric spec is not valid JSON: {exc}") from exc
    receipt = board.add_metric_submission(MetricSpec.from_json_dict(payload))
    print(
        canonical_json(
            {
                "metric_id": receipt.submission_id,
                "submitted_at": receipt.submitted_at,
                "version": receipt.version,
            }
        )
    )
    return EXIT_OK


def _cmd_recompute(args) -> int:
    from .service import recompute

    board = _require_board(args)
    summary = recompute(board)
    print(
        canonical_json(
            {
                "cells_scored": summary.cells_scored,
                "rejected_metrics": summary.rejected_metrics,
                "ensemble_signature": summary.ensemble_signature,
                "ensemble_skip_reason": summary.ensemble_skip_reason,
                "scorer": summary.scorer,
                "wall_time_seconds": round(summary.wall_time_seconds, 3),
            }
        )
    )
    return EXIT_OK


def _report_tsv(kind: str, artifacts: dict) -> str:
    lines = []
    if kind == "generators":
        lines.append("rank\tgenerator_id\tscore")
        for e in artifacts["generator_ranking"]:
            lines.append(f"{e['rank']}\t{e['generator_id']}\t{e['score']!r}")
    elif kind == "metrics":
        lines.append("metric_id\tpearson_instance\tkendall_system\tn_pairs\tdegenerate")
        for e in artifacts["metric_ranking"]:
            lines.append(
                f"{e['metric_id']}\t{e['pearson_instance']!r}\t{e['kendall_system']!r}"
                f"\t{e['n_pairs']}\t{e['degenerate']}"
            )
    elif kind == "ensemble":
        lines.append("metric_id\tweight\tmean\tstd")
        model = artifacts["ensemble"] or {"weights": []}
        for w in model["weights"]:
            lines.append(f"{w['metric_id']}\t{w['weight']!r}\t{w['mean']!r}\t{w['std']!r}")
    else:
        lines.append("metric_id\tbeta0\tci90_lo\tci90_hi\tsignificance")
        for r in artifacts["overrate"] or []:
            if "error" in r:
                lines.append(f"{r['metric_id']}\terror\t\t\t{r['error']}")
            else:
                lines.append(
                    f"{r['metric_id']}\t{r['beta0']!r}\t{r['ci90_lo']!r}"
                    f"\t{r['ci90_hi']!r}\t{r['significance']}"
                )
    return "\n".join(lines)


def _cmd_report(args) -> int:
    from .reports import render_all

    board = _require_board(args)
    artifacts_path = board.path / "reports" / "artifacts.json"
    if not artifacts_path.exists():
        raise ValidationError("no artifacts yet; run `billboard recompute` first")
    artifacts = json.loads(artifacts_path.read_text(encoding="utf-8"))
    if args.format == "html":
        pages = render_all(artifacts)
        name = {"generators": "generators.html", "metrics": "metrics.html",
                "ensemble": "ensemble.html", "overrate": "overrate.html"}[args.kind]
        print(pages[name], end="")
    elif args.format == "tsv":
        print(_report_tsv(args.kind, artifacts))
    else:
        section = {
            "generators": {"generators": artifacts["generator_ranking"], "scorer": artifacts["scorer"]},
            "metrics": {"metrics": artifacts["metric_ranking"]},
            "ensemble": artifacts["ensemble"]
            or {"skip_reason": artifacts.get("ensemble_skip_reason")},
            "overrate": {"rows": artifacts["overrate"],
                         "skip_reason": artifacts.get("overrate_skip_reason")},
        }[args.kind]
        print(canonical_json(section))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(_require_board(args).path)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "init": _cmd_init,
    "submit-generator": _cmd_submit_generator,
    "submit-metric": _cmd_submit_metric,
    "recompute": _cmd_recompute,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def run_cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; normalize to the validation code
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BillboardError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
