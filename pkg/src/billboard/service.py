"""Recompute pipeline and HTTP API.

Recompute scores every pending (metric, generator) cell, then reruns the
analyses in order (metric ranking, ensemble, generator ranking, overrating)
and republishes all artifacts.  It is idempotent: a second run over
unchanged state scores nothing and rewrites byte-identical artifacts.  A
metric that fails on any cell is rejected as a whole and the run continues.

The HTTP layer is a thin FastAPI app over the same operations; reads serve
the last published artifacts bundle (a single atomically replaced file, so
no torn reads across rankings and ensemble).
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import runner
from .datastore import (
    Board,
    GeneratorSubmission,
    MetricSpec,
    Snapshot,
    canonical_json,
    load_testset,
    write_text,
)
from .ensemble import EnsembleModel, EnsembleRegistry, build_ensemble
from .errors import (
    AnalysisError,
    BillboardError,
    DuplicateSubmissionError,
    ScoringError,
    ValidationError,
)
from .mixed_effects import overrate_report
from .reports import render_all
from .stats import rank_generators, rank_metrics


@dataclass(frozen=True)
class RecomputePlan:
    pending_cells: tuple[tuple[str, str], ...]
    stale_analyses: dict = field(default_factory=lambda: {
        "rankings": True,
        "ensemble": True,
        "mixed_effects": True,
    })


@dataclass
class RecomputeSummary:
    cells_scored: int
    rejected_metrics: list[tuple[str, str]]
    metric_ranking: list[dict]
    generator_ranking: list[dict]
    scorer: dict | None
    ensemble_signature: str | None
    ensemble_skip_reason: str | None
    overrate_rows: list[dict] | None
    wall_time_seconds: float


def plan_recompute(board: Board) -> RecomputePlan:
    return RecomputePlan(pending_cells=board.pending_cells())


def _score_pending(board: Board, plan: RecomputePlan) -> tuple[int, list[tuple[str, str]]]:
    """Score pending cells metric by metric; a failing metric is rejected whole."""
    testset = board.load_testset()
    tags = board.config.reference_tags
    scored = 0
    rejected: list[tuple[str, str]] = []
    by_metric: dict[str, list[str]] = {}
    for mid, gid in plan.pending_cells:
        by_metric.setdefault(mid, []).append(gid)
    for mid in sorted(by_metric):
        spec = board.load_metric(mid)
        try:
            for gid in sorted(by_metric[mid]):
                generator = board.load_generator(gid)
                raws = runner.score_generator(spec, generator, testset, tags)
                oriented = runner.orient(spec, raws)
                board.write_scores(mid, gid, [float(r) for r in raws], [float(o) for o in oriented])
                scored += 1
        except (ScoringError, ValidationError) as exc:
            detail = str(exc)
            stderr = getattr(exc, "stderr", None)
            if stderr:
                detail = f"{detail}; stderr: {stderr.strip()}"
            board.reject_metric(mid, detail)
            rejected.append((mid, detail))
    return scored, rejected


def _build_artifacts(
    snapshot: Snapshot,
    metric_ranking,
    generator_ranking,
    scorer,
    model: EnsembleModel | None,
    ensemble_skip_reason: str | None,
    overrate_rows,
    overrate_skip_reason: str | None,
) -> dict:
    return {
        "board_id": snapshot.board_id,
        "version": snapshot.config.version,
        "counts": {
            "generators": len(snapshot.generators),
            "metrics": len(snapshot.active_metrics()),
            "instances": len(snapshot.testset),
        },
        "metric_ranking": [
            {
                "metric_id": e.metric_id,
                "pearson_instance": e.pearson_instance,
                "kendall_system": e.kendall_system,
                "n_pairs": e.n_pairs,
                "degenerate": e.degenerate,
            }
            for e in metric_ranking
        ],
        "generator_ranking": [
            {"generator_id": e.generator_id, "score": e.score, "rank": e.rank}
            for e in generator_ranking
        ],
        "scorer": scorer,
        "ensemble": model.to_json_dict() if model is not None else None,
        "ensemble_skip_reason": ensemble_skip_reason,
        "overrate": overrate_rows,
        "overrate_skip_reason": overrate_skip_reason,
        "overrate_ensemble_scores": "full_fit",
    }


def recompute(board: Board) -> RecomputeSummary:
    """Score pending cells, rerun analyses, persist artifacts."""
    start = time.monotonic()
    with board.exclusive_lock():
        plan = plan_recompute(board)
        scored, rejected = _score_pending(board, plan)
        snapshot = board.snapshot()

        metric_ranking = []
        generator_ranking = []
        scorer = None
        model: EnsembleModel | None = None
        ensemble_skip = None
        overrate_rows = None
        overrate_skip = None

        registry = EnsembleRegistry(board.path / "ensembles")
        have_judgments = snapshot.judgments is not None
        annotated = snapshot.annotated_generators() if have_judgments else ()
        if have_judgments and annotated and snapshot.active_metrics():
            metric_ranking = rank_metrics(snapshot)
            usable = sum(1 for e in metric_ranking if not e.degenerate)
            if usable < 3:
                ensemble_skip = f"fewer than 3 usable metrics ({usable})"
            elif len(annotated) < 3:
                ensemble_skip = f"fewer than 3 annotated generators ({len(annotated)})"
            else:
                model = build_ensemble(snapshot, registry)
            entries, scorer = rank_generators(snapshot, metric_ranking, model)
            generator_ranking = entries
            try:
                overrate_rows = overrate_report(snapshot, model)
            except AnalysisError as exc:
                overrate_skip = str(exc)
        else:
            ensemble_skip = "no scored metrics or no human judgments"
            overrate_skip = "no scored metrics or no human judgments"

        artifacts = _build_artifacts(
            snapshot,
            metric_ranking,
            generator_ranking,
            scorer,
            model,
            ensemble_skip,
            overrate_rows,
            overrate_skip,
        )
        reports_dir = board.path / "reports"
        reports_dir.mkdir(exist_ok=True)
        write_text(reports_dir / "artifacts.json", canonical_json(artifacts) + "\n")
        if overrate_rows is not None:
            write_text(
                reports_dir / "overrate.json",
                canonical_json({"rows": overrate_rows, "ensemble_scores": "full_fit"}) + "\n",
            )
        for name, page in render_all(artifacts).items():
            write_text(reports_dir / name, page)

        return RecomputeSummary(
            cells_scored=scored,
            rejected_metrics=rejected,
            metric_ranking=artifacts["metric_ranking"],
            generator_ranking=artifacts["generator_ranking"],
            scorer=scorer,
            ensemble_signature=model.signature if model else None,
            ensemble_skip_reason=ensemble_skip,
            overrate_rows=overrate_rows,
            wall_time_seconds=time.monotonic() - start,
        )


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------


def create_app(board_path: str | Path):
    """FastAPI app bound to one board directory."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse

    board = Board(board_path)
    app = FastAPI(title="billboard", version="0.1.0")
    jobs: dict[str, dict] = {}
    job_counter = itertools.count(1)
    jobs_lock = threading.Lock()

    def _artifacts() -> dict:
        path = board.path / "reports" / "artifacts.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail="no artifacts yet; run a recompute")
        return json.loads(path.read_text(encoding="utf-8"))

    def _error_status(exc: BillboardError) -> int:
        if isinstance(exc, DuplicateSubmissionError):
            return 409
        if isinstance(exc, ValidationError):
            return 422
        return 500

    @app.post("/api/v1/generators", status_code=201)
    def submit_generator(payload: dict):
        try:
            outputs = {
                str(o["instance_id"]): str(o["text"]) for o in payload.get("outputs", [])
            }
            submission = GeneratorSubmission(
                generator_id=str(payload.get("generator_id", "")),
                kind=str(payload.get("kind", "")),
                outputs=outputs,
                description=str(payload.get("description", "")),
            )
            receipt = board.add_generator_submission(submission)
        except BillboardError as exc:
            raise HTTPException(status_code=_error_status(exc), detail=str(exc))
        return {
            "generator_id": receipt.submission_id,
            "submitted_at": receipt.submitted_at,
            "version": receipt.version,
        }

    @app.post("/api/v1/metrics", status_code=201)
    def submit_metric(payload: dict):
        try:
            spec = MetricSpec.from_json_dict(payload)
            receipt = board.add_metric_submission(spec)
        except ScoringError as exc:
            detail = str(exc)
            if exc.stderr:
                detail = f"{detail}; stderr: {exc.stderr.strip()}"
            raise HTTPException(status_code=422, detail=detail)
        except BillboardError as exc:
            raise HTTPException(status_code=_error_status(exc), detail=str(exc))
        return {
            "metric_id": receipt.submission_id,
            "submitted_at": receipt.submitted_at,
            "version": receipt.version,
        }

    def _run_job(job_id: str):
        try:
            summary = recompute(board)
            with jobs_lock:
                jobs[job_id] = {
                    "job_id": job_id,
                    "status": "done",
                    "cells_scored": summary.cells_scored,
                    "rejected_metrics": summary.rejected_metrics,
                    "ensemble_signature": summary.ensemble_signature,
                    "wall_time_seconds": summary.wall_time_seconds,
                }
        except Exception as exc:
            with jobs_lock:
                jobs[job_id] = {"job_id": job_id, "status": "failed", "error": str(exc)}

    @app.post("/api/v1/recompute", status_code=202)
    def start_recompute():
        with jobs_lock:
            job_id = f"job-{next(job_counter)}"
            jobs[job_id] = {"job_id": job_id, "status": "running"}
        thread = threading.Thread(target=_run_job, args=(job_id,), daemon=True)
        thread.start()
        return {"job_id": job_id}

    @app.get("/api/v1/recompute/{job_id}")
    def job_status(job_id: str):
        with jobs_lock:
            if job_id not in jobs:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
            return dict(jobs[job_id])

    @app.get("/api/v1/leaderboard/generators")
    def leaderboard_generators():
        art = _artifacts()
        return {"generators": art["generator_ranking"], "scorer": art["scorer"]}

    @app.get("/api/v1/leaderboard/metrics")
    def leaderboard_metrics():
        return {"metrics": _artifacts()["metric_ranking"]}

    @app.get("/api/v1/ensemble/current")
    def ensemble_current():
        model = _artifacts()["ensemble"]
        if model is None:
            raise HTTPException(status_code=404, detail="no ensemble built")
        return model

    @app.get("/api/v1/ensemble/{signature}")
    def ensemble_by_signature(signature: str):
        registry = EnsembleRegistry(board.path / "ensembles")
        try:
            return registry.load(signature).to_json_dict()
        except AnalysisError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/api/v1/analysis/overrate")
    def analysis_overrate():
        art = _artifacts()
        if art["overrate"] is None:
            raise HTTPException(
                status_code=404, detail=art.get("overrate_skip_reason") or "not computed"
            )
        return {"rows": art["overrate"]}

    @app.get("/api/v1/generators/{generator_id}/outputs")
    def download_outputs(generator_id: str):
        path = board.path / "generators" / generator_id / "outputs.jsonl"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown generator {generator_id!r}")
        return PlainTextResponse(path.read_text(encoding="utf-8"), media_type="application/jsonl")

    def _page(name: str) -> "HTMLResponse":
        path = board.path / "reports" / name
        if not path.exists():
            raise HTTPException(status_code=404, detail="no reports yet; run a recompute")
        return HTMLResponse(path.read_text(encoding="utf-8"))

    @app.get("/", response_class=HTMLResponse)
    def root():
        return _page("index.html")

    @app.get("/reports/{name}", response_class=HTMLResponse)
    def report_page(name: str):
        if "/" in name or name not in {
            "index.html",
            "generators.html",
            "metrics.html",
            "ensemble.html",
            "overrate.html",
        }:
            raise HTTPException(status_code=404, detail="unknown report")
        return _page(name)

    return app
