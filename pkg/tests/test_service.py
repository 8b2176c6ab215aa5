"""Recompute pipeline and HTTP API."""

from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from billboard.datastore import Board, MetricSpec
from billboard.service import create_app, recompute

from conftest import GENERATOR_OUTPUTS, plugin_cmd


def builtin_spec(metric_id: str, executor: str) -> MetricSpec:
    from billboard.builtin_metrics import BUILTIN_METRICS

    builtin = BUILTIN_METRICS[executor]
    return MetricSpec(
        metric_id=metric_id,
        direction=builtin.direction,
        needs_references=True,
        needs_source=False,
        native_multi_ref=builtin.native_multi_ref,
        executor=executor,
    )


def external_spec(metric_id: str, plugin: str, **overrides) -> MetricSpec:
    base = dict(
        metric_id=metric_id,
        direction="higher_better",
        needs_references=True,
        needs_source=False,
        native_multi_ref=False,
        executor=plugin_cmd(plugin),
        timeout_seconds=60,
    )
    base.update(overrides)
    return MetricSpec(**base)


@pytest.fixture()
def board_with_metrics(populated_board: Board) -> Board:
    populated_board.add_metric_submission(builtin_spec("bleu", "sentence_bleu"))
    populated_board.add_metric_submission(builtin_spec("chrf", "chrf"))
    populated_board.add_metric_submission(external_spec("len-ratio", "fx_len_ratio.py"))
    return populated_board


class TestRecompute:
    def test_full_pipeline(self, board_with_metrics: Board):
        summary = recompute(board_with_metrics)
        assert summary.cells_scored == 12  # 3 metrics x 4 generators
        assert summary.ensemble_signature == "ensemble.demo+refs.AB+version.1"
        assert summary.scorer is not None
        assert len(summary.generator_ranking) == 4
        assert len(summary.metric_ranking) == 3
        assert summary.overrate_rows is not None

    def test_two_metrics_skip_ensemble_with_reason(self, populated_board: Board):
        populated_board.add_metric_submission(builtin_spec("bleu", "sentence_bleu"))
        populated_board.add_metric_submission(builtin_spec("chrf", "chrf"))
        summary = recompute(populated_board)
        assert summary.ensemble_signature is None
        assert "fewer than 3" in summary.ensemble_skip_reason
        assert summary.metric_ranking  # rankings still produced

    def test_idempotent_second_run(self, board_with_metrics: Board):
        recompute(board_with_metrics)
        reports = board_with_metrics.path / "reports"
        before = {p.name: p.read_bytes() for p in reports.iterdir()}
        summary = recompute(board_with_metrics)
        assert summary.cells_scored == 0
        after = {p.name: p.read_bytes() for p in reports.iterdir()}
        assert before == after

    def test_incremental_new_metric(self, board_with_metrics: Board):
        first = recompute(board_with_metrics)
        assert first.ensemble_signature.endswith("version.1")
        sig1 = board_with_metrics.path / "ensembles" / f"{first.ensemble_signature}.json"
        v1_payload = sig1.read_bytes()
        board_with_metrics.add_metric_submission(
            external_spec("neg-chrf", "fx_neg_chrf.py", direction="lower_better")
        )
        second = recompute(board_with_metrics)
        assert second.cells_scored == 4  # only the new metric's cells
        assert second.ensemble_signature.endswith("version.2")
        # old signature file untouched
        assert sig1.read_bytes() == v1_payload

    def test_overrate_report_includes_ensemble_row(self, board_with_metrics: Board):
        summary = recompute(board_with_metrics)
        ids = [r["metric_id"] for r in summary.overrate_rows]
        assert summary.ensemble_signature in ids
        overrate_path = board_with_metrics.path / "reports" / "overrate.json"
        stored = json.loads(overrate_path.read_text())
        assert stored["ensemble_scores"] == "full_fit"

    def test_failing_metric_rejected_and_run_continues(self, populated_board: Board):
        populated_board.add_metric_submission(builtin_spec("bleu", "sentence_bleu"))
        populated_board.add_metric_submission(
            external_spec("flaky", "fx_bad_count.py"),
        )
        summary = recompute(populated_board)
        assert [m for m, _ in summary.rejected_metrics] == ["flaky"]
        assert populated_board.load_metric("flaky").status == "rejected"
        assert "responses" in populated_board.load_metric("flaky").rejection_reason
        # bleu still scored and ranked
        assert any(e["metric_id"] == "bleu" for e in summary.metric_ranking)
        # rejected metric's cells are not pending afterwards
        assert populated_board.pending_cells() == ()

    def test_recompute_determinism_byte_identical(self, board_with_metrics: Board):
        recompute(board_with_metrics)
        reports = board_with_metrics.path / "reports"
        ensembles = board_with_metrics.path / "ensembles"
        first = {
            p.name: p.read_bytes()
            for d in (reports, ensembles)
            for p in d.iterdir()
        }
        recompute(board_with_metrics)
        second = {
            p.name: p.read_bytes()
            for d in (reports, ensembles)
            for p in d.iterdir()
        }
        assert first == second

    def test_artifacts_json_shape(self, board_with_metrics: Board):
        recompute(board_with_metrics)
        artifacts = json.loads(
            (board_with_metrics.path / "reports" / "artifacts.json").read_text()
        )
        assert artifacts["board_id"] == "demo"
        assert artifacts["scorer"]["kind"] in {"metric", "ensemble"}
        assert len(artifacts["generator_ranking"]) == 4
        ranks = [e["rank"] for e in artifacts["generator_ranking"]]
        assert ranks == sorted(ranks)
        for page in ("index.html", "generators.html", "metrics.html",
                     "ensemble.html", "overrate.html"):
            assert (board_with_metrics.path / "reports" / page).exists()


class TestHttpApi:
    @pytest.fixture()
    def client(self, empty_board: Board) -> TestClient:
        return TestClient(create_app(empty_board.path))

    @staticmethod
    def _gen_payload(gid: str, kind: str = "machine") -> dict:
        return {
            "generator_id": gid,
            "kind": kind,
            "description": "test system",
            "outputs": [
                {"instance_id": iid, "text": text}
                for iid, text in GENERATOR_OUTPUTS[gid].items()
            ],
        }

    def test_generator_submission_roundtrip(self, client: TestClient):
        resp = client.post("/api/v1/generators", json=self._gen_payload("sys-good"))
        assert resp.status_code == 201
        body = resp.json()
        assert body["generator_id"] == "sys-good"
        assert body["version"] == 1
        dup = client.post("/api/v1/generators", json=self._gen_payload("sys-good"))
        assert dup.status_code == 409

    def test_invalid_generator_submission_422(self, client: TestClient):
        payload = self._gen_payload("sys-mid")
        payload["outputs"] = payload["outputs"][:1]
        resp = client.post("/api/v1/generators", json=payload)
        assert resp.status_code == 422
        assert "x2" in resp.json()["detail"] or "x3" in resp.json()["detail"]

    def test_metric_submission_and_smoke_failure(self, client: TestClient):
        ok = client.post(
            "/api/v1/metrics",
            json={
                "metric_id": "bleu",
                "direction": "higher_better",
                "needs_references": True,
                "needs_source": False,
                "native_multi_ref": True,
                "executor": "sentence_bleu",
                "timeout_seconds": 60,
                "version_tag": "1",
            },
        )
        assert ok.status_code == 201
        bad = client.post(
            "/api/v1/metrics",
            json={
                "metric_id": "crash",
                "direction": "higher_better",
                "needs_references": True,
                "needs_source": False,
                "native_multi_ref": False,
                "executor": plugin_cmd("fx_crash.py"),
                "timeout_seconds": 30,
                "version_tag": "1",
            },
        )
        assert bad.status_code == 422
        assert "cannot load model weights" in bad.json()["detail"]

    def test_leaderboards_404_before_recompute(self, client: TestClient):
        assert client.get("/api/v1/leaderboard/generators").status_code == 404

    def test_full_flow_over_http(self, client: TestClient):
        for gid in GENERATOR_OUTPUTS:
            kind = "human" if gid == "human-b" else "machine"
            assert (
                client.post(
                    "/api/v1/generators", json=self._gen_payload(gid, kind)
                ).status_code
                == 201
            )
        for mid, executor, native in (
            ("bleu", "sentence_bleu", True),
            ("chrf", "chrf", False),
        ):
            client.post(
                "/api/v1/metrics",
                json={
                    "metric_id": mid,
                    "direction": "higher_better",
                    "needs_references": True,
                    "needs_source": False,
                    "native_multi_ref": native,
                    "executor": executor,
                    "timeout_seconds": 60,
                    "version_tag": "1",
                },
            )
        job = client.post("/api/v1/recompute")
        assert job.status_code == 202
        job_id = job.json()["job_id"]
        for _ in range(100):
            status = client.get(f"/api/v1/recompute/{job_id}").json()
            if status["status"] != "running":
                break
            time.sleep(0.1)
        assert status["status"] == "done"
        gens = client.get("/api/v1/leaderboard/generators")
        assert gens.status_code == 200
        assert len(gens.json()["generators"]) == 4
        mets = client.get("/api/v1/leaderboard/metrics").json()["metrics"]
        assert {m["metric_id"] for m in mets} == {"bleu", "chrf"}
        # only 2 metrics: no ensemble
        assert client.get("/api/v1/ensemble/current").status_code == 404
        overrate = client.get("/api/v1/analysis/overrate")
        assert overrate.status_code == 200
        outputs = client.get("/api/v1/generators/sys-good/outputs")
        assert outputs.status_code == 200
        assert outputs.text.count("\n") == 6
        assert client.get("/").status_code == 200
        assert client.get("/reports/metrics.html").status_code == 200
        assert client.get("/reports/../secret").status_code in (404, 422)

    def test_unknown_job_404(self, client: TestClient):
        assert client.get("/api/v1/recompute/job-99").status_code == 404


class TestEnsembleOverHttp:
    def test_signature_lookup(self, board_with_metrics: Board):
        summary = recompute(board_with_metrics)
        client = TestClient(create_app(board_with_metrics.path))
        current = client.get("/api/v1/ensemble/current")
        assert current.status_code == 200
        sig = current.json()["signature"]
        assert sig == summary.ensemble_signature
        by_sig = client.get(f"/api/v1/ensemble/{sig}")
        assert by_sig.status_code == 200
        assert by_sig.json() == current.json()
        assert client.get("/api/v1/ensemble/ensemble.nope+refs.A+version.9").status_code == 404
