"""Cross-language integration with the token-F1 plugin (line protocol v1).

Covers the final acceptance criterion: the plugin scores a real board with
zero protocol errors and matches an in-process reimplementation at 1e-9;
injected faults surface as scoring errors carrying the captured stderr.
"""

from __future__ import annotations

import functools
import shutil
import subprocess
from pathlib import Path

import pytest

from billboard.datastore import (
    Board,
    GeneratorSubmission,
    HumanJudgments,
    Instance,
    MetricSpec,
    Reference,
    TestSet,
)
from billboard.errors import ProtocolError, ScoringError
from billboard.runner import score_generator
from billboard.service import recompute

from oracles import token_f1_oracle
from test_acceptance import criterion

PLUGIN_DIR = Path(__file__).resolve().parent.parent / "plugin"
PLUGIN_MAIN = PLUGIN_DIR / "dist" / "main.js"
WRAPPERS = Path(__file__).parent / "fixtures" / "plugins"

WORDS = [
    "river", "stone", "bright", "cloud", "amber", "quiet", "field",
    "seven", "lantern", "crisp", "morning", "harbor",
]


@pytest.fixture(scope="module")
def plugin_main() -> Path:
    if shutil.which("node") is None:
        pytest.fail("node is required for the plugin integration tests")
    if not PLUGIN_MAIN.exists():
        build = subprocess.run(
            ["npm", "run", "build"], cwd=PLUGIN_DIR, capture_output=True, text=True
        )
        assert build.returncode == 0, f"plugin build failed: {build.stderr}"
    return PLUGIN_MAIN


def plugin_spec(metric_id: str, main_js: Path, native: bool = True, **overrides) -> MetricSpec:
    base = dict(
        metric_id=metric_id,
        direction="higher_better",
        needs_references=True,
        needs_source=False,
        native_multi_ref=native,
        executor=f"node {main_js}",
        timeout_seconds=120,
    )
    base.update(overrides)
    return MetricSpec(**base)


def _sentence(rng) -> str:
    return " ".join(rng.choice(WORDS, size=rng.integers(2, 8)))


@pytest.fixture(scope="module")
def wide_board(tmp_path_factory) -> Board:
    """3 generators x 20 instances with judgments, no metrics yet."""
    import numpy as np

    rng = np.random.default_rng(424242)
    instances = []
    for k in range(20):
        instances.append(
            Instance(
                instance_id=f"i{k:02d}",
                source_text=_sentence(rng),
                references=(
                    Reference("A", _sentence(rng)),
                    Reference("B", _sentence(rng)),
                ),
            )
        )
    testset = TestSet(instances=tuple(instances))
    gens = {}
    for g in range(3):
        gens[f"gen-{g}"] = {
            inst.instance_id: (
                inst.references[0].text if rng.random() < 0.3 else _sentence(rng)
            )
            for inst in instances
        }
    judgments = HumanJudgments(
        entries={
            (gid, inst.instance_id): float(rng.random())
            for gid in list(gens)
            for inst in instances
        }
    )
    board = Board.create(
        tmp_path_factory.mktemp("plugin-board") / "board",
        board_id="plugin-demo",
        testset=testset,
        judgments=judgments,
    )
    kinds = {"gen-0": "machine", "gen-1": "machine", "gen-2": "human"}
    for gid, outputs in gens.items():
        board.add_generator_submission(GeneratorSubmission(gid, kinds[gid], outputs))
    return board


def reference_scores(board: Board, generator_id: str) -> list[float]:
    """In-process token-F1, computed independently of the plugin."""
    testset = board.load_testset()
    outputs = board.load_generator(generator_id).outputs
    scores = []
    for inst in testset.instances:
        cand = outputs[inst.instance_id]
        scores.append(max(token_f1_oracle(cand, ref.text) for ref in inst.references))
    return scores


@criterion("criterion-11", "plugin scores a 3x20 board to 1e-9 and faults surface with stderr")
def test_c11_protocol_integration(wide_board: Board, plugin_main: Path):
    board = wide_board
    board.add_metric_submission(plugin_spec("token-f1", plugin_main, native=True))
    summary = recompute(board)
    assert summary.rejected_metrics == []
    assert summary.cells_scored == 3

    snapshot = board.snapshot()
    for gid in ("gen-0", "gen-1", "gen-2"):
        got = snapshot.oriented_scores(gid, "token-f1")
        want = reference_scores(board, gid)
        assert len(got) == 20
        for a, b in zip(got, want):
            assert a == pytest.approx(b, abs=1e-9)

    # engine-side max rule: non-native registration scores identically,
    # because the plugin also maxes internally
    spec_split = plugin_spec("token-f1-split", plugin_main, native=False)
    testset = board.load_testset()
    for gid in ("gen-0", "gen-1", "gen-2"):
        gen = board.load_generator(gid)
        split_scores = score_generator(spec_split, gen, testset, ("A", "B"))
        assert split_scores == pytest.approx(
            list(snapshot.oriented_scores(gid, "token-f1")), abs=1e-12
        )

    # malformed-line fault: the wrapper feeds the plugin a bad first line;
    # the plugin exits 2 and its stderr is captured in the scoring error
    gen = board.load_generator("gen-0")
    bad_input = plugin_spec(
        "token-f1-badline",
        plugin_main,
        executor=f"/bin/sh {WRAPPERS / 'fx_wrap_malformed.sh'} {plugin_main}",
    )
    with pytest.raises(ScoringError) as malformed:
        score_generator(bad_input, gen, testset, ("A", "B"))
    assert malformed.value.stderr
    assert "malformed request" in malformed.value.stderr

    # truncated-output fault: one response line is swallowed, which the
    # engine reports as a count mismatch with the captured stderr
    truncated = plugin_spec(
        "token-f1-truncated",
        plugin_main,
        executor=f"/bin/sh {WRAPPERS / 'fx_wrap_truncate.sh'} {plugin_main}",
    )
    with pytest.raises(ProtocolError) as trunc:
        score_generator(truncated, gen, testset, ("A", "B"))
    assert "19 responses for 20 requests" in str(trunc.value)
    assert trunc.value.stderr is not None
    assert "truncating plugin output" in trunc.value.stderr


def test_plugin_rejected_at_submission_when_wrapped_fault_fires(
    wide_board: Board, plugin_main: Path
):
    # The malformed-line wrapper already fails the one-request probe, so the
    # submission itself is rejected with diagnostics.
    spec = plugin_spec(
        "token-f1-broken",
        plugin_main,
        executor=f"/bin/sh {WRAPPERS / 'fx_wrap_malformed.sh'} {plugin_main}",
    )
    with pytest.raises(ScoringError) as excinfo:
        wide_board.add_metric_submission(spec)
    assert excinfo.value.stderr


def test_version_mismatch_exit_code(plugin_main: Path):
    proc = subprocess.run(
        ["node", str(plugin_main)],
        input='{"id": "r", "candidate": "a", "references": ["a"], "source": null}\n',
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "BILLBOARD_PROTOCOL_VERSION": "2"},
    )
    assert proc.returncode == 3
    assert "unsupported protocol version" in proc.stderr
