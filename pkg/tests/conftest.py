"""Shared fixtures: tiny real boards backed by temp directories."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from billboard.datastore import Board, GeneratorSubmission, canonical_json

FIXTURES = Path(__file__).parent / "fixtures"
PLUGINS = FIXTURES / "plugins"


def plugin_cmd(name: str) -> str:
    """Executor command line for a fixture plugin."""
    return f"{sys.executable} {PLUGINS / name}"


TESTSET_ROWS = [
    {
        "instance_id": "x1",
        "source_text": "Der Hund schläft.",
        "references": [
            {"tag": "A", "text": "the dog is sleeping"},
            {"tag": "B", "text": "the dog sleeps"},
        ],
    },
    {
        "instance_id": "x2",
        "source_text": "Die Katze rennt schnell.",
        "references": [
            {"tag": "A", "text": "the cat runs fast"},
            {"tag": "B", "text": "the cat is running quickly"},
        ],
    },
    {
        "instance_id": "x3",
        "source_text": "Es regnet heute.",
        "references": [
            {"tag": "A", "text": "it is raining today"},
            {"tag": "B", "text": "it rains today"},
        ],
    },
    {
        "instance_id": "x4",
        "source_text": "Der alte Mann liest eine lange Zeitung.",
        "references": [
            {"tag": "A", "text": "the old man reads a long newspaper"},
            {"tag": "B", "text": "the old man is reading a lengthy paper"},
        ],
    },
    {
        "instance_id": "x5",
        "source_text": "Wir kaufen morgen frisches Brot.",
        "references": [
            {"tag": "A", "text": "we will buy fresh bread tomorrow"},
            {"tag": "B", "text": "tomorrow we buy fresh bread"},
        ],
    },
    {
        "instance_id": "x6",
        "source_text": "Das Konzert wurde wegen Regen abgesagt.",
        "references": [
            {"tag": "A", "text": "the concert was cancelled because of rain"},
            {"tag": "B", "text": "rain forced the concert to be called off"},
        ],
    },
]

GENERATOR_OUTPUTS = {
    "sys-good": {
        "x1": "the dog is sleeping",
        "x2": "the cat runs fast",
        "x3": "it is raining today",
        "x4": "the old man reads a long newspaper",
        "x5": "we will buy fresh bread tomorrow",
        "x6": "the concert was cancelled because of rain",
    },
    "sys-mid": {
        "x1": "sleeping is the dog now",
        "x2": "a cat runs",
        "x3": "rain is falling today",
        "x4": "newspaper long a reads man old the",
        "x5": "fresh bread purchase tomorrow",
        "x6": "the concert got cancelled due to rainfall",
    },
    "sys-weak": {
        "x1": "a hound rests",
        "x2": "some animal moves",
        "x3": "wet weather happens",
        "x4": "an elderly person browses print media",
        "x5": "groceries arrive eventually",
        "x6": "no music tonight",
    },
    "human-b": {
        "x1": "the dog sleeps",
        "x2": "the cat is running quickly",
        "x3": "it rains today",
        "x4": "the old man is reading a lengthy paper",
        "x5": "tomorrow we buy fresh bread",
        "x6": "rain forced the concert to be called off",
    },
}

GENERATOR_KINDS = {
    "sys-good": "machine",
    "sys-mid": "machine",
    "sys-weak": "machine",
    "human-b": "human",
}

JUDGMENTS = {
    ("sys-good", "x1"): 0.95,
    ("sys-good", "x2"): 0.9,
    ("sys-good", "x3"): 0.92,
    ("sys-good", "x4"): 0.88,
    ("sys-good", "x5"): 0.94,
    ("sys-good", "x6"): 0.91,
    ("sys-mid", "x1"): 0.55,
    ("sys-mid", "x2"): 0.45,
    ("sys-mid", "x3"): 0.6,
    ("sys-mid", "x4"): 0.4,
    ("sys-mid", "x5"): 0.5,
    ("sys-mid", "x6"): 0.65,
    ("sys-weak", "x1"): 0.2,
    ("sys-weak", "x2"): 0.1,
    ("sys-weak", "x3"): 0.15,
    ("sys-weak", "x4"): 0.25,
    ("sys-weak", "x5"): 0.05,
    ("sys-weak", "x6"): 0.1,
    ("human-b", "x1"): 0.97,
    ("human-b", "x2"): 0.93,
    ("human-b", "x3"): 0.96,
    ("human-b", "x4"): 0.9,
    ("human-b", "x5"): 0.95,
    ("human-b", "x6"): 0.98,
}


def write_testset(path: Path, rows=None) -> Path:
    rows = rows if rows is not None else TESTSET_ROWS
    path.write_text("\n".join(canonical_json(r) for r in rows) + "\n", encoding="utf-8")
    return path


def write_judgments(path: Path, entries=None) -> Path:
    entries = entries if entries is not None else JUDGMENTS
    lines = [
        canonical_json({"generator_id": g, "instance_id": i, "score": s})
        for (g, i), s in sorted(entries.items())
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def testset_path(tmp_path: Path) -> Path:
    return write_testset(tmp_path / "testset.jsonl")


@pytest.fixture()
def judgments_path(tmp_path: Path) -> Path:
    return write_judgments(tmp_path / "judgments.jsonl")


@pytest.fixture()
def empty_board(tmp_path: Path, monkeypatch) -> Board:
    """Initialized board with a test set and judgments but no submissions."""
    monkeypatch.setenv("BILLBOARD_FIXED_TIME", "2026-02-01T00:00:00Z")
    from billboard.datastore import load_judgments, load_testset

    testset = load_testset(write_testset(tmp_path / "testset.jsonl"))
    judgments = load_judgments(write_judgments(tmp_path / "judgments.jsonl"), testset)
    return Board.create(
        tmp_path / "board",
        board_id="demo",
        testset=testset,
        judgments=judgments,
    )


@pytest.fixture()
def populated_board(empty_board: Board) -> Board:
    """Board with all four generators submitted."""
    for gid, outputs in GENERATOR_OUTPUTS.items():
        empty_board.add_generator_submission(
            GeneratorSubmission(
                generator_id=gid,
                kind=GENERATOR_KINDS[gid],
                outputs=outputs,
            )
        )
    return empty_board


def write_metric_spec(path: Path, **overrides) -> Path:
    spec = {
        "metric_id": "token-f1",
        "direction": "higher_better",
        "needs_references": True,
        "needs_source": False,
        "native_multi_ref": False,
        "executor": plugin_cmd("fx_len_ratio.py"),
        "timeout_seconds": 60,
        "version_tag": "1",
    }
    spec.update(overrides)
    path.write_text(json.dumps(spec) + "\n", encoding="utf-8")
    return path
