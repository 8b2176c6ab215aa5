"""On-disk board: test set, submissions, judgments, score tensor, artifacts.

The board is a directory of JSON/JSONL files so that its entire state is
diffable and portable.  All writes are serialized through a single mutation
lock; reads go through immutable snapshots that are safe to share across
threads.  Serialization is canonical (sorted keys, compact separators, LF
line endings) so identical state always produces identical bytes.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

from .builtin_metrics import BUILTIN_METRICS
from .errors import (
    BoardStateError,
    DuplicateSubmissionError,
    ValidationError,
)

GENERATOR_KINDS = ("machine", "human")
DIRECTIONS = ("higher_better", "lower_better")


def canonical_json(obj) -> str:
    """Deterministic single-line JSON used for every file the board writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_text(path: Path, text: str) -> None:
    """Atomic write via a temp file in the same directory."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path.name}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{path.name}: line {lineno} is not a JSON object")
            yield lineno, obj


def _utc_now() -> str:
    fixed = os.environ.get("BILLBOARD_FIXED_TIME")
    if fixed:
        return fixed
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reference:
    tag: str
    text: str


@dataclass(frozen=True)
class Instance:
    instance_id: str
    source_text: str
    references: tuple[Reference, ...]

    def reference_texts(self, tags: tuple[str, ...] | None = None) -> tuple[str, ...]:
        if tags is None:
            return tuple(r.text for r in self.references)
        wanted = set(tags)
        return tuple(r.text for r in self.references if r.tag in wanted)


@dataclass(frozen=True)
class TestSet:
    __test__ = False  # domain type, not a pytest class

    instances: tuple[Instance, ...]

    def __post_init__(self):
        seen = set()
        for inst in self.instances:
            if not inst.instance_id:
                raise ValidationError("instance_id must be non-empty")
            if inst.instance_id in seen:
                raise ValidationError(f"duplicate instance_id {inst.instance_id!r}")
            if not inst.references:
                raise ValidationError(f"instance {inst.instance_id!r} has no references")
            seen.add(inst.instance_id)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def instance_ids(self) -> tuple[str, ...]:
        return tuple(i.instance_id for i in self.instances)

    def reference_tags(self) -> tuple[str, ...]:
        tags: list[str] = []
        for inst in self.instances:
            for ref in inst.references:
                if ref.tag not in tags:
                    tags.append(ref.tag)
        return tuple(tags)


@dataclass(frozen=True)
class GeneratorSubmission:
    generator_id: str
    kind: str
    outputs: Mapping[str, str]
    submitted_at: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.generator_id:
            raise ValidationError("generator_id must be non-empty")
        if self.kind not in GENERATOR_KINDS:
            raise ValidationError(f"kind must be one of {GENERATOR_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class MetricSpec:
    metric_id: str
    direction: str
    needs_references: bool
    needs_source: bool
    native_multi_ref: bool
    executor: str
    timeout_seconds: float = 600.0
    version_tag: str = ""
    status: str = "active"
    rejection_reason: str = ""

    def __post_init__(self):
        if not self.metric_id:
            raise ValidationError("metric_id must be non-empty")
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.timeout_seconds <= 0:
            raise ValidationError("timeout_seconds must be positive")
        if not self.executor:
            raise ValidationError("executor must be non-empty")

    @property
    def is_builtin(self) -> bool:
        return self.executor in BUILTIN_METRICS

    def to_json_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "direction": self.direction,
            "needs_references": self.needs_references,
            "needs_source": self.needs_source,
            "native_multi_ref": self.native_multi_ref,
            "executor": self.executor,
            "timeout_seconds": self.timeout_seconds,
            "version_tag": self.version_tag,
            "status": self.status,
            "rejection_reason": self.rejection_reason,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MetricSpec":
        try:
            return cls(
                metric_id=obj["metric_id"],
                direction=obj["direction"],
                needs_references=bool(obj["needs_references"]),
                needs_source=bool(obj["needs_source"]),
                native_multi_ref=bool(obj["native_multi_ref"]),
                executor=obj["executor"],
                timeout_seconds=float(obj.get("timeout_seconds", 600.0)),
                version_tag=obj.get("version_tag", ""),
                status=obj.get("status", "active"),
                rejection_reason=obj.get("rejection_reason", ""),
            )
        except KeyError as exc:
            raise ValidationError(f"metric spec missing field {exc}") from exc


@dataclass(frozen=True)
class HumanJudgments:
    entries: Mapping[tuple[str, str], float]
    rubric_note: str = ""

    def annotated_generators(self) -> tuple[str, ...]:
        return tuple(sorted({g for g, _ in self.entries}))

    def score(self, generator_id: str, instance_id: str) -> float:
        return self.entries[(generator_id, instance_id)]

    def validate_panel(self, testset: TestSet) -> None:
        """Instance ids must resolve and the panel must be rectangular."""
        known = set(testset.instance_ids)
        per_gen: dict[str, set[str]] = {}
        for (gen, inst), _ in self.entries.items():
            if inst not in known:
                raise ValidationError(f"human judgment references unknown instance {inst!r}")
            per_gen.setdefault(gen, set()).add(inst)
        if len(per_gen) < 2:
            raise ValidationError("human judgments must cover at least 2 generators")
        full = set(testset.instance_ids)
        for gen, insts in per_gen.items():
            if insts != full:
                missing = sorted(full - insts)
                raise ValidationError(
                    f"human judgments for {gen!r} are not rectangular; missing {missing[:5]}"
                )


@dataclass(frozen=True)
class ScoreTensor:
    """All scores for accepted (generator, metric) pairs, in test-set order."""

    raw: Mapping[tuple[str, str], tuple[float, ...]]
    oriented: Mapping[tuple[str, str], tuple[float, ...]]
    aggregates: Mapping[tuple[str, str], float]

    def has_cell(self, generator_id: str, metric_id: str) -> bool:
        return (generator_id, metric_id) in self.oriented


@dataclass(frozen=True)
class Receipt:
    submission_id: str
    submitted_at: str
    version: int


@dataclass(frozen=True)
class BoardConfig:
    board_id: str
    reference_tags: tuple[str, ...]
    version: int
    include_human_in_ranking: bool = True
    evaluated_human: str | None = None
    mixed_effects_reference_tags: tuple[str, ...] | None = None

    def to_json_dict(self) -> dict:
        return {
            "board_id": self.board_id,
            "reference_tags": list(self.reference_tags),
            "version": self.version,
            "include_human_in_ranking": self.include_human_in_ranking,
            "mixed_effects": {
                "evaluated_human": self.evaluated_human,
                "reference_tags": (
                    list(self.mixed_effects_reference_tags)
                    if self.mixed_effects_reference_tags is not None
                    else None
                ),
            },
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BoardConfig":
        me = obj.get("mixed_effects") or {}
        tags = me.get("reference_tags")
        return cls(
            board_id=obj["board_id"],
            reference_tags=tuple(obj["reference_tags"]),
            version=int(obj["version"]),
            include_human_in_ranking=bool(obj.get("include_human_in_ranking", True)),
            evaluated_human=me.get("evaluated_human"),
            mixed_effects_reference_tags=tuple(tags) if tags is not None else None,
        )


@dataclass(frozen=True)
class Snapshot:
    """Immutable, internally consistent view of an entire board."""

    config: BoardConfig
    testset: TestSet
    generators: tuple[GeneratorSubmission, ...]
    metrics: tuple[MetricSpec, ...]
    judgments: HumanJudgments | None
    tensor: ScoreTensor

    @property
    def board_id(self) -> str:
        return self.config.board_id

    def generator(self, generator_id: str) -> GeneratorSubmission:
        for g in self.generators:
            if g.generator_id == generator_id:
                return g
        raise KeyError(generator_id)

    def metric(self, metric_id: str) -> MetricSpec:
        for m in self.metrics:
            if m.metric_id == metric_id:
                return m
        raise KeyError(metric_id)

    def active_metrics(self) -> tuple[MetricSpec, ...]:
        return tuple(m for m in self.metrics if m.status == "active")

    def annotated_generators(self, include_human: bool | None = None) -> tuple[str, ...]:
        """Generators with judgments AND submissions, in sorted id order."""
        if self.judgments is None:
            return ()
        if include_human is None:
            include_human = self.config.include_human_in_ranking
        submitted = {g.generator_id: g for g in self.generators}
        out = []
        for gid in self.judgments.annotated_generators():
            gen = submitted.get(gid)
            if gen is None:
                continue
            if not include_human and gen.kind == "human":
                continue
            out.append(gid)
        return tuple(out)

    def oriented_scores(self, generator_id: str, metric_id: str) -> tuple[float, ...]:
        return self.tensor.oriented[(generator_id, metric_id)]

    def aggregate(self, generator_id: str, metric_id: str) -> float:
        return self.tensor.aggregates[(generator_id, metric_id)]

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "testset": [
                {
                    "instance_id": i.instance_id,
                    "source_text": i.source_text,
                    "references": [{"tag": r.tag, "text": r.text} for r in i.references],
                }
                for i in self.testset.instances
            ],
            "generators": [
                {
                    "generator_id": g.generator_id,
                    "kind": g.kind,
                    "description": g.description,
                    "submitted_at": g.submitted_at,
                    "outputs": {k: g.outputs[k] for k in sorted(g.outputs)},
                }
                for g in self.generators
            ],
            "metrics": [m.to_json_dict() for m in self.metrics],
            "judgments": (
                None
                if self.judgments is None
                else {
                    "rubric_note": self.judgments.rubric_note,
                    "entries": [
                        {"generator_id": g, "instance_id": i, "score": s}
                        for (g, i), s in sorted(self.judgments.entries.items())
                    ],
                }
            ),
            "scores": [
                {
                    "generator_id": g,
                    "metric_id": m,
                    "raw": list(self.tensor.raw[(g, m)]),
                    "oriented": list(self.tensor.oriented[(g, m)]),
                    "aggregate": self.tensor.aggregates[(g, m)],
                }
                for (g, m) in sorted(self.tensor.oriented)
            ],
        }

    def serialize(self) -> bytes:
        return (canonical_json(self.to_json_dict()) + "\n").encode("utf-8")

    @classmethod
    def deserialize(cls, data: bytes) -> "Snapshot":
        obj = json.loads(data.decode("utf-8"))
        testset = TestSet(
            instances=tuple(
                Instance(
                    instance_id=i["instance_id"],
                    source_text=i["source_text"],
                    references=tuple(Reference(r["tag"], r["text"]) for r in i["references"]),
                )
                for i in obj["testset"]
            )
        )
        generators = tuple(
            GeneratorSubmission(
                generator_id=g["generator_id"],
                kind=g["kind"],
                outputs=dict(g["outputs"]),
                submitted_at=g["submitted_at"],
                description=g["description"],
            )
            for g in obj["generators"]
        )
        metrics = tuple(MetricSpec.from_json_dict(m) for m in obj["metrics"])
        judgments = None
        if obj["judgments"] is not None:
            judgments = HumanJudgments(
                entries={
                    (e["generator_id"], e["instance_id"]): float(e["score"])
                    for e in obj["judgments"]["entries"]
                },
                rubric_note=obj["judgments"]["rubric_note"],
            )
        raw = {}
        oriented = {}
        aggregates = {}
        for cell in obj["scores"]:
            key = (cell["generator_id"], cell["metric_id"])
            raw[key] = tuple(cell["raw"])
            oriented[key] = tuple(cell["oriented"])
            aggregates[key] = float(cell["aggregate"])
        return cls(
            config=BoardConfig.from_json_dict(obj["config"]),
            testset=testset,
            generators=generators,
            metrics=metrics,
            judgments=judgments,
            tensor=ScoreTensor(raw=raw, oriented=oriented, aggregates=aggregates),
        )


# ---------------------------------------------------------------------------
# File loaders
# ---------------------------------------------------------------------------


def _parse_references(obj, lineno: int) -> tuple[Reference, ...]:
    refs = obj.get("references")
    if not isinstance(refs, list) or not refs:
        raise ValidationError(f"testset line {lineno}: references must be a non-empty list")
    out: list[Reference] = []
    for idx, r in enumerate(refs):
        if isinstance(r, str):
            # Untagged references get positional labels A, B, C, ...
            tag = chr(ord("A") + idx)
            out.append(Reference(tag=tag, text=r))
        elif isinstance(r, dict) and "tag" in r and "text" in r:
            out.append(Reference(tag=str(r["tag"]), text=str(r["text"])))
        else:
            raise ValidationError(
                f"testset line {lineno}: reference {idx} must be a string or {{tag, text}}"
            )
    tags = [r.tag for r in out]
    if len(set(tags)) != len(tags):
        raise ValidationError(f"testset line {lineno}: duplicate reference tags {tags}")
    return tuple(out)


def load_testset(path: str | Path) -> TestSet:
    """Load a test set from JSONL, preserving file order.

    Each line must be an object with instance_id, source_text and
    references.  Duplicate instance ids and empty reference lists are
    rejected with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"testset file not found: {path}")
    instances: list[Instance] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl(path):
        missing = [k for k in ("instance_id", "source_text", "references") if k not in obj]
        if missing:
            raise ValidationError(f"testset line {lineno}: missing fields {missing}")
        iid = str(obj["instance_id"])
        if not iid:
            raise ValidationError(f"testset line {lineno}: empty instance_id")
        if iid in seen:
            raise ValidationError(
                f"testset line {lineno}: duplicate instance_id {iid!r} (first seen line {seen[iid]})"
            )
        seen[iid] = lineno
        instances.append(
            Instance(
                instance_id=iid,
                source_text=str(obj["source_text"]),
                references=_parse_references(obj, lineno),
            )
        )
    return TestSet(instances=tuple(instances))


def load_judgments(path: str | Path, testset: TestSet) -> HumanJudgments:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"judgments file not found: {path}")
    entries: dict[tuple[str, str], float] = {}
    for lineno, obj in read_jsonl(path):
        missing = [k for k in ("generator_id", "instance_id", "score") if k not in obj]
        if missing:
            raise ValidationError(f"judgments line {lineno}: missing fields {missing}")
        key = (str(obj["generator_id"]), str(obj["instance_id"]))
        if key in entries:
            raise ValidationError(f"judgments line {lineno}: duplicate entry for {key}")
        entries[key] = float(obj["score"])
    judgments = HumanJudgments(entries=entries)
    judgments.validate_panel(testset)
    return judgments


def load_generator_outputs(path: str | Path, testset: TestSet) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"outputs file not found: {path}")
    outputs: dict[str, str] = {}
    for lineno, obj in read_jsonl(path):
        missing = [k for k in ("instance_id", "text") if k not in obj]
        if missing:
            raise ValidationError(f"outputs line {lineno}: missing fields {missing}")
        iid = str(obj["instance_id"])
        if iid in outputs:
            raise ValidationError(f"outputs line {lineno}: duplicate instance_id {iid!r}")
        outputs[iid] = str(obj["text"])
    return outputs


# ---------------------------------------------------------------------------
# Board
# ---------------------------------------------------------------------------


class Board:
    """Mutable handle on a board directory.

    All mutations run under one re-entrant lock (single-writer model); use
    :meth:`exclusive_lock` around multi-step operations that must not
    interleave with other processes.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._mutex = threading.RLock()
        self._lock_depth = 0
        self._lock_fh = None
        if not (self.path / "board.json").exists():
            raise BoardStateError(f"no board at {self.path} (missing board.json)")

    # -- construction -------------------------------------------------------

    @classmethod
    def create(
        cls,
        path: str | Path,
        board_id: str,
        testset: TestSet,
        judgments: HumanJudgments | None = None,
        reference_tags: tuple[str, ...] | None = None,
        include_human_in_ranking: bool = True,
        evaluated_human: str | None = None,
        mixed_effects_reference_tags: tuple[str, ...] | None = None,
    ) -> "Board":
        path = Path(path)
        if (path / "board.json").exists():
            raise ValidationError(f"board already exists at {path}")
        if not board_id:
            raise ValidationError("board_id must be non-empty")
        path.mkdir(parents=True, exist_ok=True)
        for sub in ("generators", "metrics", "scores", "ensembles", "reports"):
            (path / sub).mkdir(exist_ok=True)
        if reference_tags is None:
            reference_tags = testset.reference_tags()
        config = BoardConfig(
            board_id=board_id,
            reference_tags=tuple(reference_tags),
            version=0,
            include_human_in_ranking=include_human_in_ranking,
            evaluated_human=evaluated_human,
            mixed_effects_reference_tags=mixed_effects_reference_tags,
        )
        write_text(path / "board.json", canonical_json(config.to_json_dict()) + "\n")
        lines = []
        for inst in testset.instances:
            lines.append(
                canonical_json(
                    {
                        "instance_id": inst.instance_id,
                        "source_text": inst.source_text,
                        "references": [{"tag": r.tag, "text": r.text} for r in inst.references],
                    }
                )
            )
        write_text(path / "testset.jsonl", "\n".join(lines) + "\n")
        if judgments is not None:
            judgments.validate_panel(testset)
            jlines = [
                canonical_json({"generator_id": g, "instance_id": i, "score": s})
                for (g, i), s in sorted(judgments.entries.items())
            ]
            write_text(path / "human_judgments.jsonl", "\n".join(jlines) + "\n")
        return cls(path)

    # -- low-level state ----------------------------------------------------

    def _read_config(self) -> BoardConfig:
        try:
            obj = json.loads((self.path / "board.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise BoardStateError(f"cannot read board.json: {exc}") from exc
        return BoardConfig.from_json_dict(obj)

    def _write_config(self, config: BoardConfig) -> None:
        write_text(self.path / "board.json", canonical_json(config.to_json_dict()) + "\n")

    @property
    def config(self) -> BoardConfig:
        return self._read_config()

    def load_testset(self) -> TestSet:
        return load_testset(self.path / "testset.jsonl")

    def load_judgments(self) -> HumanJudgments | None:
        jpath = self.path / "human_judgments.jsonl"
        if not jpath.exists():
            return None
        return load_judgments(jpath, self.load_testset())

    @contextmanager
    def exclusive_lock(self):
        """Thread lock plus an advisory file lock for cross-process safety.

        Re-entrant within a process: the flock is taken once at the
        outermost level (a second LOCK_EX through a fresh descriptor would
        deadlock against ourselves).
        """
        import fcntl

        with self._mutex:
            if self._lock_depth == 0:
                self._lock_fh = (self.path / ".lock").open("w")
                fcntl.flock(self._lock_fh, fcntl.LOCK_EX)
            self._lock_depth += 1
            try:
                yield
            finally:
                self._lock_depth -= 1
                if self._lock_depth == 0:
                    fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
                    self._lock_fh.close()
                    self._lock_fh = None

    def _bump_version(self) -> int:
        config = self._read_config()
        config = replace(config, version=config.version + 1)
        self._write_config(config)
        return config.version

    # -- generator submissions ----------------------------------------------

    def generator_ids(self) -> tuple[str, ...]:
        gdir = self.path / "generators"
        return tuple(sorted(p.name for p in gdir.iterdir() if p.is_dir()))

    def load_generator(self, generator_id: str) -> GeneratorSubmission:
        gdir = self.path / "generators" / generator_id
        try:
            meta = json.loads((gdir / "meta.json").read_text(encoding="utf-8"))
        except OSError as exc:
            raise BoardStateError(f"unknown generator {generator_id!r}") from exc
        outputs = {}
        for _, obj in read_jsonl(gdir / "outputs.jsonl"):
            outputs[str(obj["instance_id"])] = str(obj["text"])
        return GeneratorSubmission(
            generator_id=meta["generator_id"],
            kind=meta["kind"],
            outputs=outputs,
            submitted_at=meta["submitted_at"],
            description=meta.get("description", ""),
        )

    def add_generator_submission(self, submission: GeneratorSubmission) -> Receipt:
        """Persist a complete generator submission and bump the version counter."""
        with self.exclusive_lock():
            testset = self.load_testset()
            wanted = set(testset.instance_ids)
            got = set(submission.outputs)
            missing = sorted(wanted - got)
            if missing:
                raise ValidationError(
                    f"submission {submission.generator_id!r} is missing outputs for "
                    f"instances: {', '.join(missing)}"
                )
            extra = sorted(got - wanted)
            if extra:
                raise ValidationError(
                    f"submission {submission.generator_id!r} has outputs for unknown "
                    f"instances: {', '.join(extra)}"
                )
            gdir = self.path / "generators" / submission.generator_id
            if gdir.exists():
                raise DuplicateSubmissionError(
                    f"generator {submission.generator_id!r} already submitted"
                )
            submitted_at = submission.submitted_at or _utc_now()
            gdir.mkdir(parents=True)
            write_text(
                gdir / "meta.json",
                canonical_json(
                    {
                        "generator_id": submission.generator_id,
                        "kind": submission.kind,
                        "description": submission.description,
                        "submitted_at": submitted_at,
                    }
                )
                + "\n",
            )
            lines = [
                canonical_json({"instance_id": iid, "text": submission.outputs[iid]})
                for iid in testset.instance_ids
            ]
            write_text(gdir / "outputs.jsonl", "\n".join(lines) + "\n")
            version = self._bump_version()
            return Receipt(submission.generator_id, submitted_at, version)

    # -- metric submissions --------------------------------------------------

    def metric_ids(self) -> tuple[str, ...]:
        mdir = self.path / "metrics"
        return tuple(sorted(p.name for p in mdir.iterdir() if p.is_dir()))

    def load_metric(self, metric_id: str) -> MetricSpec:
        mpath = self.path / "metrics" / metric_id / "meta.json"
        try:
            obj = json.loads(mpath.read_text(encoding="utf-8"))
        except OSError as exc:
            raise BoardStateError(f"unknown metric {metric_id!r}") from exc
        return MetricSpec.from_json_dict(obj)

    def _validate_builtin_flags(self, spec: MetricSpec) -> None:
        builtin = BUILTIN_METRICS[spec.executor]
        mismatches = []
        if spec.direction != builtin.direction:
            mismatches.append("direction")
        if spec.native_multi_ref != builtin.native_multi_ref:
            mismatches.append("native_multi_ref")
        if spec.needs_references != builtin.needs_references:
            mismatches.append("needs_references")
        if spec.needs_source != builtin.needs_source:
            mismatches.append("needs_source")
        if mismatches:
            raise ValidationError(
                f"builtin {spec.executor!r} requires canonical flags; mismatched: {mismatches}"
            )

    def add_metric_submission(self, spec: MetricSpec, smoke_test: bool = True) -> Receipt:
        """Persist a metric spec after validation and (for externals) a probe run.

        The probe scores the first test-set instance through the real
        execution path; any failure rejects the submission with the captured
        diagnostics.
        """
        from . import runner  # local import to avoid a cycle

        with self.exclusive_lock():
            mdir = self.path / "metrics" / spec.metric_id
            if mdir.exists():
                raise DuplicateSubmissionError(f"metric {spec.metric_id!r} already submitted")
            if spec.is_builtin:
                self._validate_builtin_flags(spec)
            elif smoke_test:
                runner.smoke_test(spec, self.load_testset(), self.config.reference_tags)
            submitted_at = _utc_now()
            mdir.mkdir(parents=True)
            meta = spec.to_json_dict()
            meta["submitted_at"] = submitted_at
            write_text(mdir / "meta.json", canonical_json(meta) + "\n")
            version = self._bump_version()
            return Receipt(spec.metric_id, submitted_at, version)

    def reject_metric(self, metric_id: str, reason: str) -> None:
        """Mark a metric rejected and drop its (now incomplete) scores."""
        with self.exclusive_lock():
            spec = self.load_metric(metric_id)
            meta = spec.to_json_dict()
            meta["status"] = "rejected"
            meta["rejection_reason"] = reason
            write_text(self.path / "metrics" / metric_id / "meta.json", canonical_json(meta) + "\n")
            sdir = self.path / "scores" / metric_id
            if sdir.exists():
                for f in sdir.iterdir():
                    f.unlink()
                sdir.rmdir()

    # -- scores ---------------------------------------------------------------

    def write_scores(
        self,
        metric_id: str,
        generator_id: str,
        raw: list[float],
        oriented: list[float],
    ) -> None:
        with self.exclusive_lock():
            testset = self.load_testset()
            if len(raw) != len(testset) or len(oriented) != len(testset):
                raise ValidationError(
                    f"score vector length {len(raw)} != test set size {len(testset)}"
                )
            sdir = self.path / "scores" / metric_id
            sdir.mkdir(parents=True, exist_ok=True)
            lines = [
                canonical_json({"instance_id": iid, "raw": r, "oriented": o})
                for iid, r, o in zip(testset.instance_ids, raw, oriented)
            ]
            write_text(sdir / f"{generator_id}.jsonl", "\n".join(lines) + "\n")

    def has_scores(self, metric_id: str, generator_id: str) -> bool:
        return (self.path / "scores" / metric_id / f"{generator_id}.jsonl").exists()

    def pending_cells(self) -> tuple[tuple[str, str], ...]:
        """(metric_id, generator_id) pairs that still need scoring."""
        cells = []
        generators = self.generator_ids()
        for mid in self.metric_ids():
            if self.load_metric(mid).status != "active":
                continue
            for gid in generators:
                if not self.has_scores(mid, gid):
                    cells.append((mid, gid))
        return tuple(cells)

    # -- snapshot --------------------------------------------------------------

    def snapshot(self) -> Snapshot:
        with self._mutex:
            config = self._read_config()
            testset = self.load_testset()
            generators = tuple(self.load_generator(g) for g in self.generator_ids())
            metrics = tuple(self.load_metric(m) for m in self.metric_ids())
            judgments = self.load_judgments()
            raw: dict[tuple[str, str], tuple[float, ...]] = {}
            oriented: dict[tuple[str, str], tuple[float, ...]] = {}
            aggregates: dict[tuple[str, str], float] = {}
            order = {iid: k for k, iid in enumerate(testset.instance_ids)}
            for spec in metrics:
                if spec.status != "active":
                    continue
                sdir = self.path / "scores" / spec.metric_id
                if not sdir.exists():
                    continue
                for f in sorted(sdir.iterdir()):
                    gid = f.name[: -len(".jsonl")]
                    rows_raw = [0.0] * len(testset)
                    rows_or = [0.0] * len(testset)
                    count = 0
                    for _, obj in read_jsonl(f):
                        k = order[str(obj["instance_id"])]
                        rows_raw[k] = float(obj["raw"])
                        rows_or[k] = float(obj["oriented"])
                        count += 1
                    if count != len(testset):
                        raise BoardStateError(
                            f"incomplete scores for ({spec.metric_id}, {gid}): "
                            f"{count}/{len(testset)} instances"
                        )
                    key = (gid, spec.metric_id)
                    raw[key] = tuple(rows_raw)
                    oriented[key] = tuple(rows_or)
                    aggregates[key] = sum(rows_or) / len(rows_or)
            return Snapshot(
                config=config,
                testset=testset,
                generators=generators,
                metrics=metrics,
                judgments=judgments,
                tensor=ScoreTensor(raw=raw, oriented=oriented, aggregates=aggregates),
            )
