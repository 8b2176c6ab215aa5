"""Metric execution: builtins in-process, externals over a line protocol.

Protocol v1: the engine sets BILLBOARD_PROTOCOL_VERSION=1, writes one JSON
object per line to the plugin's stdin ({"id", "candidate", "references",
"source"}), closes the stream, and expects exactly one "<id>\\t<score>" line
per request on stdout, in order, followed by exit code 0.  Stderr is
captured and attached to any failure.

Non-native multi-reference metrics are called once per reference and the
engine takes the maximum of the *oriented* per-reference scores (the
minimum raw score for lower_better metrics).
"""

from __future__ import annotations

import os
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from .builtin_metrics import BUILTIN_METRICS
from .datastore import GeneratorSubmission, Instance, MetricSpec, TestSet
from .errors import ProtocolError, ScoringError, ValidationError

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class ScoringRequest:
    request_id: str
    candidate: str
    references: tuple[str, ...]
    source: str | None = None

    def to_protocol_line(self) -> str:
        import json

        return json.dumps(
            {
                "id": self.request_id,
                "candidate": self.candidate,
                "references": list(self.references),
                "source": self.source,
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class ProtocolBatch:
    metric_id: str
    requests: tuple[ScoringRequest, ...]
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        ids = [r.request_id for r in self.requests]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate request ids in batch for {self.metric_id!r}")


def orient(spec: MetricSpec, raw) -> np.ndarray:
    """Sign-normalize raw scores so that higher always means better."""
    arr = np.asarray(raw, dtype=float)
    if spec.direction == "lower_better":
        return -arr
    return arr.copy()


def _run_builtin(spec: MetricSpec, requests: list[ScoringRequest]) -> list[float]:
    fn = BUILTIN_METRICS[spec.executor].fn
    return [float(fn(r.candidate, list(r.references))) for r in requests]


def run_external(spec: MetricSpec, batch: ProtocolBatch) -> list[float]:
    """Run one plugin process over a batch and parse its responses.

    Raises ScoringError/ProtocolError on nonzero exit, timeout, response
    count mismatch, out-of-order ids, or unparsable scores, always carrying
    the captured stderr.
    """
    if not batch.requests:
        raise ValidationError("empty protocol batch")
    cmd = shlex.split(spec.executor)
    env = dict(os.environ)
    env["BILLBOARD_PROTOCOL_VERSION"] = str(batch.protocol_version)
    payload = "".join(r.to_protocol_line() + "\n" for r in batch.requests)
    try:
        proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
            text=True,
        )
    except OSError as exc:
        raise ScoringError(f"metric {spec.metric_id!r}: cannot launch {cmd[0]!r}: {exc}") from exc
    try:
        stdout, stderr = proc.communicate(payload, timeout=spec.timeout_seconds)
    except subprocess.TimeoutExpired:
        proc.kill()
        stdout, stderr = proc.communicate()
        got = [ln for ln in stdout.splitlines() if ln.strip()]
        nxt = (
            batch.requests[len(got)].request_id
            if len(got) < len(batch.requests)
            else "<none>"
        )
        raise ScoringError(
            f"metric {spec.metric_id!r} timed out after {spec.timeout_seconds}s "
            f"with {len(got)}/{len(batch.requests)} responses "
            f"(next expected request {nxt!r})",
            stderr=stderr,
        )
    if proc.returncode != 0:
        raise ScoringError(
            f"metric {spec.metric_id!r} exited with code {proc.returncode}",
            stderr=stderr,
        )
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if len(lines) != len(batch.requests):
        raise ProtocolError(
            f"metric {spec.metric_id!r} returned {len(lines)} responses "
            f"for {len(batch.requests)} requests",
            stderr=stderr,
        )
    scores: list[float] = []
    for request, line in zip(batch.requests, lines):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ProtocolError(
                f"metric {spec.metric_id!r}: malformed response line {line!r}",
                stderr=stderr,
            )
        rid, text = parts
        if rid != request.request_id:
            raise ProtocolError(
                f"metric {spec.metric_id!r}: response id {rid!r} does not match "
                f"request {request.request_id!r} (order must be preserved)",
                stderr=stderr,
            )
        try:
            value = float(text)
        except ValueError as exc:
            raise ProtocolError(
                f"metric {spec.metric_id!r}: unparsable score {text!r} for {rid!r}",
                stderr=stderr,
            ) from exc
        if not np.isfinite(value):
            raise ProtocolError(
                f"metric {spec.metric_id!r}: non-finite score {text!r} for {rid!r}",
                stderr=stderr,
            )
        scores.append(value)
    return scores


def _execute(spec: MetricSpec, requests: list[ScoringRequest]) -> list[float]:
    if spec.is_builtin:
        return _run_builtin(spec, requests)
    return run_external(spec, ProtocolBatch(metric_id=spec.metric_id, requests=tuple(requests)))


def _check_needs(spec: MetricSpec, references: tuple[str, ...]) -> None:
    if spec.needs_references and not references:
        raise ValidationError(
            f"metric {spec.metric_id!r} needs references but none are available"
        )


def _requests_for_instance(
    spec: MetricSpec, instance: Instance, candidate: str, tags: tuple[str, ...] | None
) -> list[ScoringRequest]:
    """One request for native/referenceless metrics, one per reference otherwise."""
    refs = instance.reference_texts(tags) if spec.needs_references else ()
    _check_needs(spec, refs)
    source = instance.source_text if spec.needs_source else None
    if not spec.needs_references or spec.native_multi_ref or len(refs) == 1:
        return [
            ScoringRequest(
                request_id=instance.instance_id,
                candidate=candidate,
                references=refs,
                source=source,
            )
        ]
    return [
        ScoringRequest(
            request_id=f"{instance.instance_id}#{i}",
            candidate=candidate,
            references=(ref,),
            source=source,
        )
        for i, ref in enumerate(refs)
    ]


def _combine_per_reference(spec: MetricSpec, raws: list[float]) -> float:
    # Max over oriented scores; for lower_better that is the minimum raw.
    oriented = orient(spec, raws)
    best = int(np.argmax(oriented))
    return raws[best]


def score_one(spec: MetricSpec, request: ScoringRequest) -> float:
    """Score a single request, applying the multi-reference max rule."""
    _check_needs(spec, request.references if spec.needs_references else ())
    if (
        not spec.needs_references
        or spec.native_multi_ref
        or len(request.references) <= 1
    ):
        return _execute(spec, [request])[0]
    singles = [
        ScoringRequest(
            request_id=f"{request.request_id}#{i}",
            candidate=request.candidate,
            references=(ref,),
            source=request.source,
        )
        for i, ref in enumerate(request.references)
    ]
    raws = _execute(spec, singles)
    return _combine_per_reference(spec, raws)


def score_generator(
    spec: MetricSpec,
    generator: GeneratorSubmission,
    testset: TestSet,
    reference_tags: tuple[str, ...] | None = None,
) -> list[float]:
    """Score every instance for one generator, in test-set order.

    External metrics get all requests in a single process invocation so
    heavyweight plugins pay their startup cost once per (metric, generator)
    pair.  Any per-instance failure aborts the whole vector.
    """
    requests: list[ScoringRequest] = []
    spans: list[tuple[int, int]] = []
    for instance in testset.instances:
        try:
            candidate = generator.outputs[instance.instance_id]
        except KeyError as exc:
            raise ValidationError(
                f"generator {generator.generator_id!r} has no output for "
                f"instance {instance.instance_id!r}"
            ) from exc
        batch = _requests_for_instance(spec, instance, candidate, reference_tags)
        spans.append((len(requests), len(requests) + len(batch)))
        requests.extend(batch)
    raws = _execute(spec, requests)
    out: list[float] = []
    for start, end in spans:
        chunk = raws[start:end]
        out.append(chunk[0] if len(chunk) == 1 else _combine_per_reference(spec, chunk))
    return out


def smoke_test(
    spec: MetricSpec, testset: TestSet, reference_tags: tuple[str, ...] | None = None
) -> float:
    """Probe an external metric on the first test instance before accepting it."""
    if not testset.instances:
        raise ValidationError("cannot smoke-test a metric on an empty test set")
    instance = testset.instances[0]
    refs = instance.reference_texts(reference_tags)
    candidate = refs[0] if refs else instance.source_text
    requests = _requests_for_instance(spec, instance, candidate, reference_tags)
    raws = _execute(spec, requests[:1])
    return raws[0]
