"""Correlation machinery and the two leaderboard rankings.

Metric ranking pools (oriented score, human score) pairs across all
annotated generators and instances and sorts by instance-level Pearson;
system-level Kendall tau-b over per-generator aggregates is reported
alongside and breaks ties.  Generators are ranked by whichever scorer
(single metric or ensemble) currently correlates best.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .datastore import Snapshot
from .errors import AnalysisError, DegenerateMetricError, ValidationError

if TYPE_CHECKING:
    from .ensemble import EnsembleModel


def _as_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ValidationError("correlation inputs must be 1-d vectors")
    if xa.shape != ya.shape:
        raise ValidationError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.shape[0] < 2:
        raise ValidationError("correlation needs at least 2 points")
    return xa, ya


def zero_variance(v) -> bool:
    arr = np.asarray(v, dtype=float)
    return bool(np.all(arr == arr[0]))


def pearson(x, y) -> float:
    """Sample Pearson r; returns 0.0 when either side has zero variance."""
    xa, ya = _as_pair(x, y)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    denom = float(np.sqrt((dx @ dx) * (dy @ dy)))
    if denom == 0.0:
        return 0.0
    return float((dx @ dy) / denom)


def kendall_tau_b(x, y) -> float:
    """Kendall tau-b with tie correction; 0.0 when a side is fully tied."""
    xa, ya = _as_pair(x, y)
    n = xa.shape[0]
    dx = np.sign(xa[:, None] - xa[None, :])
    dy = np.sign(ya[:, None] - ya[None, :])
    iu = np.triu_indices(n, k=1)
    concordant_minus_discordant = float((dx[iu] * dy[iu]).sum())
    n0 = n * (n - 1) / 2.0
    _, counts_x = np.unique(xa, return_counts=True)
    _, counts_y = np.unique(ya, return_counts=True)
    ties_x = float((counts_x * (counts_x - 1) / 2.0).sum())
    ties_y = float((counts_y * (counts_y - 1) / 2.0).sum())
    denom = np.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return 0.0
    return concordant_minus_discordant / denom


def standardize(v) -> tuple[np.ndarray, float, float]:
    """Center and scale by the sample (n-1) standard deviation.

    Returns (z, mean, std).  A zero-variance vector raises
    DegenerateMetricError so callers can exclude the metric with a warning
    instead of silently producing NaNs.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValidationError("standardize needs a vector of length >= 2")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1))
    if std == 0.0:
        raise DegenerateMetricError("zero-variance vector cannot be standardized")
    return (arr - mean) / std, mean, std


@dataclass(frozen=True)
class MetricRankingEntry:
    metric_id: str
    pearson_instance: float
    kendall_system: float
    n_pairs: int
    degenerate: bool


@dataclass(frozen=True)
class GeneratorRankingEntry:
    generator_id: str
    score: float
    rank: int


def pooled_pairs(
    snapshot: Snapshot, metric_id: str, generators: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled (oriented score, human score) vectors over generators x instances."""
    assert snapshot.judgments is not None
    scores: list[float] = []
    human: list[float] = []
    ids = snapshot.testset.instance_ids
    for gid in generators:
        key = (gid, metric_id)
        if key not in snapshot.tensor.oriented:
            raise AnalysisError(
                f"metric {metric_id!r} has no scores for annotated generator {gid!r}"
            )
        vec = snapshot.tensor.oriented[key]
        scores.extend(vec)
        human.extend(snapshot.judgments.score(gid, iid) for iid in ids)
    return np.asarray(scores), np.asarray(human)


def rank_metrics(snapshot: Snapshot) -> list[MetricRankingEntry]:
    """Rank metrics by pooled instance-level Pearson against human judgments.

    Ties break by system-level Kendall, then metric id.  Zero-variance
    metrics report correlation 0 with a degenerate flag instead of failing
    the whole board.
    """
    if snapshot.judgments is None:
        raise AnalysisError("cannot rank metrics without human judgments")
    generators = snapshot.annotated_generators()
    if not generators:
        raise AnalysisError("no annotated generator has been submitted yet")
    entries = []
    for spec in snapshot.active_metrics():
        scores, human = pooled_pairs(snapshot, spec.metric_id, generators)
        degenerate = zero_variance(scores)
        if degenerate:
            r = 0.0
            tau = 0.0
        else:
            r = pearson(scores, human)
            agg = [snapshot.aggregate(g, spec.metric_id) for g in generators]
            human_mean = [
                float(
                    np.mean(
                        [snapshot.judgments.score(g, i) for i in snapshot.testset.instance_ids]
                    )
                )
                for g in generators
            ]
            tau = kendall_tau_b(agg, human_mean)
        entries.append(
            MetricRankingEntry(
                metric_id=spec.metric_id,
                pearson_instance=r,
                kendall_system=tau,
                n_pairs=len(scores),
                degenerate=degenerate,
            )
        )
    entries.sort(key=lambda e: (-e.pearson_instance, -e.kendall_system, e.metric_id))
    return entries


def _assign_ranks(scored: list[tuple[str, float]]) -> list[GeneratorRankingEntry]:
    scored = sorted(scored, key=lambda t: (-t[1], t[0]))
    out: list[GeneratorRankingEntry] = []
    for idx, (gid, score) in enumerate(scored):
        if idx > 0 and score == out[-1].score:
            rank = out[-1].rank
        else:
            rank = idx + 1
        out.append(GeneratorRankingEntry(generator_id=gid, score=score, rank=rank))
    return out


def rank_generators(
    snapshot: Snapshot,
    ranking: list[MetricRankingEntry],
    ensemble: "EnsembleModel | None" = None,
) -> tuple[list[GeneratorRankingEntry], dict]:
    """Rank all generators under the best available scorer.

    The scorer is the top-ranked metric unless the ensemble's cross-validated
    correlation beats it.  Returns (entries, scorer_info).
    """
    from .ensemble import ensemble_score

    if not ranking:
        raise AnalysisError("metric ranking is empty")
    best_metric = ranking[0]
    use_ensemble = ensemble is not None and ensemble.cv_correlation > best_metric.pearson_instance
    scored: list[tuple[str, float]] = []
    if use_ensemble:
        assert ensemble is not None
        for gen in snapshot.generators:
            agg = {
                mid: snapshot.aggregate(gen.generator_id, mid)
                for mid, _ in ensemble.selected
            }
            scored.append((gen.generator_id, ensemble_score(ensemble, agg)))
        scorer = {
            "kind": "ensemble",
            "id": ensemble.signature,
            "correlation": ensemble.cv_correlation,
        }
    else:
        for gen in snapshot.generators:
            scored.append(
                (gen.generator_id, snapshot.aggregate(gen.generator_id, best_metric.metric_id))
            )
        scorer = {
            "kind": "metric",
            "id": best_metric.metric_id,
            "correlation": best_metric.pearson_instance,
        }
    return _assign_ranks(scored), scorer
