"""Random-intercept mixed-effects analysis of machine-vs-human overrating.

For each metric, the standardized oriented score is modeled as a fixed
machine indicator effect plus a fixed human-judgment effect plus a random
per-example intercept plus noise.  The machine coefficient quantifies how
much the metric overrates machine output relative to human raters; it is
reported with a 90% confidence interval from the REML fit.

Estimation profiles out everything except the variance ratio
rho = sigma_gamma^2 / sigma_eps^2: per-example blocks have a closed-form
inverse, generalized least squares gives the fixed effects, and rho is
minimized by golden-section search on log10(rho) with an explicit check of
the rho = 0 boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datastore import MetricSpec, Snapshot
from .errors import AnalysisError, DegenerateMetricError

Z_90 = 1.6449  # normal quantile used for the 90% confidence interval
LOG_RHO_LO = -8.0
LOG_RHO_HI = 8.0
GOLDEN_ITERATIONS = 120


@dataclass(frozen=True)
class MixedDesign:
    metric_id: str
    y: np.ndarray  # (N,) metric scores (standardized when built from a board)
    machine_flag: np.ndarray  # (N,) 0/1
    h: np.ndarray  # (N,) human judgments
    example_ids: tuple[str, ...]  # group label per row

    @property
    def n_rows(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class MixedEffectsFit:
    metric_id: str
    beta0: float  # machine-indicator coefficient
    beta1: float  # human-judgment coefficient
    intercept: float
    se_beta0: float
    ci90: tuple[float, float]
    sigma_gamma_sq: float
    sigma_eps_sq: float
    reml_deviance: float
    n_rows: int

    @property
    def significance(self) -> str:
        lo, hi = self.ci90
        if lo > 0:
            return "positive"
        if hi < 0:
            return "negative"
        return "neutral"


# ---------------------------------------------------------------------------
# Design assembly
# ---------------------------------------------------------------------------


def _restricted_scores(
    snapshot: Snapshot, spec: MetricSpec, generators: tuple[str, ...]
) -> dict[str, np.ndarray]:
    """Oriented scores for this analysis, possibly against restricted references.

    When the board designates a mixed-effects reference subset (freeing up a
    human generation that doubles as a reference), reference-based metrics
    are rescored against that subset for every generator so machine and human
    rows stay comparable.
    """
    from . import runner

    tags = snapshot.config.mixed_effects_reference_tags
    needs_rescore = (
        tags is not None
        and spec.needs_references
        and tuple(tags) != tuple(snapshot.config.reference_tags)
    )
    out: dict[str, np.ndarray] = {}
    for gid in generators:
        if needs_rescore:
            raws = runner.score_generator(
                spec, snapshot.generator(gid), snapshot.testset, tuple(tags)
            )
            out[gid] = runner.orient(spec, raws)
        else:
            key = (gid, spec.metric_id)
            if key not in snapshot.tensor.oriented:
                raise AnalysisError(
                    f"metric {spec.metric_id!r} lacks scores for generator {gid!r}"
                )
            out[gid] = np.asarray(snapshot.tensor.oriented[key], dtype=float)
    return out


def build_design(snapshot: Snapshot, metric_id: str) -> MixedDesign:
    """One row per (annotated generator, instance), y standardized."""
    if snapshot.judgments is None:
        raise AnalysisError("mixed-effects analysis requires human judgments")
    generators = snapshot.annotated_generators(include_human=True)
    if not generators:
        raise AnalysisError("no annotated generator has been submitted yet")
    kinds = {gid: snapshot.generator(gid).kind for gid in generators}
    if not any(k == "human" for k in kinds.values()):
        raise AnalysisError(
            "no human-kind annotated generator: machine coefficient is unidentifiable"
        )
    if not any(k == "machine" for k in kinds.values()):
        raise AnalysisError("no machine-kind annotated generator")
    spec = snapshot.metric(metric_id)
    scores = _restricted_scores(snapshot, spec, generators)
    instance_ids = snapshot.testset.instance_ids
    y = []
    flags = []
    h = []
    examples: list[str] = []
    for gid in generators:
        vec = scores[gid]
        for k, iid in enumerate(instance_ids):
            y.append(float(vec[k]))
            flags.append(1.0 if kinds[gid] == "machine" else 0.0)
            h.append(snapshot.judgments.score(gid, iid))
            examples.append(iid)
    y_arr = np.asarray(y)
    std = float(y_arr.std(ddof=1))
    if std == 0.0:
        raise DegenerateMetricError(f"metric {metric_id!r} has zero variance on the panel")
    y_arr = (y_arr - y_arr.mean()) / std
    return MixedDesign(
        metric_id=metric_id,
        y=y_arr,
        machine_flag=np.asarray(flags),
        h=np.asarray(h),
        example_ids=tuple(examples),
    )


# ---------------------------------------------------------------------------
# Profiled REML fit
# ---------------------------------------------------------------------------


@dataclass
class _SufficientStats:
    """Per-group aggregates that make one criterion evaluation O(K * p^2)."""

    xtx: np.ndarray  # (p, p)
    xty: np.ndarray  # (p,)
    yty: float
    group_sizes: np.ndarray  # (K,)
    group_x_sums: np.ndarray  # (K, p)
    group_y_sums: np.ndarray  # (K,)
    n: int
    p: int


def _collect_stats(design: MixedDesign) -> _SufficientStats:
    X = np.column_stack(
        [np.ones(design.n_rows), design.machine_flag, design.h]
    )
    y = design.y
    labels = {}
    for e in design.example_ids:
        if e not in labels:
            labels[e] = len(labels)
    idx = np.asarray([labels[e] for e in design.example_ids])
    k = len(labels)
    p = X.shape[1]
    group_sizes = np.bincount(idx, minlength=k).astype(float)
    group_y_sums = np.bincount(idx, weights=y, minlength=k)
    group_x_sums = np.zeros((k, p))
    for j in range(p):
        group_x_sums[:, j] = np.bincount(idx, weights=X[:, j], minlength=k)
    return _SufficientStats(
        xtx=X.T @ X,
        xty=X.T @ y,
        yty=float(y @ y),
        group_sizes=group_sizes,
        group_x_sums=group_x_sums,
        group_y_sums=group_y_sums,
        n=design.n_rows,
        p=p,
    )


def _gls_pieces(stats: _SufficientStats, rho: float):
    """X'WX, X'Wy, y'Wy and log|C| for W = C(rho)^{-1} built per block.

    Each example block of C = I + rho * J has inverse I - (rho/(1+rho*n_k)) J,
    so every quantity reduces to rank-one corrections from group sums.
    """
    c_k = rho / (1.0 + rho * stats.group_sizes)  # (K,)
    xtwx = stats.xtx - (stats.group_x_sums * c_k[:, None]).T @ stats.group_x_sums
    xtwy = stats.xty - stats.group_x_sums.T @ (c_k * stats.group_y_sums)
    ytwy = stats.yty - float(c_k @ (stats.group_y_sums**2))
    logdet_c = float(np.log1p(rho * stats.group_sizes).sum())
    return xtwx, xtwy, ytwy, logdet_c


def _profiled_criterion(stats: _SufficientStats, rho: float) -> float:
    """REML criterion up to constants; smaller is better."""
    xtwx, xtwy, ytwy, logdet_c = _gls_pieces(stats, rho)
    sign, logdet_x = np.linalg.slogdet(xtwx)
    if sign <= 0:
        return math.inf
    beta = np.linalg.solve(xtwx, xtwy)
    rss = ytwy - float(beta @ xtwy)
    if rss <= 0:
        return math.inf
    return logdet_c + logdet_x + (stats.n - stats.p) * math.log(rss)


def _golden_section(stats: _SufficientStats) -> float:
    """Minimize the profiled criterion over log10(rho), plus the 0 boundary."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = LOG_RHO_LO, LOG_RHO_HI
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc = _profiled_criterion(stats, 10.0**c)
    fd = _profiled_criterion(stats, 10.0**d)
    for _ in range(GOLDEN_ITERATIONS):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = _profiled_criterion(stats, 10.0**c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = _profiled_criterion(stats, 10.0**d)
    log_rho = (a + b) / 2.0
    rho = 10.0**log_rho
    if _profiled_criterion(stats, 0.0) <= _profiled_criterion(stats, rho):
        return 0.0
    return rho


def profiled_fit(design: MixedDesign) -> MixedEffectsFit:
    """REML estimation of the random-intercept model for one metric."""
    if len(set(design.example_ids)) < 2:
        raise AnalysisError("mixed-effects fit needs at least 2 example groups")
    if np.all(design.machine_flag == design.machine_flag[0]):
        raise AnalysisError("machine_flag is constant; fixed effects are singular")
    stats = _collect_stats(design)
    sign, _ = np.linalg.slogdet(stats.xtx)
    if sign <= 0:
        raise AnalysisError("fixed-effects design is singular")
    rho = _golden_section(stats)
    xtwx, xtwy, ytwy, logdet_c = _gls_pieces(stats, rho)
    criterion = _profiled_criterion(stats, rho)
    if not math.isfinite(criterion):
        raise AnalysisError("REML criterion is non-finite at the optimum")
    beta = np.linalg.solve(xtwx, xtwy)
    rss = ytwy - float(beta @ xtwy)
    dof = stats.n - stats.p
    sigma_eps_sq = rss / dof
    sigma_gamma_sq = rho * sigma_eps_sq
    cov_beta = sigma_eps_sq * np.linalg.inv(xtwx)
    se_beta0 = float(math.sqrt(max(cov_beta[1, 1], 0.0)))
    beta0 = float(beta[1])
    sign_x, logdet_x = np.linalg.slogdet(xtwx)
    deviance = (
        logdet_c
        + logdet_x
        + dof * math.log(sigma_eps_sq)
        + dof * (1.0 + math.log(2.0 * math.pi))
    )
    return MixedEffectsFit(
        metric_id=design.metric_id,
        beta0=beta0,
        beta1=float(beta[2]),
        intercept=float(beta[0]),
        se_beta0=se_beta0,
        ci90=(beta0 - Z_90 * se_beta0, beta0 + Z_90 * se_beta0),
        sigma_gamma_sq=float(sigma_gamma_sq),
        sigma_eps_sq=float(sigma_eps_sq),
        reml_deviance=float(deviance),
        n_rows=stats.n,
    )


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def _ensemble_design(snapshot: Snapshot, model) -> MixedDesign:
    """Design whose y is the full-fit ensemble prediction per row.

    The prediction combines the same (possibly reference-restricted) metric
    scores used for the individual fits, with the model's stored
    standardizers.
    """
    from .ensemble import ensemble_score

    generators = snapshot.annotated_generators(include_human=True)
    per_metric: dict[str, dict[str, np.ndarray]] = {}
    for mid, _ in model.selected:
        spec = snapshot.metric(mid)
        per_metric[mid] = _restricted_scores(snapshot, spec, generators)
    kinds = {gid: snapshot.generator(gid).kind for gid in generators}
    instance_ids = snapshot.testset.instance_ids
    y = []
    flags = []
    h = []
    examples: list[str] = []
    for gid in generators:
        for k, iid in enumerate(instance_ids):
            row_scores = {mid: float(per_metric[mid][gid][k]) for mid, _ in model.selected}
            y.append(ensemble_score(model, row_scores))
            flags.append(1.0 if kinds[gid] == "machine" else 0.0)
            h.append(snapshot.judgments.score(gid, iid))
            examples.append(iid)
    y_arr = np.asarray(y)
    std = float(y_arr.std(ddof=1))
    if std == 0.0:
        raise DegenerateMetricError("ensemble predictions have zero variance on the panel")
    y_arr = (y_arr - y_arr.mean()) / std
    return MixedDesign(
        metric_id=model.signature,
        y=y_arr,
        machine_flag=np.asarray(flags),
        h=np.asarray(h),
        example_ids=tuple(examples),
    )


def overrate_report(snapshot: Snapshot, ensemble_model=None) -> list[dict]:
    """One row per metric (plus the ensemble): machine coefficient and CI.

    Per-metric failures become failure rows instead of aborting the report.
    Rows are sorted by the machine coefficient, ascending; failure rows sink
    to the end.
    """
    rows: list[dict] = []
    designs: list[tuple[str, object]] = []
    for spec in snapshot.active_metrics():
        designs.append((spec.metric_id, spec))
    for metric_id, _ in designs:
        try:
            fit = profiled_fit(build_design(snapshot, metric_id))
            rows.append(_fit_row(fit))
        except Exception as exc:  # per-row failure entry, not a global failure
            rows.append({"metric_id": metric_id, "error": str(exc)})
    if ensemble_model is not None:
        try:
            fit = profiled_fit(_ensemble_design(snapshot, ensemble_model))
            rows.append(_fit_row(fit))
        except Exception as exc:
            rows.append({"metric_id": ensemble_model.signature, "error": str(exc)})
    rows.sort(key=lambda r: (("error" in r), r.get("beta0", 0.0), r["metric_id"]))
    return rows


def _fit_row(fit: MixedEffectsFit) -> dict:
    return {
        "metric_id": fit.metric_id,
        "beta0": fit.beta0,
        "se": fit.se_beta0,
        "ci90_lo": fit.ci90[0],
        "ci90_hi": fit.ci90[1],
        "sigma_gamma_sq": fit.sigma_gamma_sq,
        "sigma_eps_sq": fit.sigma_eps_sq,
        "significance": fit.significance,
    }
