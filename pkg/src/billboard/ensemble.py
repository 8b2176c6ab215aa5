"""Sparse linear ensemble metric: l1 regression over standardized scores.

The ensemble predicts human judgment from standardized oriented metric
scores, with the regularization strength tuned by bisection so that exactly
three coefficients stay non-zero.  Its headline number is a
leave-one-generator-out cross-validated Pearson correlation that simulates
scoring a newly submitted generator with no human evaluations.  Every fitted
model is registered under a reproducibility signature.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datastore import Snapshot, _utc_now, canonical_json, write_text
from .errors import (
    AnalysisError,
    ConvergenceError,
    SignatureCollisionError,
    ValidationError,
)

CD_TOL = 1e-10
CD_MAX_SWEEPS = 10_000
TUNE_ITERATIONS = 60
DEFAULT_TARGET_SUPPORT = 3

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Regression problem assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionProblem:
    """Standardized design over (generator, instance) rows of the annotated panel."""

    design: np.ndarray  # (N, J), column mean 0, sample std 1
    target: np.ndarray  # (N,) raw human scores
    row_groups: tuple[str, ...]  # generator id per row
    metric_ids: tuple[str, ...]
    standardizers: dict[str, tuple[float, float]]  # metric -> (mean, std)

    @property
    def n_rows(self) -> int:
        return int(self.design.shape[0])

    @property
    def n_metrics(self) -> int:
        return int(self.design.shape[1])


def make_regression_problem(
    columns: dict[str, np.ndarray],
    target: np.ndarray,
    row_groups: list[str],
) -> RegressionProblem:
    """Standardize raw oriented columns, silently dropping degenerate ones."""
    metric_ids = []
    zcols = []
    standardizers = {}
    for mid in sorted(columns):
        col = np.asarray(columns[mid], dtype=float)
        mean = float(col.mean())
        std = float(col.std(ddof=1))
        if std == 0.0:
            logger.warning("excluding degenerate (zero variance) metric %r", mid)
            continue
        metric_ids.append(mid)
        zcols.append((col - mean) / std)
        standardizers[mid] = (mean, std)
    if not metric_ids:
        raise AnalysisError("all metric columns are degenerate")
    return RegressionProblem(
        design=np.column_stack(zcols),
        target=np.asarray(target, dtype=float),
        row_groups=tuple(row_groups),
        metric_ids=tuple(metric_ids),
        standardizers=standardizers,
    )


def build_problem(
    snapshot: Snapshot, exclude_generator: str | None = None
) -> RegressionProblem:
    """Assemble the annotated-panel regression problem from a snapshot."""
    if snapshot.judgments is None:
        raise AnalysisError("cannot build a regression problem without judgments")
    generators = [
        g for g in snapshot.annotated_generators() if g != exclude_generator
    ]
    if not generators:
        raise AnalysisError("no annotated generators available")
    instance_ids = snapshot.testset.instance_ids
    metric_ids = [m.metric_id for m in snapshot.active_metrics()]
    columns: dict[str, np.ndarray] = {}
    for mid in metric_ids:
        col = []
        for gid in generators:
            key = (gid, mid)
            if key not in snapshot.tensor.oriented:
                raise AnalysisError(f"metric {mid!r} lacks scores for generator {gid!r}")
            col.extend(snapshot.tensor.oriented[key])
        columns[mid] = np.asarray(col)
    target = []
    row_groups = []
    for gid in generators:
        for iid in instance_ids:
            target.append(snapshot.judgments.score(gid, iid))
            row_groups.append(gid)
    return make_regression_problem(columns, np.asarray(target), row_groups)


# ---------------------------------------------------------------------------
# Lasso via cyclic coordinate descent
# ---------------------------------------------------------------------------


def _soft_threshold(c: float, t: float) -> float:
    if c > t:
        return c - t
    if c < -t:
        return c + t
    return 0.0


def lasso_fit(
    problem: RegressionProblem,
    lam: float,
    warm: tuple[np.ndarray, float] | None = None,
) -> tuple[np.ndarray, float]:
    """Minimize SSE + lam * ||w||_1 with an unpenalized intercept.

    Cyclic coordinate descent with soft thresholding: each coordinate update
    is w_j <- S(c_j, lam/2) / (x_j'x_j) where c_j is the correlation of x_j
    with the partial residual, computed from precomputed Gram products.  The
    intercept is re-centered every sweep.  Converges when the largest
    coordinate change in a sweep falls below 1e-10; a warm start only speeds
    this up, it cannot change the minimizer.
    """
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    X = problem.design
    y = problem.target
    n, p = X.shape
    gram = X.T @ X
    col_sum = X.sum(axis=0)
    y_bar = float(y.sum()) / n
    # Same expression lambda_max uses, so thresholding is exact at the knife
    # edge instead of leaving 1-ulp weights.
    base_corr = X.T @ (y - y_bar)
    diag = np.diagonal(gram)
    if warm is None:
        w = np.zeros(p)
        intercept = y_bar
    else:
        w = warm[0].copy()
        intercept = float(warm[1])
    threshold = lam / 2.0
    max_change = math.inf
    for _ in range(CD_MAX_SWEEPS):
        max_change = 0.0
        for j in range(p):
            d_j = diag[j]
            if d_j == 0.0:
                continue
            old = w[j]
            c_j = (
                base_corr[j]
                - (intercept - y_bar) * col_sum[j]
                - (gram[j] @ w - d_j * old)
            )
            new = _soft_threshold(c_j, threshold) / d_j
            if new != old:
                w[j] = new
                change = abs(new - old)
                if change > max_change:
                    max_change = change
        new_intercept = y_bar - float(col_sum @ w) / n
        if new_intercept != intercept:
            shift = abs(new_intercept - intercept)
            intercept = new_intercept
            if shift > max_change:
                max_change = shift
        if max_change < CD_TOL:
            return w, intercept
    raise ConvergenceError(
        f"coordinate descent did not converge in {CD_MAX_SWEEPS} sweeps "
        f"(last max change {max_change:.3e})"
    )


def lasso_objective(problem: RegressionProblem, w: np.ndarray, intercept: float, lam: float) -> float:
    r = problem.target - intercept - problem.design @ w
    return float(r @ r + lam * np.abs(w).sum())


def kkt_violation(
    problem: RegressionProblem, w: np.ndarray, intercept: float, lam: float
) -> float:
    """Largest stationarity violation of the fitted solution.

    For active coordinates |2 x_j'r - lam*sign(w_j)| must vanish; for
    inactive ones |2 x_j'r| must stay below lam.
    """
    r = problem.target - intercept - problem.design @ w
    grad = 2.0 * (problem.design.T @ r)
    worst = abs(float(r.sum())) * 2.0 / max(problem.n_rows, 1)  # intercept optimality
    for j in range(problem.n_metrics):
        if w[j] != 0.0:
            worst = max(worst, abs(grad[j] - lam * np.sign(w[j])))
        else:
            worst = max(worst, max(0.0, abs(grad[j]) - lam))
    return worst


def lambda_max(problem: RegressionProblem) -> float:
    """Smallest regularization strength at which all weights are zero.

    Equals 2 * max_j |x_j'(y - ybar)|, evaluated with the same floating-point
    expression the coordinate update uses, so lasso_fit at exactly this
    lambda soft-thresholds every coordinate to zero rather than leaving
    1-ulp remainders.
    """
    X = problem.design
    y = problem.target
    ybar = float(y.sum()) / y.shape[0]
    return 2.0 * float(np.max(np.abs(X.T @ (y - ybar))))


@dataclass(frozen=True)
class TunedLambda:
    lam: float
    support: int
    inexact_support: bool


def support_size(w: np.ndarray) -> int:
    return int(np.count_nonzero(w))


def tune_lambda(
    problem: RegressionProblem, target_support: int = DEFAULT_TARGET_SUPPORT
) -> TunedLambda:
    """Bisect lambda in (0, lambda_max] toward the target support size.

    Returns the largest tested lambda with exactly the target support.  When
    supports jump over the target, falls back to the smallest tested lambda
    with support <= target and flags inexact_support.
    """
    if problem.n_metrics < target_support:
        raise AnalysisError(
            f"need at least {target_support} usable metrics, have {problem.n_metrics}"
        )
    lam_hi = lambda_max(problem)
    if lam_hi == 0.0:
        # Constant target: every lambda gives the empty support.
        return TunedLambda(lam=0.0, support=0, inexact_support=True)
    best_exact: float | None = None
    smallest_leq = lam_hi  # support at lam_max is 0 <= target
    lo, hi = 0.0, lam_hi
    warm: tuple[np.ndarray, float] | None = None
    tested: list[tuple[float, int]] = [(lam_hi, 0)]
    for _ in range(TUNE_ITERATIONS):
        mid = (lo + hi) / 2.0
        w, intercept = lasso_fit(problem, mid, warm=warm)
        warm = (w, intercept)
        s = support_size(w)
        tested.append((mid, s))
        if s == target_support and (best_exact is None or mid > best_exact):
            best_exact = mid
        if s > target_support:
            lo = mid
        else:
            hi = mid
            if mid < smallest_leq:
                smallest_leq = mid
    # Support is usually non-increasing in lambda, but correlated designs can
    # break exact path monotonicity; that is worth a log line, not an error.
    tested.sort()
    for (lam_a, s_a), (lam_b, s_b) in zip(tested, tested[1:]):
        if s_b > s_a:
            logger.debug(
                "lasso support not monotone in lambda: %d at %.6g but %d at %.6g",
                s_a, lam_a, s_b, lam_b,
            )
    if best_exact is not None:
        w, _ = lasso_fit(problem, best_exact, warm=warm)
        return TunedLambda(lam=best_exact, support=support_size(w), inexact_support=False)
    w, _ = lasso_fit(problem, smallest_leq, warm=warm)
    return TunedLambda(lam=smallest_leq, support=support_size(w), inexact_support=True)


# ---------------------------------------------------------------------------
# Ensemble model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleModel:
    selected: tuple[tuple[str, float], ...]  # (metric_id, weight), non-zero only
    intercept: float
    lam: float
    standardizers: dict[str, tuple[float, float]]
    cv_correlation: float
    signature: str
    version: int
    inexact_support: bool
    created_at: str = ""

    def to_json_dict(self) -> dict:
        return {
            "signature": self.signature,
            "board_id": self.signature.split("+", 1)[0].removeprefix("ensemble."),
            "version": self.version,
            "lambda": self.lam,
            "intercept": self.intercept,
            "weights": [
                {
                    "metric_id": mid,
                    "weight": w,
                    "mean": self.standardizers[mid][0],
                    "std": self.standardizers[mid][1],
                }
                for mid, w in self.selected
            ],
            "cv_correlation": self.cv_correlation,
            "created_at": self.created_at,
            "inexact_support": self.inexact_support,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EnsembleModel":
        return cls(
            selected=tuple((w["metric_id"], float(w["weight"])) for w in obj["weights"]),
            intercept=float(obj["intercept"]),
            lam=float(obj["lambda"]),
            standardizers={
                w["metric_id"]: (float(w["mean"]), float(w["std"])) for w in obj["weights"]
            },
            cv_correlation=float(obj["cv_correlation"]),
            signature=obj["signature"],
            version=int(obj["version"]),
            inexact_support=bool(obj["inexact_support"]),
            created_at=obj.get("created_at", ""),
        )


def make_signature(board_id: str, reference_tags: tuple[str, ...], version: int) -> str:
    return f"ensemble.{board_id}+refs.{''.join(reference_tags)}+version.{version}"


def ensemble_score(model: EnsembleModel, metric_scores: dict[str, float]) -> float:
    """Apply the fitted combination to oriented, unstandardized scores."""
    total = model.intercept
    for mid, weight in model.selected:
        if mid not in metric_scores:
            raise ValidationError(f"ensemble needs a score for metric {mid!r}")
        mean, std = model.standardizers[mid]
        total += weight * (metric_scores[mid] - mean) / std
    return float(total)


def _predict_rows(
    model_weights: dict[str, float],
    intercept: float,
    standardizers: dict[str, tuple[float, float]],
    columns: dict[str, np.ndarray],
) -> np.ndarray:
    n = len(next(iter(columns.values())))
    pred = np.full(n, intercept, dtype=float)
    for mid, w in model_weights.items():
        if w == 0.0:
            continue
        mean, std = standardizers[mid]
        pred += w * (np.asarray(columns[mid], dtype=float) - mean) / std
    return pred


def _holdout_columns(
    snapshot: Snapshot, generator_id: str, metric_ids: tuple[str, ...]
) -> dict[str, np.ndarray]:
    return {
        mid: np.asarray(snapshot.tensor.oriented[(generator_id, mid)], dtype=float)
        for mid in metric_ids
    }


def logo_cv(
    snapshot: Snapshot,
    target_support: int = DEFAULT_TARGET_SUPPORT,
    restrict_to: tuple[str, ...] | None = None,
    force_ols: bool = False,
) -> tuple[float, list[dict]]:
    """Leave-one-generator-out cross-validation of the ensemble.

    Each fold rebuilds the problem (standardizers included) from the other
    annotated generators, tunes lambda, fits, and predicts the held-out
    generator's rows; the pooled predictions yield one Pearson correlation.
    With force_ols the per-fold fit skips tuning and uses lambda = 0 on the
    restricted metric set, which is how ablations are measured.
    """
    from .stats import pearson

    generators = snapshot.annotated_generators()
    if len(generators) < 3:
        raise AnalysisError(f"LOGO CV needs >= 3 annotated generators, have {len(generators)}")
    predictions: list[np.ndarray] = []
    truths: list[np.ndarray] = []
    per_fold: list[dict] = []
    instance_ids = snapshot.testset.instance_ids
    for held_out in generators:
        problem = build_problem(snapshot, exclude_generator=held_out)
        if restrict_to is not None:
            keep = [i for i, mid in enumerate(problem.metric_ids) if mid in restrict_to]
            problem = RegressionProblem(
                design=problem.design[:, keep],
                target=problem.target,
                row_groups=problem.row_groups,
                metric_ids=tuple(problem.metric_ids[i] for i in keep),
                standardizers={problem.metric_ids[i]: problem.standardizers[problem.metric_ids[i]] for i in keep},
            )
        if force_ols:
            lam = 0.0
            inexact = False
        else:
            tuned = tune_lambda(problem, target_support)
            lam = tuned.lam
            inexact = tuned.inexact_support
        w, intercept = lasso_fit(problem, lam)
        weights = {mid: float(w[i]) for i, mid in enumerate(problem.metric_ids)}
        columns = _holdout_columns(snapshot, held_out, problem.metric_ids)
        pred = _predict_rows(weights, intercept, problem.standardizers, columns)
        truth = np.asarray(
            [snapshot.judgments.score(held_out, iid) for iid in instance_ids]
        )
        predictions.append(pred)
        truths.append(truth)
        per_fold.append(
            {
                "held_out": held_out,
                "lambda": lam,
                "support": support_size(w),
                "inexact_support": inexact,
                "n_train_rows": problem.n_rows,
            }
        )
    pooled_pred = np.concatenate(predictions)
    pooled_truth = np.concatenate(truths)
    return pearson(pooled_pred, pooled_truth), per_fold


# ---------------------------------------------------------------------------
# Registry and top-level build
# ---------------------------------------------------------------------------


class EnsembleRegistry:
    """Append-only store of fitted models keyed by signature."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, signature: str) -> Path:
        return self.directory / f"{signature}.json"

    def signatures(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def load(self, signature: str) -> EnsembleModel:
        path = self._path(signature)
        if not path.exists():
            raise AnalysisError(f"no ensemble registered under {signature!r}")
        return EnsembleModel.from_json_dict(json.loads(path.read_text(encoding="utf-8")))

    def latest(self) -> EnsembleModel | None:
        best: EnsembleModel | None = None
        for sig in self.signatures():
            model = self.load(sig)
            if best is None or model.version > best.version:
                best = model
        return best

    def save(self, model: EnsembleModel) -> None:
        path = self._path(model.signature)
        payload = canonical_json(model.to_json_dict()) + "\n"
        if path.exists():
            existing = path.read_text(encoding="utf-8")
            if existing != payload:
                raise SignatureCollisionError(
                    f"signature {model.signature!r} already registered with different content"
                )
            return
        write_text(path, payload)


def _models_equivalent(a: EnsembleModel, b: EnsembleModel) -> bool:
    """Equality of fitted content, ignoring version/signature/created_at."""
    return (
        a.selected == b.selected
        and a.intercept == b.intercept
        and a.lam == b.lam
        and a.standardizers == b.standardizers
        and a.cv_correlation == b.cv_correlation
        and a.inexact_support == b.inexact_support
    )


def build_ensemble(
    snapshot: Snapshot,
    registry: EnsembleRegistry | None = None,
    target_support: int = DEFAULT_TARGET_SUPPORT,
) -> EnsembleModel:
    """Fit on the full annotated sample and register the result.

    Rebuilding over identical board state returns the already-registered
    model unchanged; otherwise the version increments and the new model is
    persisted under a fresh signature, leaving prior signature files intact.
    """
    problem = build_problem(snapshot)
    if problem.n_metrics < target_support:
        raise AnalysisError(
            f"ensemble needs >= {target_support} non-degenerate metrics, "
            f"have {problem.n_metrics}"
        )
    cv_correlation, _ = logo_cv(snapshot, target_support)
    tuned = tune_lambda(problem, target_support)
    w, intercept = lasso_fit(problem, tuned.lam)
    order = sorted(
        (i for i in range(problem.n_metrics) if w[i] != 0.0),
        key=lambda i: (-abs(w[i]), problem.metric_ids[i]),
    )
    selected = tuple((problem.metric_ids[i], float(w[i])) for i in order)
    standardizers = {mid: problem.standardizers[mid] for mid, _ in selected}
    previous = registry.latest() if registry is not None else None
    version = 1 if previous is None else previous.version + 1
    candidate = EnsembleModel(
        selected=selected,
        intercept=float(intercept),
        lam=tuned.lam,
        standardizers=standardizers,
        cv_correlation=float(cv_correlation),
        signature=make_signature(snapshot.board_id, snapshot.config.reference_tags, version),
        version=version,
        inexact_support=tuned.inexact_support,
        created_at=_utc_now(),
    )
    if previous is not None and _models_equivalent(candidate, previous):
        return previous
    if registry is not None:
        registry.save(candidate)
    return candidate


def ablate_one(snapshot: Snapshot, model: EnsembleModel, metric_id: str) -> float:
    """LOGO CV after removing one metric from the selected set (OLS refit).

    No re-selection happens: the remaining selected metrics are refit with
    lambda = 0, so the result measures the removed metric's marginal
    contribution.  Removing a metric outside the selected set leaves the
    computation unchanged.
    """
    remaining = tuple(mid for mid, _ in model.selected if mid != metric_id)
    if not remaining:
        raise AnalysisError("cannot ablate the last selected metric")
    cv, _ = logo_cv(snapshot, restrict_to=remaining, force_ols=True)
    return cv


def ablate_ensemble(snapshot: Snapshot, model: EnsembleModel) -> list[tuple[str, float]]:
    """Drop each selected metric in turn and report the resulting CV correlation."""
    if len(model.selected) < 2:
        raise AnalysisError("ablation needs at least 2 selected metrics")
    return [(mid, ablate_one(snapshot, model, mid)) for mid, _ in model.selected]
